"""Memory-based pixel-vector classification and angular symmetry analysis."""

from .amf import (
    ActivationMap,
    MemoryRecord,
    PixelVector,
    centered_coords,
    energy_map,
    load_activation_map,
    load_manifest,
    pixel_vectors,
    pool_descriptor,
    save_activation_map,
    write_manifest,
)
from .ann import IndexConfig, RPForest, VectorKey, brute_force_knn
from .classifier import (
    ClassifierConfig,
    LikelihoodTable,
    MemoryBank,
    adaptive_bandwidth,
    classify,
    evaluate,
    image_likelihood,
    kernel_similarity,
)
from .errors import DataFormatError, DivergenceError
from .symmetry import (
    AngularStats,
    MatchPoint,
    aggregate_energy,
    circular_stats,
    conditional_match_distribution,
    energy_centroid,
    match_angular_stats,
    match_locations,
    radial_tangential_variance,
)
from .trainer import (
    LabelConfig,
    ToyNet,
    TrainConfig,
    U1Label,
    cosine_lr,
    gen_labels,
    train,
)

__version__ = "0.1.0"
