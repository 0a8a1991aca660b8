"""Angular structure of energy maps and nearest-neighbor match locations.

Quantifies two effects: concentration of activation energy about the grid
center (radial profile + per-bin angular asymmetry), and the class-specific
angular bias of match locations (circular mean, resultant length, Rayleigh
statistic, radial vs tangential displacement variance).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .amf import ActivationMap, centered_grid, energy_map, pixel_matrix
from .classifier import ClassifierConfig, MemoryBank

log = logging.getLogger(__name__)

PAIRINGS = ("same_class", "cross_class", "all")
_R_UNDEFINED = 1e-12  # resultant lengths below this leave the mean angle undefined
N_SECTORS = 8


@dataclass(frozen=True)
class MatchPoint:
    """One query-pixel-to-memory-pixel match in centered coordinates."""

    query_image_id: str
    query_class_id: int
    x_i: float
    y_i: float
    x_nn: float
    y_nn: float
    match_class_id: int
    same_class: bool
    weight: float


@dataclass(frozen=True)
class AngularStats:
    n: int
    n_origin: int
    theta_mean: float  # radians in (-pi, pi]; nan when undefined
    r: float
    circular_variance: float
    rayleigh_z: float
    defined: bool


@dataclass(frozen=True)
class RadialProfile:
    edges: np.ndarray        # n_bins + 1 radii covering [0, r_max]
    mean_energy: np.ndarray  # per-bin mean cell energy (nan when bin empty)
    asymmetry: np.ndarray    # per-bin max sector deviation / bin mean
    counts: np.ndarray       # cells per bin


@dataclass(frozen=True)
class ConditionalHistogram:
    query_loc: tuple[float, float]
    counts: np.ndarray  # H x W, normalized to sum 1 when n > 0
    n: int


@dataclass(frozen=True)
class RadialTangentialVariance:
    radial: float
    tangential: float
    n: int
    n_origin_queries: int  # queries at the exact origin, excluded


def aggregate_energy(maps: Sequence[ActivationMap],
                     n_bins: int = 8) -> tuple[np.ndarray, RadialProfile]:
    """Cellwise mean energy over maps plus its radial profile.

    Cells bin by distance from the grid center; within each bin the
    asymmetry score is the largest deviation of any occupied 45-degree
    sector mean from the bin mean, relative to the bin mean.
    """
    if not maps:
        raise ValueError("no maps supplied")
    h, w = maps[0].height, maps[0].width
    for m in maps:
        if (m.height, m.width) != (h, w):
            raise ValueError("maps must share spatial shape")
    mean = np.zeros((h, w), dtype=np.float64)
    for m in maps:
        mean += energy_map(m)
    mean /= len(maps)

    x, y = centered_grid(h, w)
    radius = np.hypot(x, y)
    theta = np.arctan2(y, x)
    sector = np.floor(np.mod(theta, 2 * np.pi) / (2 * np.pi / N_SECTORS)).astype(int)
    sector = np.clip(sector, 0, N_SECTORS - 1)
    r_max = float(radius.max())
    edges = np.linspace(0.0, r_max, n_bins + 1)
    which = np.clip(np.searchsorted(edges, radius, side="right") - 1, 0, n_bins - 1)

    counts = np.zeros(n_bins, dtype=np.int64)
    bin_mean = np.full(n_bins, np.nan)
    asym = np.full(n_bins, np.nan)
    for b in range(n_bins):
        mask = which == b
        counts[b] = int(mask.sum())
        if not counts[b]:
            continue
        cells = mean[mask]
        mu = float(cells.mean())
        bin_mean[b] = mu
        dev = 0.0
        for s in range(N_SECTORS):
            sm = mask & (sector == s)
            if sm.any():
                dev = max(dev, abs(float(mean[sm].mean()) - mu))
        asym[b] = dev / (mu + 1e-12)
    return mean, RadialProfile(edges=edges, mean_energy=bin_mean,
                               asymmetry=asym, counts=counts)


def energy_centroid(energy: np.ndarray) -> tuple[float, float]:
    """Energy-weighted mean (x, y) of a non-negative H x W grid."""
    h, w = energy.shape
    x, y = centered_grid(h, w)
    total = float(energy.sum())
    if total == 0.0:
        raise ValueError("zero-energy grid has no centroid")
    return float((energy * x).sum() / total), float((energy * y).sum() / total)


def match_locations(queries: Iterable[tuple[ActivationMap, str, int]],
                    bank: MemoryBank,
                    config: ClassifierConfig | None = None,
                    pairing: str = "same_class",
                    exact: bool = False,
                    search_budget: int | None = None) -> list[MatchPoint]:
    """All K-NN matches of every query pixel, filtered by class pairing.

    Each query is (map, image_id, class_id).  Kernel weights reuse the
    classifier's adaptive bandwidth from the same retrieval pass.  An empty
    result after filtering is reported, not raised.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}")
    out: list[MatchPoint] = []
    config = config or bank.config
    bank_h, bank_w = bank_grid_shape(bank)
    bx, by = centered_grid(bank_h, bank_w)
    for amap, image_id, class_id in queries:
        exclude = image_id if config.exclude_same_image else None
        qmat = pixel_matrix(amap, config.normalize_vectors)
        h, w = amap.height, amap.width
        x, y = centered_grid(h, w)
        for idx in range(qmat.shape[0]):
            r, c = divmod(idx, w)
            hits = bank.knn(qmat[idx], config.k, exclude_image=exclude,
                            exact=exact, search_budget=search_budget)
            if not hits:
                continue
            alpha = hits[0][1]
            denom = alpha * alpha + config.epsilon
            for key, d in hits:
                same = key.class_id == class_id
                if pairing == "same_class" and not same:
                    continue
                if pairing == "cross_class" and same:
                    continue
                out.append(MatchPoint(
                    query_image_id=image_id,
                    query_class_id=class_id,
                    x_i=float(x[r, c]),
                    y_i=float(y[r, c]),
                    x_nn=float(bx[key.row, key.col]),
                    y_nn=float(by[key.row, key.col]),
                    match_class_id=key.class_id,
                    same_class=same,
                    weight=math.exp(-(d * d) / denom),
                ))
    if not out:
        log.warning("pairing %r eliminated every match", pairing)
    return out


def bank_grid_shape(bank: MemoryBank) -> tuple[int, int]:
    rows = max(k.row for k in bank.keys) + 1
    cols = max(k.col for k in bank.keys) + 1
    return rows, cols


def circular_stats(points, weights=None) -> AngularStats:
    """Circular mean and resultant length of point directions about the origin.

    Points exactly at the origin have no direction; they are excluded and
    counted in n_origin.  theta_mean is flagged undefined when no points
    remain or the resultant length vanishes.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    at_origin = (pts[:, 0] == 0.0) & (pts[:, 1] == 0.0)
    n_origin = int(at_origin.sum())
    pts = pts[~at_origin]
    if weights is None:
        w = np.ones(len(pts))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)[~at_origin]
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
    n = len(pts)
    if n == 0 or w.sum() == 0.0:
        return AngularStats(n=n, n_origin=n_origin, theta_mean=float("nan"),
                            r=0.0, circular_variance=1.0, rayleigh_z=0.0,
                            defined=False)
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    total = w.sum()
    cbar = float((w * np.cos(theta)).sum() / total)
    sbar = float((w * np.sin(theta)).sum() / total)
    r = math.hypot(cbar, sbar)
    defined = r >= _R_UNDEFINED
    theta_mean = math.atan2(sbar, cbar) if defined else float("nan")
    return AngularStats(n=n, n_origin=n_origin, theta_mean=theta_mean, r=r,
                        circular_variance=1.0 - r, rayleigh_z=n * r * r,
                        defined=defined)


def match_angular_stats(matches: Sequence[MatchPoint],
                        weighting: str = "uniform") -> AngularStats:
    """Circular statistics of match locations, optionally kernel-weighted."""
    if weighting not in ("uniform", "kernel"):
        raise ValueError("weighting must be 'uniform' or 'kernel'")
    pts = [(m.x_nn, m.y_nn) for m in matches]
    weights = [m.weight for m in matches] if weighting == "kernel" else None
    if not pts:
        return AngularStats(n=0, n_origin=0, theta_mean=float("nan"), r=0.0,
                            circular_variance=1.0, rayleigh_z=0.0, defined=False)
    return circular_stats(pts, weights)


def conditional_match_distribution(matches: Sequence[MatchPoint],
                                   query_loc: tuple[float, float],
                                   grid_shape: tuple[int, int]) -> ConditionalHistogram:
    """Normalized H x W histogram of match locations for one query location."""
    h, w = grid_shape
    counts = np.zeros((h, w), dtype=np.float64)
    n = 0
    qx, qy = query_loc
    for m in matches:
        if m.x_i != qx or m.y_i != qy:
            continue
        row = int(round((h - 1) / 2.0 - m.y_nn))
        col = int(round(m.x_nn + (w - 1) / 2.0))
        counts[row, col] += 1.0
        n += 1
    if n == 0:
        log.warning("no matches at query location (%s, %s)", qx, qy)
        return ConditionalHistogram(query_loc=query_loc, counts=counts, n=0)
    return ConditionalHistogram(query_loc=query_loc, counts=counts / n, n=n)


def radial_tangential_variance(matches: Sequence[MatchPoint]) -> RadialTangentialVariance:
    """Variance of match displacements along and across the query direction.

    The displacement x_nn - x_i projects onto the radial unit vector
    x_i / |x_i| and its 90-degree rotation.  Queries at the origin have no
    radial direction and are excluded with a count.
    """
    rad, tan = [], []
    n_origin = 0
    for m in matches:
        norm = math.hypot(m.x_i, m.y_i)
        if norm == 0.0:
            n_origin += 1
            continue
        ux, uy = m.x_i / norm, m.y_i / norm
        dx, dy = m.x_nn - m.x_i, m.y_nn - m.y_i
        rad.append(dx * ux + dy * uy)
        tan.append(dx * -uy + dy * ux)
    if not rad:
        return RadialTangentialVariance(radial=float("nan"), tangential=float("nan"),
                                        n=0, n_origin_queries=n_origin)
    return RadialTangentialVariance(
        radial=float(np.var(rad)),
        tangential=float(np.var(tan)),
        n=len(rad),
        n_origin_queries=n_origin,
    )


def per_class_angular_report(matches: Sequence[MatchPoint],
                             weighting: str = "uniform") -> list[dict]:
    """One row per query class: angular stats plus displacement variances."""
    by_class: dict[int, list[MatchPoint]] = {}
    for m in matches:
        by_class.setdefault(m.query_class_id, []).append(m)
    rows = []
    for class_id in sorted(by_class):
        group = by_class[class_id]
        stats = match_angular_stats(group, weighting=weighting)
        rt = radial_tangential_variance(group)
        rows.append({
            "class_id": class_id,
            "n": stats.n,
            "n_origin": stats.n_origin,
            "theta_mean_deg": math.degrees(stats.theta_mean) if stats.defined else float("nan"),
            "resultant_length": stats.r,
            "rayleigh_z": stats.rayleigh_z,
            "var_radial": rt.radial,
            "var_tangential": rt.tangential,
        })
    return rows


def confusion_radius(matches: Sequence[MatchPoint], mass: float = 0.68) -> float:
    """Smallest radius about the origin containing the given match mass.

    An artifact-defined proxy for the size of the central match cluster.
    """
    if not matches:
        raise ValueError("no matches")
    radii = np.sort([math.hypot(m.x_nn, m.y_nn) for m in matches])
    idx = min(len(radii) - 1, int(math.ceil(mass * len(radii))) - 1)
    return float(radii[max(idx, 0)])
