"""Shared fixtures: synthetic datasets with known angular structure."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from u1mem.amf import ActivationMap, MemoryRecord


@dataclass
class LobeDataset:
    """Synthetic activation maps whose energy lobe points at a per-class angle.

    Class c's direction in channel space is a disjoint 12-channel block; the
    spatial amplitude is a Gaussian bump centered at radius `rho` along the
    class angle.  Most images are nearly clean; the last `n_noisy` per class
    carry heavy noise so that cross-class matches exist at small K.
    """

    items: list[tuple[MemoryRecord, ActivationMap]]
    theta_deg: list[float]
    n_classes: int
    n_images: int
    height: int
    width: int
    channels: int

    def queries(self):
        return [(amap, rec.image_id, rec.class_id) for rec, amap in self.items]


def make_lobe_dataset(n_classes=5, n_images=40, height=7, width=7, channels=64,
                      rho=2.0, base_amp=1.0, lobe_amp=3.0, lobe_sigma=1.1,
                      noise_clean=0.05, noise_heavy=0.6, n_noisy=4,
                      seed=20240601, split="memory", id_prefix="") -> LobeDataset:
    rng = np.random.default_rng(seed)
    block = channels // n_classes
    theta_deg = [90.0 + (360.0 / n_classes) * c for c in range(n_classes)]
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    x = cols - (width - 1) / 2.0
    y = (height - 1) / 2.0 - rows
    items = []
    for c in range(n_classes):
        u = np.zeros(channels)
        u[c * block:(c + 1) * block] = 1.0
        u /= np.linalg.norm(u)
        theta = np.deg2rad(theta_deg[c])
        mu = rho * np.array([np.cos(theta), np.sin(theta)])
        amp = base_amp + lobe_amp * np.exp(
            -((x - mu[0]) ** 2 + (y - mu[1]) ** 2) / (2.0 * lobe_sigma ** 2))
        for i in range(n_images):
            noise = noise_heavy if i >= n_images - n_noisy else noise_clean
            values = amp[..., None] * u + noise * rng.standard_normal(
                (height, width, channels))
            image_id = f"{id_prefix}c{c}i{i:03d}"
            rec = MemoryRecord(image_id=image_id, class_id=c,
                               class_name=f"class{c}", split=split,
                               path=Path(f"{image_id}.amf"))
            items.append((rec, ActivationMap(values.astype(np.float32))))
    return LobeDataset(items=items, theta_deg=theta_deg, n_classes=n_classes,
                       n_images=n_images, height=height, width=width,
                       channels=channels)


@pytest.fixture(scope="session")
def small_lobe() -> LobeDataset:
    """Fast variant for module tests."""
    return make_lobe_dataset(n_classes=3, n_images=10, channels=24,
                             n_noisy=2, seed=7)


@pytest.fixture(scope="session")
def lobe_benchmark() -> LobeDataset:
    """Full benchmark configuration used by the acceptance suite."""
    return make_lobe_dataset()


def random_bank_data(n_vectors=200, n_classes=5, dim=16, seed=0):
    """Unstructured labeled vectors, rounded to the float32 storage grid."""
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n_vectors, dim)).astype(np.float32)
    class_ids = rng.integers(0, n_classes, n_vectors)
    return vectors.astype(np.float64), class_ids


def items_from_vectors(vectors, class_ids, prefix="m", split="memory"):
    """Wrap labeled vectors as single-pixel maps with per-vector image ids."""
    items = []
    for i, (v, c) in enumerate(zip(np.asarray(vectors), class_ids)):
        rec = MemoryRecord(image_id=f"{prefix}{i:05d}", class_id=int(c),
                           class_name=f"class{int(c)}", split=split,
                           path=Path(f"{prefix}{i:05d}.amf"))
        amap = ActivationMap(np.asarray(v, dtype=np.float32).reshape(1, 1, -1))
        items.append((rec, amap))
    return items


def write_dataset(directory: Path, *datasets) -> Path:
    """Write AMF files plus one manifest for the given datasets."""
    from u1mem.amf import save_activation_map, write_manifest

    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for ds in datasets:
        for rec, amap in ds.items:
            save_activation_map(directory / rec.path.name, amap)
            records.append(MemoryRecord(rec.image_id, rec.class_id,
                                        rec.class_name, rec.split,
                                        Path(rec.path.name)))
    manifest = directory / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest


@pytest.fixture(scope="session")
def lobe_on_disk(tmp_path_factory):
    """Small lobe dataset written as AMF + manifest: memory and query splits."""
    directory = tmp_path_factory.mktemp("lobe_data")
    memory = make_lobe_dataset(n_classes=3, n_images=8, channels=24,
                               n_noisy=2, seed=7, split="memory")
    queries = make_lobe_dataset(n_classes=3, n_images=2, channels=24,
                                n_noisy=0, seed=8, split="query", id_prefix="q_")
    manifest = write_dataset(directory, memory, queries)
    return manifest, memory, queries
