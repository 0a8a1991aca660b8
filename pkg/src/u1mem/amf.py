"""Activation map data model, AMF binary format and descriptor extraction.

An activation map is an H x W x C grid of channel activations exported from
one image at one network layer.  Maps travel between tools as AMF files
(see `save_activation_map` for the exact byte layout) and are listed in
JSONL manifests, one record per image.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError

AMF_MAGIC = b"U1AM"
AMF_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB3x")  # magic, version, H, W, C, nonneg, pad

SPLITS = ("train", "memory", "query", "test")


@dataclass(frozen=True)
class ActivationMap:
    """Immutable H x W x C activation grid for one image at one layer.

    `values` is float32, C-contiguous, finite everywhere.  `nonneg` is an
    assertion by the producer that the exporting layer was post-rectification;
    it is verified when set but never inferred from the data.
    """

    values: np.ndarray
    nonneg: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise DataFormatError(f"activation map must be 3-d, got shape {v.shape}")
        if min(v.shape) < 1:
            raise DataFormatError(f"dimension zero in activation map shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataFormatError("non-finite value in activation map")
        if self.nonneg and v.size and float(v.min()) < 0.0:
            raise DataFormatError("nonneg flag set but map contains negative values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class MemoryRecord:
    """One manifest line: where an image's activation map lives and its label."""

    image_id: str
    class_id: int
    class_name: str
    split: str
    path: Path


@dataclass(frozen=True)
class PixelVector:
    """The length-C channel vector at one spatial location of a map."""

    image_id: str
    row: int
    col: int
    centered: tuple[float, float]
    v: np.ndarray
    class_id: int


def save_activation_map(path, amap: ActivationMap) -> None:
    """Write an AMF file.

    Layout: magic "U1AM", version u32, H u32, W u32, C u32, nonneg u8,
    3 reserved bytes, then H*W*C float32 little-endian in row-major
    (row, col, channel) order.
    """
    header = _HEADER.pack(
        AMF_MAGIC, AMF_VERSION, amap.height, amap.width, amap.channels,
        1 if amap.nonneg else 0,
    )
    payload = np.asarray(amap.values, dtype="<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_activation_map(path) -> ActivationMap:
    """Read and validate an AMF file written by `save_activation_map`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, h, w, c, nonneg = _HEADER.unpack_from(raw)
    if magic != AMF_MAGIC:
        raise DataFormatError(f"{path}: bad magic bytes {magic!r}")
    if version != AMF_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if min(h, w, c) < 1:
        raise DataFormatError(f"{path}: dimension zero in header ({h}, {w}, {c})")
    expected = h * w * c * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    try:
        return ActivationMap(values=values, nonneg=bool(nonneg))
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def energy_map(amap: ActivationMap) -> np.ndarray:
    """Per-pixel squared channel-vector norm, an H x W float64 grid."""
    v = amap.values.astype(np.float64)
    return np.einsum("hwc,hwc->hw", v, v)


def centered_coords(row: int, col: int, height: int, width: int) -> tuple[float, float]:
    """Map grid indices to image-plane coordinates.

    Origin at the grid center, x to the right, y up:
    x = col - (W-1)/2, y = (H-1)/2 - row.
    """
    return col - (width - 1) / 2.0, (height - 1) / 2.0 - row


def centered_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """(x, y) coordinate grids of shape H x W under the centered convention."""
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    x = np.broadcast_to(cols - (width - 1) / 2.0, (height, width)).astype(np.float64)
    y = np.broadcast_to((height - 1) / 2.0 - rows, (height, width)).astype(np.float64)
    return x, y


def pixel_matrix(amap: ActivationMap, normalize: bool) -> np.ndarray:
    """All pixel vectors as an (H*W, C) float64 matrix in raster order."""
    m = amap.values.reshape(-1, amap.channels).astype(np.float64)
    if normalize:
        norms = np.linalg.norm(m, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.argmax(norms == 0.0))
            raise ValueError(
                f"cannot normalize zero pixel vector at raster index {bad}"
            )
        m = m / norms[:, None]
    return m


def pixel_vectors(
    amap: ActivationMap,
    normalize: bool = False,
    image_id: str = "",
    class_id: int = -1,
) -> list[PixelVector]:
    """Explode a map into its H*W per-pixel vectors (raster order)."""
    h, w = amap.height, amap.width
    m = pixel_matrix(amap, normalize)
    out = []
    for idx in range(h * w):
        r, c = divmod(idx, w)
        out.append(
            PixelVector(
                image_id=image_id,
                row=r,
                col=c,
                centered=centered_coords(r, c, h, w),
                v=m[idx],
                class_id=class_id,
            )
        )
    return out


def pool_descriptor(amap: ActivationMap, mode: str) -> np.ndarray:
    """Pooled whole-image descriptor: per-channel avg or max, or a flat copy."""
    v = amap.values.astype(np.float64)
    if mode == "avg":
        return v.mean(axis=(0, 1))
    if mode == "max":
        return v.max(axis=(0, 1))
    if mode == "flatten":
        return v.reshape(-1).copy()
    raise ValueError(f"unknown pooling mode {mode!r}")


def write_manifest(path, records: Iterable[MemoryRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "path": str(rec.path),
                "image_id": rec.image_id,
                "class_id": rec.class_id,
                "class_name": rec.class_name,
                "split": rec.split,
            }) + "\n")


def load_manifest(path) -> list[MemoryRecord]:
    """Parse a JSONL manifest; relative AMF paths resolve against its directory.

    Rejects duplicate image ids and class_id/class_name inconsistencies.
    """
    base = Path(path).parent
    records: list[MemoryRecord] = []
    seen_ids: set[str] = set()
    class_names: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            try:
                rec = MemoryRecord(
                    image_id=str(obj["image_id"]),
                    class_id=int(obj["class_id"]),
                    class_name=str(obj["class_name"]),
                    split=str(obj["split"]),
                    path=Path(obj["path"]),
                )
            except KeyError as exc:
                raise DataFormatError(f"{path}:{lineno}: missing key {exc}") from None
            if rec.split not in SPLITS:
                raise DataFormatError(f"{path}:{lineno}: unknown split {rec.split!r}")
            if rec.image_id in seen_ids:
                raise DataFormatError(f"{path}:{lineno}: duplicate image_id {rec.image_id!r}")
            seen_ids.add(rec.image_id)
            known = class_names.setdefault(rec.class_id, rec.class_name)
            if known != rec.class_name:
                raise DataFormatError(
                    f"{path}:{lineno}: class_id {rec.class_id} maps to both "
                    f"{known!r} and {rec.class_name!r}"
                )
            if not rec.path.is_absolute():
                rec = MemoryRecord(rec.image_id, rec.class_id, rec.class_name,
                                   rec.split, base / rec.path)
            records.append(rec)
    return records


def select_split(records: Sequence[MemoryRecord], split: str | None) -> list[MemoryRecord]:
    if split is None or split == "all":
        return list(records)
    return [r for r in records if r.split == split]
