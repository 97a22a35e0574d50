"""Band-sequential raster files and stratified training-sample draws.

A raster on disk is a pair of files sharing a stem:

``<name>.hdr``
    ``key=value`` text lines. Required keys are ``width``, ``height``,
    ``bands``, ``dtype`` and ``layout``. Extra keys are preserved in
    :attr:`Raster.meta`.
``<name>.bsq``
    Raw samples, band after band, each band stored row-major.

Every integer raster is ``dtype=u8``. Label-vector planes use ``dtype=f8`` (little-endian float64).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

UNLABELED = 255

_DTYPES = {"u8": np.dtype(np.uint8), "f8": np.dtype("<f8")}


class RasterFormatError(ValueError):
    """Header and data disagree, or the header is unusable."""


@dataclass(frozen=True)
class Raster:
    """A ``(bands, height, width)`` grid of samples."""

    data: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"raster data must be 3-D (bands, height, width), got shape {self.data.shape}")
        self.data.setflags(write=False)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """Feature vectors as a float ``(height*width, bands)`` array, row-major over pixels."""
        return self.data.reshape(self.bands, -1).T.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.data.dtype == other.data.dtype and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class GroundTruth:
    """Per-pixel class indices; :data:`UNLABELED` marks pixels without truth."""

    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError("ground truth must be 2-D")
        if self.labels.dtype != np.uint8:
            object.__setattr__(self, "labels", self.labels.astype(np.uint8))
        bad = (self.labels != UNLABELED) & (self.labels >= self.class_count)
        if bad.any():
            raise ValueError(f"label {int(self.labels[bad][0])} out of range for {self.class_count} classes")
        self.labels.setflags(write=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class TrainingSet:
    """Feature matrix ``(n, p)`` with matching integer labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[LabeledSample]:
        for x, y in zip(self.features, self.labels):
            yield LabeledSample(x, int(y))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".hdr", ".bsq"):
        p = p.with_suffix("")
    return p.with_suffix(".hdr"), p.with_suffix(".bsq")


def _read_header(hdr: Path) -> dict:
    meta = {}
    for lineno, line in enumerate(hdr.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RasterFormatError(f"{hdr}:{lineno}: expected key=value")
        meta[key.strip()] = value.strip()
    for key in ("width", "height", "bands", "dtype", "layout"):
        if key not in meta:
            raise RasterFormatError(f"{hdr}: missing header key {key!r}")
    if meta["layout"] != "bsq":
        raise RasterFormatError(f"{hdr}: unsupported layout {meta['layout']!r}")
    if meta["dtype"] not in _DTYPES:
        raise RasterFormatError(f"{hdr}: unsupported dtype {meta['dtype']!r}")
    return meta


def read_raster(path) -> Raster:
    """Read ``<path>.hdr`` + ``<path>.bsq``.

    ``path`` may name either file or the common stem.
    """
    hdr, bsq = _paths(path)
    if not hdr.exists():
        raise FileNotFoundError(hdr)
    if not bsq.exists():
        raise FileNotFoundError(bsq)
    meta = _read_header(hdr)
    try:
        width, height, bands = int(meta["width"]), int(meta["height"]), int(meta["bands"])
    except ValueError as exc:
        raise RasterFormatError(f"{hdr}: non-integer dimension") from exc
    if min(width, height, bands) < 1:
        raise RasterFormatError(f"{hdr}: dimensions must be positive")
    dtype = _DTYPES[meta["dtype"]]
    expected = width * height * bands * dtype.itemsize
    actual = bsq.stat().st_size
    if actual != expected:
        raise RasterFormatError(
            f"{bsq}: size {actual} bytes does not match header ({width}x{height}x{bands} {meta['dtype']} = {expected})"
        )
    data = np.fromfile(bsq, dtype=dtype).reshape(bands, height, width)
    extra = {k: v for k, v in meta.items() if k not in ("width", "height", "bands", "dtype", "layout")}
    return Raster(data.astype(dtype.newbyteorder("=")), extra)


def write_raster(path, raster: Raster | np.ndarray, **extra) -> None:
    """Write a raster pair. ``extra`` keys are appended to the header."""
    data = raster.data if isinstance(raster, Raster) else np.asarray(raster)
    if data.ndim == 2:
        data = data[np.newaxis]
    if data.dtype == np.uint8:
        code = "u8"
    elif data.dtype.kind == "f":
        code = "f8"
        data = data.astype("<f8")
    else:
        raise RasterFormatError(f"unsupported dtype {data.dtype}")
    hdr, bsq = _paths(path)
    hdr.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(raster.meta) if isinstance(raster, Raster) else {}
    meta.update({k: str(v) for k, v in extra.items()})
    lines = [
        f"width={data.shape[2]}",
        f"height={data.shape[1]}",
        f"bands={data.shape[0]}",
        f"dtype={code}",
        "layout=bsq",
    ]
    lines += [f"{k}={v}" for k, v in sorted(meta.items())]
    hdr.write_text("\n".join(lines) + "\n")
    with open(bsq, "wb") as fh:
        fh.write(np.ascontiguousarray(data).tobytes())


def read_ground_truth(path, class_count: int | None = None) -> GroundTruth:
    """Read a 1-band u8 raster as ground truth.

    The class count comes from the ``classes`` header key unless given.
    """
    raster = read_raster(path)
    if raster.bands != 1 or raster.data.dtype != np.uint8:
        raise RasterFormatError(f"{path}: ground truth must be a 1-band u8 raster")
    labels = raster.data[0]
    if class_count is None:
        if "classes" in raster.meta:
            class_count = int(raster.meta["classes"])
        else:
            present = labels[labels != UNLABELED]
            class_count = int(present.max()) + 1 if present.size else 0
    return GroundTruth(labels.copy(), class_count)


def write_ground_truth(path, truth: GroundTruth) -> None:
    write_raster(path, truth.labels, classes=truth.class_count)


def sample_training_set(raster: Raster, truth: GroundTruth, per_class: int, seed: int) -> TrainingSet:
    """Draw up to ``per_class`` labeled pixels from every class, without replacement.

    Uses numpy's PCG64 generator seeded with ``seed``. Classes are visited in
    ascending order; for each class the raster-order list of its pixels is
    shuffled with ``rng.permutation`` and the first ``per_class`` entries are
    kept. A class with fewer pixels contributes all of them and a warning is
    logged. A class with no labeled pixel at all is an error.
    """
    if (raster.height, raster.width) != (truth.height, truth.width):
        raise ValueError("raster and ground truth dimensions differ")
    if per_class < 0:
        raise ValueError("per_class must be non-negative")
    flat = truth.labels.reshape(-1)
    rng = np.random.default_rng(seed)
    chosen = []
    for k in range(truth.class_count):
        idx = np.flatnonzero(flat == k)
        if idx.size == 0:
            raise ValueError(f"class {k} has no labeled pixels")
        if idx.size < per_class:
            log.warning("class %d has only %d labeled pixels (< %d requested)", k, idx.size, per_class)
        chosen.append(rng.permutation(idx)[:per_class])
    idx = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.intp)
    features = raster.pixels()[idx] if idx.size else np.empty((0, raster.bands))
    return TrainingSet(features, flat[idx].astype(np.intp), truth.class_count)


def mask_sentinel(truth: GroundTruth, mask: np.ndarray) -> GroundTruth:
    """Return a copy of ``truth`` with pixels under ``mask`` set to unlabeled.

    Covers defective rows/columns (e.g. zero-valued sensor edges) that must
    be excluded from training and evaluation.
    """
    labels = truth.labels.copy()
    labels[np.asarray(mask, dtype=bool)] = UNLABELED
    return GroundTruth(labels, truth.class_count)


def file_exists(path) -> bool:
    hdr, bsq = _paths(path)
    return os.path.exists(hdr) and os.path.exists(bsq)
