"""Synthetic multispectral scenes and whole-image evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .context import OUTLIER_CODE, ContextConfig, Method, classify_noncontextual_plane, classify_plane, label_plane
from .raster_io import UNLABELED, GroundTruth, Raster
from .rulebase import OUTLIER, Rulebase

PRESETS = ("patches-large", "patches-small")


class Layout(str, Enum):
    LARGE = "largePatches"
    FRAGMENTED = "fragmentedPatches"


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a synthetic scene.

    Class regions are Voronoi cells roughly ``patch_scale`` pixels across.
    ``largePatches`` seeds the cells on a jittered grid with uniform class
    draws; ``fragmentedPatches`` scatters seeds uniformly and draws classes
    with ``class_weights``. A pixel's value in band ``b`` is
    ``mean[k, b] + sd[k, b] * z1 + noise_sd * z2`` (standard normals),
    clipped to ``[0, 255]`` and rounded. ``z2`` is white; ``z1`` is white
    when ``texture_sigma`` is 0, otherwise a Gaussian-smoothed field with
    that spatial sigma (in pixels), rescaled to unit variance, so that
    within-class variation forms small spatially coherent blobs.
    """

    width: int
    height: int
    class_means: list
    class_sds: list
    layout: Layout = Layout.LARGE
    patch_scale: float = 32.0
    noise_sd: float = 0.0
    class_weights: list | None = None
    texture_sigma: float = 0.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        sds = np.asarray(self.class_sds, dtype=np.float64)
        object.__setattr__(self, "layout", Layout(self.layout))
        if means.ndim != 2 or means.shape != sds.shape:
            raise ValueError("class_means and class_sds must both be (classes, bands)")
        if (means < 0).any() or (means > 255).any():
            raise ValueError("class means must lie in [0, 255]")
        if (sds < 0).any() or self.noise_sd < 0 or self.texture_sigma < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.patch_scale < 1:
            raise ValueError("patch_scale must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        if self.class_weights is not None and len(self.class_weights) != len(means):
            raise ValueError("one weight per class required")

    @property
    def class_count(self) -> int:
        return len(self.class_means)

    @property
    def bands(self) -> int:
        return len(self.class_means[0])

    def with_seed(self, seed: int) -> "SceneSpec":
        return SceneSpec(**{**self.to_dict(), "seed": seed})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layout"] = self.layout.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_preset(name: str, seed: int | None = None) -> SceneSpec:
    """One of the bundled scene specs (see :data:`PRESETS`)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("fuzzyevidence").joinpath("presets", f"{name}.json").read_text()
    spec = SceneSpec.from_dict(json.loads(text))
    return spec if seed is None else spec.with_seed(seed)


def _voronoi_labels(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    H, W, c = spec.height, spec.width, spec.class_count
    s = spec.patch_scale
    if spec.layout is Layout.LARGE:
        gy = np.arange(0, H, s)
        gx = np.arange(0, W, s)
        yy, xx = np.meshgrid(gy, gx, indexing="ij")
        seeds = np.column_stack([yy.ravel(), xx.ravel()]) + rng.uniform(0, s, size=(yy.size, 2))
        weights = None
    else:
        n = max(c, int(round(H * W / (s * s))))
        seeds = rng.uniform(0, 1, size=(n, 2)) * [H, W]
        weights = None if spec.class_weights is None else np.asarray(spec.class_weights, dtype=np.float64)
        if weights is not None:
            weights = weights / weights.sum()
    classes = rng.choice(c, size=len(seeds), p=weights)
    # every class owns at least one cell
    if len(seeds) >= c:
        slots = rng.choice(len(seeds), size=c, replace=False)
        classes[slots] = rng.permutation(c)
    yy, xx = np.mgrid[0:H, 0:W]
    pix = np.column_stack([yy.ravel(), xx.ravel()]) + 0.5
    _, nearest = cKDTree(seeds).query(pix)
    return classes[nearest].reshape(H, W)


def generate_scene(spec: SceneSpec) -> tuple[Raster, GroundTruth]:
    """Deterministic raster and ground truth for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    labels = _voronoi_labels(spec, rng)
    means = np.asarray(spec.class_means, dtype=np.float64)
    sds = np.asarray(spec.class_sds, dtype=np.float64)
    H, W = labels.shape
    z1 = rng.standard_normal((H, W, spec.bands))
    if spec.texture_sigma > 0:
        z1 = gaussian_filter(z1, sigma=(spec.texture_sigma, spec.texture_sigma, 0), mode="wrap")
        z1 /= z1.std(axis=(0, 1), keepdims=True)
    z2 = rng.standard_normal((H, W, spec.bands))
    values = means[labels] + sds[labels] * z1 + spec.noise_sd * z2
    data = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    raster = Raster(np.ascontiguousarray(data.transpose(2, 0, 1)), {"scene": spec.name or "synthetic"})
    return raster, GroundTruth(labels.astype(np.uint8), spec.class_count)


def homogeneous_fraction(truth: GroundTruth) -> float:
    """Share of interior pixels whose full 3x3 window has a single class."""
    L = truth.labels.astype(np.int64)
    if L.shape[0] < 3 or L.shape[1] < 3:
        return 0.0
    c = L[1:-1, 1:-1]
    same = np.ones_like(c, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            same &= L[1 + dr : L.shape[0] - 1 + dr, 1 + dc : L.shape[1] - 1 + dc] == c
    return float(same.mean())


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalReport:
    """Whole-image scores over labeled pixels.

    ``confusion`` is ``c x (c + 1)``: rows are true classes, columns the
    predicted class, with the last column counting outlier predictions.
    """

    confusion: np.ndarray
    conflict_fallbacks: int = 0

    @property
    def class_count(self) -> int:
        return self.confusion.shape[0]

    @property
    def class_frequency(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.confusion[:, : self.class_count]))

    @property
    def overall_error_rate(self) -> float:
        return 1.0 - self.correct / self.total if self.total else 0.0

    @property
    def per_class_accuracy(self) -> np.ndarray:
        freq = self.class_frequency
        diag = np.diag(self.confusion[:, : self.class_count])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(freq > 0, diag / np.maximum(freq, 1), np.nan)

    @property
    def outlier_count(self) -> int:
        return int(self.confusion[:, -1].sum())


def _as_labels(predicted) -> np.ndarray:
    if hasattr(predicted, "labels"):
        predicted = predicted.labels
    pred = np.asarray(predicted)
    if pred.dtype == np.uint8:
        out = pred.astype(np.int64)
        out[pred == OUTLIER_CODE] = OUTLIER
        return out
    return pred.astype(np.int64)


def evaluate(predicted, truth: GroundTruth, conflict_fallbacks: int | None = None) -> EvalReport:
    """Confusion counts over pixels that carry ground truth.

    ``predicted`` is a class-index array (``-1`` = outlier), an encoded
    uint8 class map (254 = outlier), or a :class:`~fuzzyevidence.context.Classification`.
    """
    if conflict_fallbacks is None:
        conflict_fallbacks = getattr(predicted, "fallbacks", 0)
    pred = _as_labels(predicted)
    if pred.shape != truth.labels.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth {truth.labels.shape}")
    c = truth.class_count
    mask = truth.labels != UNLABELED
    t = truth.labels[mask].astype(np.int64)
    p = pred[mask]
    col = np.where((p >= 0) & (p < c), p, c)
    conf = np.zeros((c, c + 1), dtype=np.int64)
    np.add.at(conf, (t, col), 1)
    return EvalReport(conf, int(conflict_fallbacks))


def method_label(config: ContextConfig | None) -> str:
    if config is None:
        return "noncontextual"
    if config.method is Method.M4:
        return f"m4(w={config.w:g})"
    return config.method.value


DEFAULT_METHODS = (
    ContextConfig(Method.M1),
    ContextConfig(Method.M2),
    ContextConfig(Method.M3),
    ContextConfig(Method.M4, 1.0),
)


@dataclass
class ComparisonTable:
    rows: list = field(default_factory=list)  # [(name, EvalReport)]

    def report(self, name: str) -> EvalReport:
        return dict(self.rows)[name]

    def to_text(self, class_names: Sequence[str] | None = None) -> str:
        c = self.rows[0][1].class_count if self.rows else 0
        names = list(class_names or [f"class{k}" for k in range(c)])
        header = ["method", "error%", "outliers", "fallbacks"] + [f"{n}%" for n in names]
        lines = [header]
        for name, r in self.rows:
            acc = r.per_class_accuracy
            lines.append(
                [name, f"{100 * r.overall_error_rate:.2f}", str(r.outlier_count), str(r.conflict_fallbacks)]
                + [("nan" if np.isnan(a) else f"{100 * a:.2f}") for a in acc]
            )
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        out = []
        for row in lines:
            out.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))))
        freq = self.rows[0][1].class_frequency if self.rows else []
        out.append("class frequency: " + ", ".join(f"{n}={int(f)}" for n, f in zip(names, freq)))
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        c = self.rows[0][1].class_count if self.rows else 0
        writer.writerow(["method", "error_rate", "outliers", "fallbacks"] + [f"acc_class{k}" for k in range(c)])
        for name, r in self.rows:
            writer.writerow(
                [name, repr(r.overall_error_rate), r.outlier_count, r.conflict_fallbacks]
                + [repr(float(a)) for a in r.per_class_accuracy]
            )
        return buf.getvalue()


def compare_methods(
    raster: Raster,
    truth: GroundTruth,
    rulebase: Rulebase,
    configs: Sequence[ContextConfig | None] = DEFAULT_METHODS,
    include_baseline: bool = True,
    threads: int = 1,
) -> ComparisonTable:
    """Evaluate the noncontextual baseline and each contextual method on one image."""
    plane = label_plane(raster, rulebase)
    table = ComparisonTable()
    if include_baseline:
        table.rows.append(("noncontextual", evaluate(classify_noncontextual_plane(plane), truth)))
    for cfg in configs:
        if cfg is None:
            continue
        result = classify_plane(plane, cfg, threads=threads)
        table.rows.append((method_label(cfg), evaluate(result, truth)))
    return table
