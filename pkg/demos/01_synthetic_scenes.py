"""Generate the two bundled scenes and look at their spatial structure.

Run with ``python demos/01_synthetic_scenes.py``.
"""

import numpy as np

from fuzzyevidence import generate_scene, load_preset
from fuzzyevidence.harness import homogeneous_fraction

for name in ("patches-large", "patches-small"):
    spec = load_preset(name, seed=0)
    raster, truth = generate_scene(spec)
    freq = np.bincount(truth.labels.ravel(), minlength=truth.class_count)
    print(f"{name}: {raster.width}x{raster.height}, {raster.bands} bands, {truth.class_count} classes")
    print(f"  layout {spec.layout.value}, patch scale {spec.patch_scale:g}, texture sigma {spec.texture_sigma:g}")
    print(f"  pixels per class: {freq.tolist()}")
    # share of pixels whose whole 3x3 window is one class: high means context helps a lot
    print(f"  homogeneous 3x3 windows: {100 * homogeneous_fraction(truth):.1f}%")

    # band means per class, to see how much the spectra overlap
    X = raster.pixels()
    y = truth.labels.ravel()
    for k in range(truth.class_count):
        mu = X[y == k].mean(axis=0)
        print(f"    class {k}: mean " + " ".join(f"{v:6.1f}" for v in mu))
