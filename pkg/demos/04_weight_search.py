"""Search the Method 4 neighbour weight on a 100x100 sub-image.

Run with ``python demos/04_weight_search.py``.
"""

from fuzzyevidence import generate_scene, grid_search_w, load_preset
from fuzzyevidence.pipeline import train_rulebase

RECT = (14, 14, 100, 100)  # row, col, height, width

for name in ("patches-large", "patches-small"):
    raster, truth = generate_scene(load_preset(name, seed=2))
    rb, _, _ = train_rulebase(raster, truth, seed=2)
    result = grid_search_w(raster, truth, rb, RECT)
    print(f"== {name}: best w = {result.best_w:g}")
    for w, err in result.curve:
        bar = "#" * int(round(400 * err))
        print(f"  w={w:4.2f}  {100 * err:5.2f}%  {bar}")
