"""Train a fuzzy rulebase step by step and inspect what each stage produces.

Run with ``python demos/02_train_rulebase.py``.
"""

import numpy as np

from fuzzyevidence import generate_scene, load_preset, sample_training_set
from fuzzyevidence.prototypes import RefineConfig, refine_prototypes
from fuzzyevidence.rulebase import TuningTrace, build_rules, label_vectors, predict, tune_rules
from fuzzyevidence.sofm import SofmConfig, label_prototypes, train_sofm

raster, truth = generate_scene(load_preset("patches-small", seed=0))
samples = sample_training_set(raster, truth, per_class=200, seed=0)
X, y, c = samples.features, samples.labels, samples.class_count
print(f"{len(samples)} training pixels over {c} classes")

# 1. a one-dimensional self-organizing map with one node per class
sofm = train_sofm(X, SofmConfig(node_count=c, epochs=10, seed=0))
protos = label_prototypes(sofm, X, y, c)
print(f"SOFM prototypes: {len(protos)}, labels {protos.labels.tolist()}")

# 2. refinement deletes, relabels, splits and merges prototypes until each one
#    represents enough points of its own class
protos = refine_prototypes(protos, X, y, RefineConfig(seed=0), class_count=c)
print(f"refined prototypes: {len(protos)}, per class {np.bincount(protos.labels, minlength=c).tolist()}")

# 3. one rule per prototype, Gaussian spreads from the points it represents
rb = build_rules(protos, X, class_count=c)
print(f"rules: {len(rb)}, training error {100 * np.mean(predict(rb, X) != y):.2f}%")

# 4. gradient tuning of centers and spreads
trace = TuningTrace()
tuned = tune_rules(rb, X, y, trace=trace)
print(f"tuning error E: {trace.errors[0]:.1f} -> {trace.errors[-1]:.1f} in {len(trace.errors) - 1} epochs")
print(f"training error after tuning {100 * np.mean(predict(tuned, X) != y):.2f}%")

# label vectors are possibilistic: components need not sum to one
alpha = label_vectors(tuned, X[:3])
for row, label in zip(alpha, y[:3]):
    print(f"  true class {label}: " + " ".join(f"{a:.2f}" for a in row))
