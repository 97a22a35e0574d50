"""Fuzzy rule-based land cover classification with contextual evidence aggregation."""

from .evidence import Bpa, TotalConflict, combine, combine_all, decide, pignistic
from .raster_io import (
    GroundTruth,
    Raster,
    TrainingSet,
    read_ground_truth,
    read_raster,
    sample_training_set,
    write_ground_truth,
    write_raster,
)
from .rulebase import Rulebase, RulebaseConfig, build_rules, load_rulebase, save_rulebase, tune_rules
from .sofm import PrototypeSet, SofmConfig, label_prototypes, train_sofm
from .prototypes import RefineConfig, refine_prototypes
from .context import OUTLIER, ContextConfig, classify_image, grid_search_w
from .harness import EvalReport, SceneSpec, compare_methods, evaluate, generate_scene, load_preset
from .pipeline import TrainConfig, train_rulebase

__version__ = "0.1.0"
