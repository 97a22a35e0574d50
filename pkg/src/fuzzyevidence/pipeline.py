"""End-to-end rulebase training: SOFM prototypes, refinement, rules, tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .prototypes import RefineConfig, refine_prototypes
from .raster_io import GroundTruth, Raster, TrainingSet, sample_training_set
from .rulebase import Rulebase, RulebaseConfig, TuningTrace, build_rules, predict, tune_rules
from .sofm import SofmConfig, label_prototypes, train_sofm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    per_class: int = 200
    sofm_epochs: int = 10
    sofm_learning_rate: tuple = (0.5, 0.01)
    sofm_radius: tuple = (2.0, 0.01)
    refine: RefineConfig = field(default_factory=RefineConfig)
    rules: RulebaseConfig = field(default_factory=RulebaseConfig)
    tune: bool = True


@dataclass(frozen=True)
class TrainSummary:
    rule_count: int
    prototype_count: int
    training_error_before: float
    training_error_after: float
    tuning_errors: tuple


def training_error_rate(rulebase: Rulebase, samples: TrainingSet) -> float:
    pred = predict(rulebase, samples.features)
    return float(np.mean(pred != samples.labels)) if len(samples) else 0.0


def fit_rulebase(samples: TrainingSet, config: TrainConfig = TrainConfig(), seed: int = 0) -> tuple[Rulebase, TrainSummary]:
    X, y, c = samples.features, samples.labels, samples.class_count
    sofm_cfg = SofmConfig(
        node_count=c,
        epochs=config.sofm_epochs,
        learning_rate_start=config.sofm_learning_rate[0],
        learning_rate_end=config.sofm_learning_rate[1],
        radius_start=config.sofm_radius[0],
        radius_end=config.sofm_radius[1],
        seed=seed,
    )
    protos = label_prototypes(train_sofm(X, sofm_cfg), X, y, c)
    protos = refine_prototypes(protos, X, y, RefineConfig(**{**config.refine.__dict__, "seed": seed}), class_count=c)
    rb = build_rules(protos, X, config.rules, class_count=c)
    before = training_error_rate(rb, samples)
    trace = TuningTrace()
    if config.tune:
        rb = tune_rules(rb, X, y, trace=trace)
    after = training_error_rate(rb, samples)
    log.info("%d rules; training error %.2f%% -> %.2f%%", len(rb), 100 * before, 100 * after)
    return rb, TrainSummary(len(rb), len(protos), before, after, tuple(trace.errors))


def train_rulebase(raster: Raster, truth: GroundTruth, config: TrainConfig = TrainConfig(), seed: int = 0):
    """Sample ``config.per_class`` pixels per class and fit a rulebase on them."""
    samples = sample_training_set(raster, truth, config.per_class, seed)
    rb, summary = fit_rulebase(samples, config, seed)
    return rb, summary, samples
