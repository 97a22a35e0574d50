"""Command-line interface: ``fuzzyevidence <subcommand> [options]``.

Every option can also come from a JSON config file (``--config``) whose
keys are option names with dashes or underscores. Values given as flags
win over the file, which wins over the built-in defaults.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .context import DEFAULT_W_GRID, ContextConfig, DegenerateEvidence, Method, classify_image, grid_search_w
from .evidence import TotalConflict
from .harness import PRESETS, ComparisonTable, SceneSpec, compare_methods, evaluate, generate_scene, load_preset
from .pipeline import TrainConfig, fit_rulebase, training_error_rate
from .prototypes import RefineConfig, RefinementError
from .raster_io import (
    GroundTruth,
    RasterFormatError,
    read_ground_truth,
    read_raster,
    sample_training_set,
    write_ground_truth,
    write_raster,
)
from .rulebase import RulebaseConfig, RulebaseFormatError, TuningTrace, load_rulebase, save_rulebase, tune_rules

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("fuzzyevidence")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# option table


def _grid(text: str) -> tuple:
    """``start:stop:step`` (inclusive) or a comma-separated list of weights."""
    text = str(text).strip()
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:step") from exc
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}")
        n = int(round((stop - start) / step)) + 1
        return tuple(round(start + i * step, 10) for i in range(n))
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc


def _rect(text: str) -> tuple:
    parts = str(text).split(",")
    try:
        rect = tuple(int(v) for v in parts)
    except ValueError:
        rect = ()
    if len(rect) != 4:
        raise argparse.ArgumentTypeError(f"bad rectangle {text!r}; use row,col,height,width")
    return rect


def _grid_text(grid) -> str:
    return f"{grid[0]:g}:{grid[-1]:g}:{grid[1] - grid[0]:g}" if len(grid) > 1 else f"{grid[0]:g}"


_RB, _REF, _TR = RulebaseConfig(), RefineConfig(), TrainConfig()


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable | None
    default: Any
    help: str
    choices: tuple | None = None
    flag: bool = False  # boolean --x/--no-x switch

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_OPTIONS = [
    Option("raster", str, None, "multispectral raster (.hdr/.bsq path or stem)"),
    Option("truth", str, None, "ground-truth raster (.hdr/.bsq path or stem)"),
    Option("rulebase", str, None, "rulebase text file"),
    Option("out", str, None, "output path"),
    Option("classmap", str, None, "class map to score (.hdr/.bsq path or stem)"),
    Option("preset", str, None, "bundled scene preset", choices=PRESETS),
    Option("scene", str, None, "scene spec JSON file (alternative to --preset)"),
    Option("scene-out", str, None, "also write the resolved scene spec JSON here"),
    Option("width", int, None, "override scene width"),
    Option("height", int, None, "override scene height"),
    Option("noise-sd", float, None, "override scene noise standard deviation"),
    Option("patch-scale", float, None, "override scene patch scale"),
    Option("texture-sigma", float, None, "override scene texture smoothing sigma"),
    Option("per-class", int, _TR.per_class, "training pixels drawn per class"),
    Option("sofm-epochs", int, _TR.sofm_epochs, "SOFM training epochs"),
    Option("sofm-lr-start", float, _TR.sofm_learning_rate[0], "SOFM learning rate at the first epoch"),
    Option("sofm-lr-end", float, _TR.sofm_learning_rate[1], "SOFM learning rate at the last epoch"),
    Option("sofm-radius-start", float, _TR.sofm_radius[0], "SOFM neighbourhood radius at the first epoch"),
    Option("sofm-radius-end", float, _TR.sofm_radius[1], "SOFM neighbourhood radius at the last epoch"),
    Option("k1", float, _REF.k1, "global retention factor K1"),
    Option("k2", float, _REF.k2, "per-class retention factor K2"),
    Option("refine-iterations", int, _REF.max_iterations, "maximum prototype refinement iterations"),
    Option("polish-epochs", int, _REF.polish_epochs, "winner-only polish epochs per refinement iteration"),
    Option("kw", float, _RB.kw, "spread scale factor"),
    Option("spread-rule", str, _RB.spread_rule, "initial spread formula", choices=("printed", "rms")),
    Option("q", float, _RB.q, "softmin exponent"),
    Option("epsilon", float, _RB.epsilon, "firing-strength cutoff"),
    Option("learning-rate", float, _RB.learning_rate, "tuning learning rate"),
    Option("max-tune-epochs", int, _RB.max_tune_epochs, "maximum tuning epochs"),
    Option("min-improvement", float, _RB.min_improvement, "stop tuning below this relative error decrease"),
    Option("spread-floor", float, _RB.spread_floor, "smallest spread allowed during tuning"),
    Option("tune", None, _TR.tune, "gradient-tune the rules after building them", flag=True),
    Option("method", str, "m1", "decision method", choices=("none", "m1", "m2", "m3", "m4")),
    Option("w", float, 1.0, "Method 4 neighbour weight in [0, 1]"),
    Option("rect", _rect, (14, 14, 100, 100), "sub-image row,col,height,width for the weight search"),
    Option("w-grid", _grid, DEFAULT_W_GRID, "weights to try, start:stop:step or a comma list"),
    Option("csv", str, None, "also write the table as CSV here"),
    Option("curve", str, None, "write the w/error curve CSV here (default: standard output)"),
]
OPTIONS = {o.dest: o for o in _OPTIONS}

_TRAINING = [
    "per_class", "sofm_epochs", "sofm_lr_start", "sofm_lr_end", "sofm_radius_start", "sofm_radius_end",
    "k1", "k2", "refine_iterations", "polish_epochs", "kw", "spread_rule", "q", "epsilon",
    "learning_rate", "max_tune_epochs", "min_improvement", "spread_floor", "tune",
]
_TUNING = ["learning_rate", "max_tune_epochs", "min_improvement", "spread_floor"]

SUBCOMMANDS = {
    "synth": (
        "generate a synthetic raster and ground truth",
        ["preset", "scene", "width", "height", "noise_sd", "patch_scale", "texture_sigma", "raster", "truth", "scene_out"],
        ["raster", "truth"],
    ),
    "train": ("train a rulebase from labeled pixels", ["raster", "truth", "rulebase"] + _TRAINING, ["raster", "truth", "rulebase"]),
    "tune": (
        "re-tune an existing rulebase on freshly sampled pixels",
        ["raster", "truth", "rulebase", "out", "per_class"] + _TUNING,
        ["raster", "truth", "rulebase", "out"],
    ),
    "classify": ("write a class map", ["raster", "rulebase", "method", "w", "out"], ["raster", "rulebase", "out"]),
    "evaluate": ("score a class map against ground truth", ["classmap", "truth", "csv"], ["classmap", "truth"]),
    "compare": (
        "score the noncontextual baseline and all four methods",
        ["raster", "truth", "rulebase", "w", "csv"],
        ["raster", "truth", "rulebase"],
    ),
    "tune-w": (
        "grid-search the Method 4 weight on a sub-image",
        ["raster", "truth", "rulebase", "rect", "w_grid", "curve"],
        ["raster", "truth", "rulebase"],
    ),
}

_HELP_OVERRIDES = {
    ("tune", "out"): "path for the tuned rulebase",
    ("classify", "out"): "output class map (.hdr/.bsq path or stem)",
    ("train", "rulebase"): "output rulebase text file",
    ("tune", "rulebase"): "input rulebase text file",
    ("synth", "raster"): "output raster (.hdr/.bsq path or stem)",
    ("synth", "truth"): "output ground truth (.hdr/.bsq path or stem)",
}


def _show(value) -> str:
    if isinstance(value, tuple) and value and all(isinstance(v, float) for v in value):
        return _grid_text(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return "none" if value is None else str(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON file of option values (default: none)")
    common.add_argument("--seed", type=int, default=None, help="global random seed (default: 0)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for classification (default: 1)")
    common.add_argument(
        "--log-level", default=None, choices=("debug", "info", "warning", "error"), help="stderr log level (default: warning)"
    )
    parser = argparse.ArgumentParser(prog="fuzzyevidence", description="Fuzzy rule-based contextual land-cover classification.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, (summary, dests, required) in SUBCOMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=summary, description=summary)
        for dest in dests:
            opt = OPTIONS[dest]
            text = _HELP_OVERRIDES.get((name, dest), opt.help)
            if dest in required:
                text += " (required)"
            else:
                text += f" (default: {_show(opt.default)})"
            flag = "--" + opt.name
            if opt.flag:
                p.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=None, help=text)
            else:
                p.add_argument(flag, dest=dest, type=opt.type, choices=opt.choices, default=None, help=text)
    return parser


def _load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    out = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest in ("seed", "threads", "log_level"):
            out[dest] = value
            continue
        if dest not in OPTIONS:
            raise UsageError(f"unknown config key {key!r} in {path}")
        opt = OPTIONS[dest]
        try:
            if opt.flag:
                if not isinstance(value, bool):
                    raise ValueError("expected true or false")
            elif value is not None and opt.type in (_grid, _rect):
                value = opt.type(",".join(str(v) for v in value) if isinstance(value, list) else value)
            elif value is not None:
                value = opt.type(value)
        except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
        if opt.choices and value is not None and value not in opt.choices:
            raise UsageError(f"config key {key!r} must be one of {', '.join(opt.choices)}")
        out[dest] = value
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over the defaults for one subcommand."""
    file_values = _load_config(args.config) if args.config else {}
    _, dests, required = SUBCOMMANDS[args.command]
    settings = {}
    for dest in dests + ["seed", "threads", "log_level"]:
        default = OPTIONS[dest].default if dest in OPTIONS else {"seed": 0, "threads": 1, "log_level": "warning"}[dest]
        flag_value = getattr(args, dest, None)
        settings[dest] = flag_value if flag_value is not None else file_values.get(dest, default)
    missing = [d for d in required if settings.get(d) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + OPTIONS[d].name for d in missing))
    if settings["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return settings


def print_defaults(command: str, settings: dict, stream=sys.stderr) -> None:
    grid = DEFAULT_W_GRID
    print(
        f"defaults: q={_RB.q:g} epsilon={_RB.epsilon:g} kw={_RB.kw:g} spread_rule={_RB.spread_rule}"
        f" K1={_REF.k1:g} K2={_REF.k2:g} w_grid={_grid_text(grid)}",
        file=stream,
    )
    shown = " ".join(f"{k}={_show(v)}" for k, v in settings.items())
    print(f"{command}: {shown}", file=stream)


# ---------------------------------------------------------------------------
# config builders


def _rulebase_config(s: dict) -> RulebaseConfig:
    return RulebaseConfig(
        kw=s["kw"],
        q=s["q"],
        epsilon=s["epsilon"],
        learning_rate=s["learning_rate"],
        max_tune_epochs=s["max_tune_epochs"],
        min_improvement=s["min_improvement"],
        spread_floor=s["spread_floor"],
        spread_rule=s["spread_rule"],
    )


def _train_config(s: dict) -> TrainConfig:
    if s["per_class"] < 1:
        raise ValueError("--per-class must be >= 1")
    if s["sofm_epochs"] < 1:
        raise ValueError("--sofm-epochs must be >= 1")
    return TrainConfig(
        per_class=s["per_class"],
        sofm_epochs=s["sofm_epochs"],
        sofm_learning_rate=(s["sofm_lr_start"], s["sofm_lr_end"]),
        sofm_radius=(s["sofm_radius_start"], s["sofm_radius_end"]),
        refine=RefineConfig(k1=s["k1"], k2=s["k2"], max_iterations=s["refine_iterations"], polish_epochs=s["polish_epochs"]),
        rules=_rulebase_config(s),
        tune=s["tune"],
    )


def _context_config(s: dict) -> ContextConfig | None:
    if s["method"] == "none":
        return None
    return ContextConfig(Method(s["method"]), s["w"])


def _scene_spec(s: dict) -> SceneSpec:
    if (s["preset"] is None) == (s["scene"] is None):
        raise UsageError("give exactly one of --preset or --scene")
    if s["preset"] is not None:
        spec = load_preset(s["preset"])
    else:
        try:
            spec = SceneSpec.load(s["scene"])
        except FileNotFoundError as exc:
            raise DataError(f"scene file not found: {s['scene']}") from exc
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise DataError(f"bad scene file {s['scene']}: {exc}") from exc
    overrides = {k: s[k] for k in ("width", "height", "noise_sd", "patch_scale", "texture_sigma") if s[k] is not None}
    return SceneSpec(**{**spec.to_dict(), **overrides, "seed": s["seed"]})


# ---------------------------------------------------------------------------
# subcommands


def _check_bands(raster, rulebase) -> None:
    if raster.bands != rulebase.dim:
        raise DataError(f"raster has {raster.bands} bands but the rulebase expects {rulebase.dim}")


def _check_shape(a_shape, truth: GroundTruth, what: str) -> None:
    if tuple(a_shape) != (truth.height, truth.width):
        raise DataError(f"{what} is {a_shape[1]}x{a_shape[0]} but the ground truth is {truth.width}x{truth.height}")


def cmd_synth(s: dict, out) -> None:
    try:
        spec = _scene_spec(s)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raster, truth = generate_scene(spec)
    write_raster(s["raster"], raster)
    write_ground_truth(s["truth"], truth)
    if s["scene_out"]:
        spec.save(s["scene_out"])
    print(f"scene {spec.name or 'synthetic'}: {spec.width}x{spec.height}, {spec.bands} bands, {spec.class_count} classes", file=out)


def cmd_train(s: dict, out) -> None:
    try:
        config = _train_config(s)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raster, truth = read_raster(s["raster"]), read_ground_truth(s["truth"])
    _check_shape((raster.height, raster.width), truth, "raster")
    samples = sample_training_set(raster, truth, config.per_class, s["seed"])
    rb, summary = fit_rulebase(samples, config, s["seed"])
    save_rulebase(rb, s["rulebase"])
    print(f"rules: {summary.rule_count}", file=out)
    print(f"training error before tuning: {100 * summary.training_error_before:.2f}%", file=out)
    print(f"training error after tuning: {100 * summary.training_error_after:.2f}%", file=out)


def cmd_tune(s: dict, out) -> None:
    rb = load_rulebase(s["rulebase"])
    try:
        if s["per_class"] < 1:
            raise ValueError("--per-class must be >= 1")
        config = replace(rb.config, **{k: s[k] for k in _TUNING})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raster, truth = read_raster(s["raster"]), read_ground_truth(s["truth"])
    _check_shape((raster.height, raster.width), truth, "raster")
    _check_bands(raster, rb)
    samples = sample_training_set(raster, truth, s["per_class"], s["seed"])
    before = training_error_rate(rb, samples)
    trace = TuningTrace()
    tuned = tune_rules(rb, samples.features, samples.labels, config=config, trace=trace)
    after = training_error_rate(tuned, samples)
    save_rulebase(tuned, s["out"])
    print(f"tuning error: {trace.errors[0]:.6g} -> {trace.errors[-1]:.6g} over {len(trace.errors) - 1} epochs" if trace.errors else "nothing to tune", file=out)
    print(f"training error: {100 * before:.2f}% -> {100 * after:.2f}%", file=out)


def cmd_classify(s: dict, out) -> None:
    try:
        config = _context_config(s)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rb = load_rulebase(s["rulebase"])
    raster = read_raster(s["raster"])
    _check_bands(raster, rb)
    result = classify_image(raster, rb, config, threads=s["threads"])
    n = result.labels.size
    if config is not None and config.method in (Method.M2, Method.M3) and n and result.fallbacks == n:
        raise NumericFailure("every pixel met total conflict; no contextual decision was possible")
    write_raster(s["out"], result.encoded(), classes=rb.class_count, outlier=254)
    counts = np.bincount(result.encoded().ravel(), minlength=256)
    summary = ", ".join(f"{k}:{int(counts[k])}" for k in range(rb.class_count))
    print(f"classified {n} pixels; class counts {summary}; outliers {int(counts[254])}; fallbacks {result.fallbacks}", file=out)


def cmd_evaluate(s: dict, out) -> None:
    classmap = read_raster(s["classmap"])
    truth = read_ground_truth(s["truth"])
    if classmap.bands != 1 or classmap.data.dtype != np.uint8:
        raise DataError("the class map must be a 1-band u8 raster")
    _check_shape((classmap.height, classmap.width), truth, "class map")
    report = evaluate(classmap.data[0], truth)
    table = ComparisonTable([("classmap", report)])
    text = table.to_text()
    if s["csv"]:
        Path(s["csv"]).write_text(table.to_csv())
    out.write(text)


def cmd_compare(s: dict, out) -> None:
    try:
        configs = (ContextConfig(Method.M1), ContextConfig(Method.M2), ContextConfig(Method.M3), ContextConfig(Method.M4, s["w"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raster, truth, rb = read_raster(s["raster"]), read_ground_truth(s["truth"]), load_rulebase(s["rulebase"])
    _check_shape((raster.height, raster.width), truth, "raster")
    _check_bands(raster, rb)
    if truth.class_count != rb.class_count:
        raise DataError(f"ground truth has {truth.class_count} classes but the rulebase has {rb.class_count}")
    table = compare_methods(raster, truth, rb, configs, threads=s["threads"])
    text = table.to_text()
    if s["csv"]:
        Path(s["csv"]).write_text(table.to_csv())
    out.write(text)


def cmd_tune_w(s: dict, out) -> None:
    grid = s["w_grid"]
    if not grid or any(not 0.0 <= w <= 1.0 for w in grid):
        raise UsageError("--w-grid needs at least one weight, all in [0, 1]")
    raster, truth, rb = read_raster(s["raster"]), read_ground_truth(s["truth"]), load_rulebase(s["rulebase"])
    _check_shape((raster.height, raster.width), truth, "raster")
    _check_bands(raster, rb)
    result = grid_search_w(raster, truth, rb, s["rect"], grid)
    if s["curve"]:
        result.write_csv(s["curve"])
    print(f"best w: {result.best_w:g}", file=out)
    if not s["curve"]:
        print("w,error", file=out)
        for w, err in result.curve:
            print(f"{w!r},{err!r}", file=out)


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "tune": cmd_tune,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "tune-w": cmd_tune_w,
}


def run(argv=None, out=None, err=None) -> int:
    """Run one subcommand and return its exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        settings = resolve(args)
    except UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    logging.basicConfig(level=settings["log_level"].upper(), stream=err, format="%(levelname)s %(name)s: %(message)s")
    print_defaults(args.command, settings, stream=err)
    try:
        _COMMANDS[args.command](settings, out)
    except UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    except (TotalConflict, DegenerateEvidence, RefinementError, FloatingPointError, NumericFailure) as exc:
        print(f"numeric failure: {exc}", file=err)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"data error: file not found: {exc.filename or exc}", file=err)
        return EXIT_DATA
    except (DataError, RasterFormatError, RulebaseFormatError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=err)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
