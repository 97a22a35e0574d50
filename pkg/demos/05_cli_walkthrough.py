"""Drive the command-line tool through a full run in a temporary directory.

Run with ``python demos/05_cli_walkthrough.py``. Each step is the same as
typing ``fuzzyevidence <args>`` in a shell.
"""

import tempfile
from pathlib import Path

from fuzzyevidence.cli import run


def step(*args):
    print("$ fuzzyevidence " + " ".join(str(a) for a in args))
    code = run([str(a) for a in args])
    print(f"(exit {code})\n")
    return code


with tempfile.TemporaryDirectory() as tmp:
    d = Path(tmp)
    step("synth", "--preset", "patches-large", "--seed", 7, "--raster", d / "scene", "--truth", d / "truth")
    step("train", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rules.txt", "--seed", 7)
    step("classify", "--raster", d / "scene", "--rulebase", d / "rules.txt", "--method", "m4", "--w", 1.0, "--out", d / "map")
    step("evaluate", "--classmap", d / "map", "--truth", d / "truth")
    step("compare", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rules.txt", "--csv", d / "table.csv")
    step("tune-w", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rules.txt", "--w-grid", "0.25:1:0.25")
    # an invalid weight is a usage error (exit 2)
    step("classify", "--raster", d / "scene", "--rulebase", d / "rules.txt", "--method", "m4", "--w", 1.5, "--out", d / "bad")
