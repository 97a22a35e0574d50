import io
import json

import numpy as np
import pytest

from fuzzyevidence.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, OPTIONS, SUBCOMMANDS, run
from fuzzyevidence.raster_io import read_raster


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    code, _, err = call("synth", "--preset", "patches-large", "--seed", 7,
                        "--raster", d / "scene", "--truth", d / "truth")
    assert code == EXIT_OK, err
    code, out, err = call("train", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rb.txt",
                          "--per-class", 60, "--seed", 7)
    assert code == EXIT_OK, err
    assert out.startswith("rules: ")
    return d


class TestPipeline:
    def test_compare_has_five_rows(self, workspace):
        d = workspace
        code, out, _ = call("compare", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rb.txt",
                            "--csv", d / "cmp.csv")
        assert code == EXIT_OK
        rows = [line.split()[0] for line in out.splitlines()[1:-1]]
        assert rows == ["noncontextual", "m1", "m2", "m3", "m4(w=1)"]
        assert len((d / "cmp.csv").read_text().splitlines()) == 6

    @pytest.mark.parametrize("method", ["none", "m1", "m2", "m3", "m4"])
    def test_classify_then_evaluate(self, workspace, method):
        d = workspace
        code, _, err = call("classify", "--raster", d / "scene", "--rulebase", d / "rb.txt", "--method", method,
                            "--w", 0.5, "--out", d / f"map-{method}")
        assert code == EXIT_OK, err
        cmap = read_raster(d / f"map-{method}")
        assert cmap.data.shape == (1, 128, 128) and cmap.meta["outlier"] == "254"
        code, out, _ = call("evaluate", "--classmap", d / f"map-{method}", "--truth", d / "truth")
        assert code == EXIT_OK and out.startswith("method")

    def test_tune_w(self, workspace):
        d = workspace
        code, out, _ = call("tune-w", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rb.txt",
                            "--rect", "4,4,40,40", "--w-grid", "0.25:1:0.25", "--curve", d / "curve.csv")
        assert code == EXIT_OK and out.startswith("best w: ")
        lines = (d / "curve.csv").read_text().splitlines()
        assert lines[0] == "w,error" and [line.split(",")[0] for line in lines[1:]] == ["0.25", "0.5", "0.75", "1.0"]

    def test_tune_w_curve_on_stdout(self, workspace):
        d = workspace
        code, out, _ = call("tune-w", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rb.txt",
                            "--rect", "4,4,40,40", "--w-grid", "0.5,1.0")
        assert code == EXIT_OK and out.splitlines()[1:] and out.splitlines()[1] == "w,error"

    def test_tune(self, workspace):
        d = workspace
        code, out, err = call("tune", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", d / "rb.txt",
                              "--out", d / "rb2.txt", "--per-class", 40, "--max-tune-epochs", 5)
        assert code == EXIT_OK, err
        assert out.startswith("tuning error") or out.startswith("nothing")
        assert (d / "rb2.txt").read_text().startswith("FUZZYRB 1")


class TestReproducibility:
    def test_train_is_byte_identical(self, workspace, tmp_path):
        d = workspace
        for name in ("a.txt", "b.txt"):
            assert call("train", "--raster", d / "scene", "--truth", d / "truth", "--rulebase", tmp_path / name,
                        "--per-class", 60, "--seed", 7)[0] == EXIT_OK
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        assert (tmp_path / "a.txt").read_bytes() == (d / "rb.txt").read_bytes()

    def test_synth_is_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            call("synth", "--preset", "patches-small", "--width", 20, "--height", 20,
                 "--raster", tmp_path / name, "--truth", tmp_path / f"{name}-gt")
        assert (tmp_path / "a.bsq").read_bytes() == (tmp_path / "b.bsq").read_bytes()
        assert (tmp_path / "a-gt.bsq").read_bytes() == (tmp_path / "b-gt.bsq").read_bytes()

    @pytest.mark.parametrize("method", ["m3", "m4"])
    def test_threads_match(self, workspace, tmp_path, method):
        d = workspace
        for t in (1, 4):
            call("classify", "--raster", d / "scene", "--rulebase", d / "rb.txt", "--method", method,
                 "--threads", t, "--out", tmp_path / f"t{t}")
        assert (tmp_path / "t1.bsq").read_bytes() == (tmp_path / "t4.bsq").read_bytes()


class TestErrors:
    def test_w_out_of_range(self, workspace, tmp_path):
        d = workspace
        code, _, err = call("classify", "--raster", d / "scene", "--rulebase", d / "rb.txt", "--method", "m4",
                            "--w", 1.5, "--out", tmp_path / "m")
        assert code == EXIT_USAGE and "w must lie" in err
        assert not (tmp_path / "m.bsq").exists()

    def test_evaluate_dimension_mismatch(self, workspace, tmp_path):
        d = workspace
        call("synth", "--preset", "patches-large", "--width", 20, "--height", 20,
             "--raster", tmp_path / "s", "--truth", tmp_path / "t")
        call("classify", "--raster", tmp_path / "s", "--rulebase", d / "rb.txt", "--out", tmp_path / "m")
        code, out, err = call("evaluate", "--classmap", tmp_path / "m", "--truth", d / "truth", "--csv", tmp_path / "e.csv")
        assert code == EXIT_DATA and out == "" and "ground truth" in err
        assert not (tmp_path / "e.csv").exists()

    def test_missing_file(self, tmp_path):
        code, _, err = call("evaluate", "--classmap", tmp_path / "nope", "--truth", tmp_path / "nope")
        assert code == EXIT_DATA and "not found" in err

    @pytest.mark.parametrize("argv", [["frobnicate"], ["classify", "--bogus", "1"], []])
    def test_bad_arguments(self, argv):
        assert call(*argv)[0] == EXIT_USAGE

    def test_missing_required(self):
        code, _, err = call("classify", "--raster", "x")
        assert code == EXIT_USAGE and "--rulebase" in err and "--out" in err

    def test_all_conflict_image_is_a_numeric_failure(self, tmp_path):
        # two saturated rules far from every pixel: all label vectors vanish
        (tmp_path / "rb.txt").write_text(
            "FUZZYRB 1\np=1 c=2 rules=2 q=-10.0 epsilon=0.01 kw=50.0 learning_rate=20.0 max_tune_epochs=200 "
            "min_improvement=0.0001 spread_floor=0.001 spread_rule=printed\n0 1000.0 1.0\n1 2000.0 1.0\n"
        )
        (tmp_path / "r.hdr").write_text("width=3\nheight=3\nbands=1\ndtype=u8\nlayout=bsq\n")
        (tmp_path / "r.bsq").write_bytes(bytes(9))
        code, _, err = call("classify", "--raster", tmp_path / "r", "--rulebase", tmp_path / "rb.txt",
                            "--method", "m2", "--out", tmp_path / "m")
        assert code == EXIT_NUMERIC and "total conflict" in err


class TestConfiguration:
    @pytest.mark.parametrize("command", sorted(SUBCOMMANDS))
    def test_help_lists_every_flag_with_default(self, command, capsys):
        assert run([command, "--help"]) == EXIT_OK
        text = capsys.readouterr().out
        for dest in SUBCOMMANDS[command][1]:
            assert "--" + OPTIONS[dest].name in text
        for flag in ("--seed", "--threads", "--config", "--log-level"):
            assert flag in text
        assert text.count("(default:") + text.count("(required)") >= len(SUBCOMMANDS[command][1])

    def test_defaults_are_printed(self, workspace, tmp_path):
        d = workspace
        _, _, err = call("classify", "--raster", d / "scene", "--rulebase", d / "rb.txt", "--out", tmp_path / "m")
        assert "w = 1.0" in err or "w=1.0" in err.replace(" ", "")

    def test_flags_override_config_file(self, workspace, tmp_path):
        d = workspace
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"method": "m4", "w": 1.5}))
        base = ["classify", "--config", cfg, "--raster", d / "scene", "--rulebase", d / "rb.txt", "--out", tmp_path / "m"]
        assert call(*base)[0] == EXIT_USAGE
        assert call(*base, "--w", 0.4)[0] == EXIT_OK

    def test_config_file_beats_defaults(self, workspace, tmp_path):
        d = workspace
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"method": "none"}))
        call("classify", "--config", cfg, "--raster", d / "scene", "--rulebase", d / "rb.txt", "--out", tmp_path / "a")
        call("classify", "--method", "none", "--raster", d / "scene", "--rulebase", d / "rb.txt", "--out", tmp_path / "b")
        assert (tmp_path / "a.bsq").read_bytes() == (tmp_path / "b.bsq").read_bytes()

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"colour": "blue"}))
        code, _, err = call("classify", "--config", cfg, "--raster", "a", "--rulebase", "b", "--out", "c")
        assert code == EXIT_USAGE and "colour" in err
