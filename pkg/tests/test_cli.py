import json

import numpy as np
import pytest

from cxrinf.cli import main
from cxrinf.imageops import write_png_gray16


@pytest.fixture(autouse=True)
def _data_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("CXRINF_DATA_DIR", str(tmp_path))
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestBasics:
    def test_unknown_flag_exits_one(self, capsys):
        code, out, err = run(capsys, "detect", "--bogus", "x")
        assert code == 1
        assert "Usage" in err or "no such option" in err.lower()

    def test_unknown_command_exits_one(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 1

    def test_missing_file_exits_one(self, capsys, tmp_path):
        code, _, err = run(capsys, "detect", "--prob", str(tmp_path / "nope.png"))
        assert code == 1


class TestSynthCorpus:
    def test_deterministic_reruns(self, capsys, tmp_path):
        code, *_ = run(capsys, "synth-corpus", "--out", "a", "--n-covid", "3",
                       "--n-control", "2", "--size", "16", "--seed", "7")
        assert code == 0
        code, *_ = run(capsys, "synth-corpus", "--out", "b", "--n-covid", "3",
                       "--n-control", "2", "--size", "16", "--seed", "7")
        assert code == 0
        a_files = sorted(p for p in (tmp_path / "a").rglob("*.png"))
        for pa in a_files:
            pb = tmp_path / "b" / pa.relative_to(tmp_path / "a")
            assert pa.read_bytes() == pb.read_bytes()
        manifest = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
        assert manifest["command"] == "synth-corpus"
        assert manifest["seeds"] == {"seed": 7}


class TestDetect:
    def test_zeros_negative_exit_zero(self, capsys, tmp_path):
        write_png_gray16(tmp_path / "zeros.png", np.zeros((16, 16)))
        code, out, _ = run(capsys, "detect", "--prob", "zeros.png")
        assert code == 0
        assert out.strip() == "negative"

    def test_positive(self, capsys, tmp_path):
        prob = np.zeros((16, 16))
        prob[3, 3] = 1.0
        write_png_gray16(tmp_path / "hot.png", prob)
        code, out, _ = run(capsys, "detect", "--prob", "hot.png")
        assert code == 0
        assert out.strip() == "positive"


class TestEval:
    def test_table_row(self, capsys):
        code, out, _ = run(capsys, "eval", "--confusion", "tn=12300,fp=244,fn=48,tp=2903")
        assert code == 0
        for expected in ("98.37", "98.05", "92.25", "95.21", "97.08", "98.12"):
            assert expected in out

    def test_group_ii_row(self, capsys):
        code, out, _ = run(capsys, "eval", "--confusion", "tn=26534,fp=31,fn=44,tp=829")
        assert code == 0
        for expected in ("94.96", "99.88", "96.40", "95.67", "95.24", "99.73"):
            assert expected in out

    def test_bad_counts_exit_one(self, capsys):
        code, *_ = run(capsys, "eval", "--confusion", "tn=banana")
        assert code == 1


class TestPipeline:
    def test_train_infer_render_cycle(self, capsys, tmp_path):
        code, *_ = run(capsys, "synth-corpus", "--out", "corpus", "--n-covid", "4",
                       "--n-control", "0", "--size", "64", "--seed", "1")
        assert code == 0
        code, out, err = run(capsys, "train-seg", "--corpus", "corpus", "--out", "run",
                             "--scale", "desk", "--input-size", "64",
                             "--epochs", "1", "--lr", "1e-3", "--batch-size", "4")
        assert code == 0, err
        assert (tmp_path / "run" / "checkpoint.pt").exists()
        assert (tmp_path / "run" / "run_manifest.json").exists()

        image = "corpus/images/synth-covid-0000.png"
        code, out, err = run(capsys, "infer", "--checkpoint", "run/checkpoint.pt",
                             "--image", image, "--out", "pred")
        assert code == 0, err
        prob_png = tmp_path / "pred" / "synth-covid-0000_prob.png"
        assert prob_png.exists()

        code, out, err = run(capsys, "render-map", "--image", image,
                             "--prob", str(prob_png), "--out", "maps")
        assert code == 0, err
        assert (tmp_path / "maps" / "synth-covid-0000_infmap.png").exists()

        code, out, _ = run(capsys, "detect", "--prob", str(prob_png))
        assert code == 0
        assert out.strip() in ("positive", "negative")

    def test_folds_command(self, capsys, tmp_path):
        run(capsys, "synth-corpus", "--out", "corpus", "--n-covid", "6",
            "--n-control", "6", "--size", "16", "--seed", "2")
        code, out, err = run(capsys, "folds", "--catalog", "corpus/catalog.jsonl",
                             "--k", "3", "--seed", "5", "--out", "folds.json")
        assert code == 0, err
        plan = json.loads((tmp_path / "folds.json").read_text())
        assert plan["k"] == 3 and len(plan["assignments"]) == 12

    def test_classifier_and_gradcam(self, capsys, tmp_path):
        run(capsys, "synth-corpus", "--out", "corpus", "--n-covid", "3",
            "--n-control", "3", "--size", "64", "--seed", "3")
        code, _, err = run(capsys, "train-cls", "--corpus", "corpus", "--out", "cls",
                           "--scale", "desk", "--epochs", "1", "--lr", "1e-3",
                           "--batch-size", "6")
        assert code == 0, err
        code, _, err = run(capsys, "gradcam", "--checkpoint", "cls/checkpoint.pt",
                           "--image", "corpus/images/synth-covid-0000.png",
                           "--out", "cam")
        assert code == 0, err
        assert (tmp_path / "cam" / "synth-covid-0000_gradcam.png").exists()

    def test_compare_maps(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        write_png_gray16(tmp_path / "act.png", rng.uniform(0, 1, (16, 16)))
        write_png_gray16(tmp_path / "prob.png", rng.uniform(0, 1, (16, 16)))
        write_png_gray16(tmp_path / "gt.png", (rng.uniform(0, 1, (16, 16)) > 0.5).astype(float))
        code, out, err = run(capsys, "compare-maps", "--activation", "act.png",
                             "--prob", "prob.png", "--gt", "gt.png")
        assert code == 0, err
        stats = json.loads(out)
        assert set(stats) == {"activation", "infection", "infection_minus_activation"}
