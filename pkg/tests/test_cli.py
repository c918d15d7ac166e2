import csv
import json
from pathlib import Path

import numpy as np
import pytest

from weakenlab.cli import main, read_pgm, write_pgm

ROOT = Path(__file__).resolve().parents[1]
MNIST = ROOT / "data" / "mnist10k"
IMAGES = str(MNIST / "images-idx3-ubyte.gz")
LABELS = str(MNIST / "labels-idx1-ubyte.gz")


def small_config(**overrides):
    cfg = {
        "data": {"kind": "idx", "images": IMAGES, "labels": LABELS, "train_size": 300, "val_size": 100},
        "model": {"kind": "mlp", "widths": [784, 32, 10], "input_shape": [1, 28, 28]},
        "train": {"epochs": 2, "batch_size": 50, "milestone_epochs": [1]},
        "methods": {"baseline": {}, "fw_hl": {"hidden_transforms": [{"kind": "feature_weaken_hidden", "ws": 0.8}]}},
        "seeds": [0, 1, 2],
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    out = tmp / "run"
    assert main(["train", "--config", str(write_config(tmp, small_config())), "--out", str(out)]) == 0
    return out


def test_train_outputs(trained):
    for method in ("baseline", "fw_hl"):
        assert len(list((trained / method).glob("seed_*/metrics.csv"))) == 3
        assert len(list((trained / method).glob("seed_*/model.wklb"))) == 3
    rows = list(csv.DictReader(open(trained / "summary.csv")))
    assert [r["method"] for r in rows] == ["baseline", "fw_hl"]
    summary = json.loads((trained / "summary.json").read_text())
    per_seed = summary[0]["per_seed"]
    assert float(rows[0]["mean_best_top1"]) == pytest.approx(np.mean(list(per_seed.values())))
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1, 2] and "tool_version" in manifest
    header = (trained / "baseline" / "seed_0" / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_top1,val_top5,lr,wall_ms"


def test_replay_from_manifest(trained, tmp_path):
    replay = tmp_path / "replay"
    assert main(["train", "--config", str(trained / "manifest.json"), "--out", str(replay)]) == 0
    assert (replay / "summary.csv").read_bytes() == (trained / "summary.csv").read_bytes()
    for f in trained.glob("*/seed_*/metrics.csv"):
        assert (replay / f.relative_to(trained)).read_bytes() == f.read_bytes()


def test_threads_do_not_change_results(trained, tmp_path):
    out = tmp_path / "threaded"
    assert main(["train", "--config", str(trained / "manifest.json"), "--out", str(out), "--threads", "3"]) == 0
    assert (out / "summary.csv").read_bytes() == (trained / "summary.csv").read_bytes()


def test_seed_override(tmp_path):
    out = tmp_path / "one"
    cfg = small_config(methods={"baseline": {}}, train={"epochs": 1, "batch_size": 100, "milestone_epochs": []})
    assert main(["train", "--config", str(write_config(tmp_path, cfg)), "--out", str(out), "--seed", "7"]) == 0
    assert [p.name for p in (out / "baseline").iterdir()] == ["seed_7"]


@pytest.mark.parametrize("mutate,field", [
    (lambda c: c["train"].update(momentum=1.5), "train"),
    (lambda c: c["train"].update(learning_rate=0.1), "train"),
    (lambda c: c.update(extra=1), "config"),
    (lambda c: c["methods"].update(bad={"input_transforms": [{"kind": "mixup", "alpha": -1}]}), "methods.bad"),
    (lambda c: c["model"].update(widths=[100, 10]), "model"),
    (lambda c: c["data"].update(kind="cifar"), "data.kind"),
])
def test_invalid_config_exits_nonzero(tmp_path, capsys, mutate, field):
    cfg = small_config()
    mutate(cfg)
    code = main(["train", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "o")])
    assert code != 0
    assert field in capsys.readouterr().err


def test_sweep_curve(tmp_path):
    cfg = small_config(methods={"baseline": {}}, seeds=[0, 1, 2],
                       train={"epochs": 1, "batch_size": 100, "milestone_epochs": []})
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(write_config(tmp_path, cfg)), "--out", str(out),
                 "--level", "hidden", "embedding", "--ws", "0.1", "0.5", "0.8", "0.9"]) == 0
    rows = list(csv.DictReader(open(out / "curve.csv")))
    assert list(rows[0]) == ["level", "ws", "seed", "best_top1"]
    assert sum(r["level"] == "hidden" for r in rows) == 12
    assert sum(r["level"] == "embedding" for r in rows) == 12
    assert json.loads((out / "manifest.json").read_text())["sweep"]["ws"] == [0.1, 0.5, 0.8, 0.9]
    assert main(["sweep", "--config", str(write_config(tmp_path, cfg)), "--out", str(out), "--ws", "1.0"]) != 0


def test_attack_tables(trained, tmp_path):
    cfg = json.loads((trained / "manifest.json").read_text())
    cfg["attack"] = {"source": "baseline",
                     "attacks": [{"kind": "fgsm", "epsilon": 0.1}, {"kind": "ifgsm", "epsilon": 0.1, "iterations": 3}]}
    out = tmp_path / "attack"
    assert main(["attack", "--config", str(write_config(tmp_path, cfg)), "--out", str(out),
                 "--train-dir", str(trained)]) == 0
    rows = list(csv.DictReader(open(out / "robustness.csv")))
    assert list(rows[0]) == ["method", "attack", "mode", "epsilon", "accuracy"]
    black = [(r["method"], r["attack"]) for r in rows if r["mode"] == "black"]
    assert sorted(black) == sorted({(m, a) for m in ("baseline", "fw_hl") for a in ("fgsm", "ifgsm3")})
    white = {(r["method"], r["attack"]): float(r["accuracy"]) for r in rows if r["mode"] == "white"}
    blackd = {(r["method"], r["attack"]): float(r["accuracy"]) for r in rows if r["mode"] == "black"}
    assert white[("baseline", "fgsm")] == blackd[("baseline", "fgsm")]
    assert (out / "manifest.json").exists()


def test_attack_zero_epsilon_gives_clean_accuracy(trained, tmp_path):
    cfg = json.loads((trained / "manifest.json").read_text())
    cfg["attack"] = {"source": "baseline", "attacks": [{"kind": "fgsm", "epsilon": 0.0}]}
    out = tmp_path / "attack0"
    assert main(["attack", "--config", str(write_config(tmp_path, cfg)), "--out", str(out),
                 "--train-dir", str(trained)]) == 0
    rows = list(csv.DictReader(open(out / "robustness.csv")))
    for method in ("baseline", "fw_hl"):
        metrics = list(csv.DictReader(open(trained / method / "seed_0" / "metrics.csv")))
        clean = float(metrics[-1]["val_top1"])
        for r in rows:
            if r["method"] == method:
                assert float(r["accuracy"]) == clean


def test_attack_missing_checkpoint(tmp_path, trained):
    cfg = json.loads((trained / "manifest.json").read_text())
    cfg["attack"] = {"source": "baseline", "checkpoints": {"baseline": str(tmp_path / "nope.wklb")}}
    assert main(["attack", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "a")]) != 0


def test_eval_checkpoint(trained, tmp_path, capsys):
    ckpt = trained / "baseline" / "seed_0" / "model.wklb"
    assert main(["eval", "--checkpoint", str(ckpt), "--images", IMAGES, "--labels", LABELS,
                 "--mean", "0.1307", "--std", "0.3081", "--out", str(tmp_path / "ev")]) == 0
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["samples"] == 10000 and 0 <= result["top1"] <= result["top5"] <= 100
    assert (tmp_path / "ev" / "manifest.json").exists()
    assert main(["eval", "--checkpoint", str(tmp_path / "missing"), "--images", IMAGES, "--labels", LABELS]) != 0


def test_weaken_preview(tmp_path):
    out = tmp_path / "preview"
    assert main(["weaken-preview", "--images", IMAGES, "--labels", LABELS, "--ws", "0.5", "0.99",
                 "--count", "4", "--out", str(out)]) == 0
    originals = sorted(out.glob("original_*.pgm"))
    assert len(originals) == 4
    for orig in originals:
        idx = orig.name.split("_", 1)[1]
        dark = read_pgm(out / "ws_0.99" / f"sample_{idx}")
        assert dark.max() <= 0.01 * read_pgm(orig).max()
    with open(out / "scatter_ws_0.5.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 8
    assert (out / "manifest.json").exists()


def test_pgm_format(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 0.25]])
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw == b"P5\n2 2\n255\n" + bytes([0, 127, 255, 63])
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), np.floor(img * 255) / 255)


def test_data_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("WEAKENLAB_DATA_DIR", str(MNIST))
    cfg = small_config(methods={"baseline": {}}, seeds=[0],
                       train={"epochs": 1, "batch_size": 100, "milestone_epochs": []})
    cfg["data"].update(images="images-idx3-ubyte.gz", labels="labels-idx1-ubyte.gz")
    assert main(["train", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0
