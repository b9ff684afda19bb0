import csv
import json

import pytest

from randaudit import config as C
from randaudit.cli import main
from randaudit.model import load_model

SMALL = ["--set", "data.n_per_class=25", "--set", "data.d=8", "--set", "train.epochs=8",
         "--set", "model.hidden=[16]", "--set", "pgd.steps=5"]


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.reader(lines))


def test_train_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--out", a, *SMALL) == 0
    assert run("train", "--out", b, *SMALL) == 0
    for name in ("model.bin", "history.csv", "train.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_csv(a / "history.csv")
    assert rows[0] == ["epoch", "loss", "train_acc", "test_acc"] and len(rows) == 9
    assert load_model(a / "model.bin").layer_dims == (8, 16, 4)


def test_train_default_blobs_accuracy(tmp_path):
    assert run("train", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "train.json").read_text())
    assert doc["test_accuracy"] >= 0.95
    assert doc["meta"]["seed"] == doc["config"]["seed"] == 7


def test_missing_dataset_exit_2(tmp_path, capsys):
    code = run("train", "--out", tmp_path, "--set", f"data.train_csv=\"{tmp_path}/none.csv\"")
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path):
    assert run("nag", "--out", tmp_path, "--set", "nag.bogus=1") == 2
    assert run("nag", "--out", tmp_path, "--set", "smoothing.mode=\"sometimes\"") == 2
    assert run("sweep", "--out", tmp_path, "--set", "sweep.dims_bins=[[5,201]]") == 2
    assert run("nag", "--out", tmp_path, "--seed", "-3") == 2
    assert run("nag", "--out", tmp_path, "--workers", "0") == 2
    assert run("nag", "--out", tmp_path, "--config", tmp_path / "missing.toml") == 2


def test_csv_data_and_model_file(tmp_path):
    data, model = tmp_path / "data", tmp_path / "model"
    assert run("gen-data", "--out", data, *SMALL) == 0
    files = ["--set", f"data.train_csv=\"{data}/train.csv\"", "--set", f"data.test_csv=\"{data}/test.csv\""]
    assert run("train", "--out", model, *SMALL, *files) == 0
    # training from the written CSVs matches training from the generator (the
    # files differ only in the embedded config)
    assert run("train", "--out", tmp_path / "gen", *SMALL) == 0
    assert load_model(model / "model.bin").same_params(load_model(tmp_path / "gen" / "model.bin"))
    out = tmp_path / "nag"
    assert run("nag", "--out", out, *SMALL, *files, "--set", f"model.file=\"{model}/model.bin\"",
               "--set", "nag.points=5", "--set", "nag.inferences=64") == 0
    # a model whose shape does not fit the data is an input error
    assert run("nag", "--out", out, "--set", f"model.file=\"{model}/model.bin\"") == 2


def test_nag_outputs(tmp_path):
    args = ["nag", *SMALL, "--set", "nag.points=10", "--set", "nag.inferences=200",
            "--set", "smoothing.n=5", "--set", "smoothing.sigma=0.5"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b", "--workers", "2") == 0
    for name in ("nag.json", "nag_random.csv", "nag_fixed.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    fixed = read_csv(tmp_path / "a" / "nag_fixed.csv")
    assert fixed[0] == ["N", "robust_accuracy", "ci95"]
    assert [r[0] for r in fixed[1:]] == ["1", "10", "100", "1000"]
    assert len({r[1] for r in fixed[1:]}) == 1
    rand = [float(r[1]) for r in read_csv(tmp_path / "a" / "nag_random.csv")[1:]]
    assert rand == sorted(rand, reverse=True)


def test_smooth_compare_outputs(tmp_path):
    args = ["smooth-compare", "--out", tmp_path, *SMALL, "--set", "smooth_compare.points=6",
            "--set", "smooth_compare.modes=[\"random\",\"fixed\",\"cycle\"]"]
    assert run(*args) == 0
    rows = read_csv(tmp_path / "smooth_compare.csv")
    assert rows[0] == ["n", "mode", "robust_accuracy", "ci95"]
    assert len(rows) == 1 + 6 * 3
    by = {(r[0], r[1]): r[2] for r in rows[1:]}
    assert all(by[(n, "cycle")] == by[(n, "fixed")] for n in ("1", "2", "4", "8", "16", "32"))


def test_sweep_outputs_and_rerun(tmp_path):
    args = [*SMALL, "--set", "sweep.points=4", "--set", "sweep.dims_bins=[[1,21],[2,9]]"]
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("sweep", "--out", a, *args) == 0
    assert run("sweep", "--out", b, *args, "--workers", "3") == 0
    assert run("sweep", "--out", c, "--config", a / "sweep_table.json") == 0
    for name in ("sweep_cells.json", "sweep_table.csv", "sweep_table.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    rows = read_csv(a / "sweep_table.csv")
    assert rows[0] == ["Dims", "Bins", "Grid-sweep", "Rand-sample", "PGD1", "PGD10", "PGD20"]
    doc = json.loads((a / "sweep_table.json").read_text())
    assert doc["verdict"]["verdict"] in ("gradients unhindered", "suspected obfuscated gradients",
                                         "inconclusive")
    assert set(doc["meta"]) == {"seed", "config_hash", "versions"}
    cells = json.loads((a / "sweep_cells.json").read_text())["cells"]
    assert len(cells) == 8


def test_sweep_stochastic_exit_3(tmp_path):
    args = ["sweep", "--out", tmp_path, *SMALL, "--set", "sweep.points=2",
            "--set", "sweep.dims_bins=[[1,21]]", "--set", "sweep.smoothed=true"]
    assert run(*args, "--set", "smoothing.mode=\"random\"") == 3
    assert run(*args, "--set", "smoothing.mode=\"fixed\"", "--set", "smoothing.n=4") == 0


def test_divergence_exit_4(tmp_path):
    assert run("train", "--out", tmp_path, *SMALL, "--set", "train.learning_rate=1e300") == 4


def test_toml_config_and_precedence(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('seed = "0x2A"\n[smoothing]\nn = 8\nsigma = 0.5\n[pgd]\nsteps = 12\n')
    cfg = C.resolve(C.load_file(path), ["smoothing.n=32"], None)
    assert cfg["seed"] == 42 and cfg["smoothing"]["n"] == 32 and cfg["pgd"]["steps"] == 12
    assert cfg["smoothing"]["sigma"] == 0.5
    assert C.resolve(C.load_file(path), [], "9")["seed"] == 9
    assert "out" not in cfg and "workers" not in cfg


def test_override_parsing():
    assert C.parse_override("a.b=3") == {"a": {"b": 3}}
    assert C.parse_override("norm=linf") == {"norm": "linf"}
    assert C.parse_override("x=[1, 2]") == {"x": [1, 2]}
    with pytest.raises(C.ConfigError):
        C.parse_override("novalue")
    with pytest.raises(C.ConfigError):
        C.resolve(None, ["data=3"])


def test_typed_views_of_defaults():
    cfg = C.resolve()
    assert C.sweep_plan(cfg).dims_bins == ((1, 1001), (2, 51), (3, 21), (4, 11), (5, 9), (6, 9))
    assert C.pgd_config(cfg).alpha == pytest.approx(2.5 * 0.5 / 40)
    assert C.smoothing_config(cfg).abstain_threshold is None
    assert C.compare_params(cfg).pgd.early_exit is False
