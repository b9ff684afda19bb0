"""Command-line entry point: ``randaudit <command> [--config F] [--set k=v ...]``.

Exit codes: 0 success, 2 config or input error, 3 precondition violation
(stochastic classifier given to sweep), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from randaudit import config as C
from randaudit import io
from randaudit.attacks import NetClassifier
from randaudit.experiments import defense_stream, run_nag, run_smooth_compare
from randaudit.model import (Dataset, Network, TrainingDiverged, accuracy, gen_dataset,
                             load_dataset_csv, model_from_bytes, model_to_bytes,
                             save_dataset_csv, train)
from randaudit.rng import derive_stream, fisher_yates
from randaudit.smoothing import SmoothedClassifier
from randaudit.sweep import (StochasticClassifierError, obfuscation_verdict, run_sweep,
                             union_fraction_table)

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 2, 3, 4


class InputError(Exception):
    pass


# data and model resolution


def _check_files(cfg: dict, need_train: bool) -> None:
    paths = [cfg["model"]["file"], cfg["data"]["test_csv"]]
    if need_train:
        paths.append(cfg["data"]["train_csv"])
    for p in paths:
        if p and not Path(p).is_file():
            raise InputError(f"file not found: {p}")


def load_data(cfg: dict, split: str) -> Dataset:
    path = cfg["data"][f"{split}_csv"]
    if path:
        try:
            return load_dataset_csv(path, int(cfg["data"]["classes"]), split)
        except (OSError, ValueError, IndexError) as exc:
            raise InputError(f"cannot read dataset {path}: {exc}") from exc
    return gen_dataset(C.dataset_spec(cfg), derive_stream(cfg["seed"], [("data", 0)]), split)


def layer_dims(cfg: dict, data: Dataset) -> tuple:
    return (data.dim, *[int(h) for h in cfg["model"]["hidden"]], data.num_classes)


def train_model(cfg: dict, train_data: Dataset, test_data: Optional[Dataset]):
    m = cfg["model"]
    net = Network.zeros(layer_dims(cfg, train_data), m["activation"], float(m["gamma"]))
    return train(net, train_data, C.train_params(cfg), derive_stream(cfg["seed"], [("train", 0)]),
                 test_data)


def resolve_model(cfg: dict, test_data: Dataset) -> Network:
    """Load ``model.file`` or train inline from the data config."""
    path = cfg["model"]["file"]
    if path:
        try:
            net, _ = model_from_bytes(Path(path).read_bytes())
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read model {path}: {exc}") from exc
    else:
        net, _ = train_model(cfg, load_data(cfg, "train"), None)
    if net.input_dim != test_data.dim or net.num_classes != test_data.num_classes:
        raise InputError(f"model shape {net.layer_dims} does not fit data "
                         f"(dim {test_data.dim}, {test_data.num_classes} classes)")
    return net


def select_points(cfg: dict, data: Dataset, count: int) -> np.ndarray:
    """Pick ``count`` test indices with a seeded shuffle, returned sorted."""
    if count >= len(data):
        return np.arange(len(data))
    order = fisher_yates(derive_stream(cfg["seed"], [("select", 0)]), len(data))
    return np.sort(order[:count])


# commands


def cmd_gen_data(cfg: dict, out: Path, workers: int) -> None:
    stream = derive_stream(cfg["seed"], [("data", 0)])
    spec = C.dataset_spec(cfg)
    for split in ("train", "test"):
        save_dataset_csv(gen_dataset(spec, stream, split), out / f"{split}.csv",
                         io.comment_lines(cfg))


def cmd_train(cfg: dict, out: Path, workers: int) -> None:
    train_data = load_data(cfg, "train")
    test_data = load_data(cfg, "test")
    net, hist = train_model(cfg, train_data, test_data)
    meta = {"config": cfg, "run": io.run_meta(cfg)}
    (out / "model.bin").write_bytes(model_to_bytes(net, meta))
    rows = zip(hist.epoch, hist.loss, hist.train_acc, hist.test_acc)
    io.write_csv(out / "history.csv", ["epoch", "loss", "train_acc", "test_acc"], rows, cfg)
    io.write_json(out / "train.json", {
        "layer_dims": list(net.layer_dims),
        "train_accuracy": accuracy(net, train_data),
        "test_accuracy": accuracy(net, test_data),
        "epochs": len(hist.epoch),
    }, cfg)


def cmd_nag(cfg: dict, out: Path, workers: int) -> None:
    test_data = load_data(cfg, "test")
    net = resolve_model(cfg, test_data)
    idx = select_points(cfg, test_data, int(cfg["nag"]["points"]))
    params = C.nag_params(cfg)
    curves = run_nag(net, test_data.points[idx], test_data.labels[idx], idx, params,
                     cfg["seed"], workers)
    for mode, curve in curves.items():
        rows = zip(curve.trial_counts, curve.robust_accuracy, curve.ci95_halfwidth)
        io.write_csv(out / f"nag_{mode}.csv", ["N", "robust_accuracy", "ci95"], rows, cfg)
    io.write_json(out / "nag.json", {"curves": {m: c.to_dict() for m, c in curves.items()}}, cfg)


def cmd_smooth_compare(cfg: dict, out: Path, workers: int) -> None:
    test_data = load_data(cfg, "test")
    net = resolve_model(cfg, test_data)
    idx = select_points(cfg, test_data, int(cfg["smooth_compare"]["points"]))
    rows = run_smooth_compare(net, test_data.points[idx], test_data.labels[idx], idx,
                              C.compare_params(cfg), cfg["seed"], workers)
    header = ["n", "mode", "robust_accuracy", "ci95"]
    io.write_csv(out / "smooth_compare.csv", header, ([r[h] for h in header] for r in rows), cfg)
    io.write_json(out / "smooth_compare.json", {"points": len(idx), "rows": rows}, cfg)


def sweep_classifier(cfg: dict, net: Network):
    if not cfg["sweep"]["smoothed"]:
        return NetClassifier(net)
    scfg = C.smoothing_config(cfg)
    if not scfg.deterministic:
        raise StochasticClassifierError("random-mode smoothing cannot be swept; "
                                        "use smoothing.mode = fixed or cycle")
    return SmoothedClassifier(net, scfg, defense_stream(cfg["seed"], 0, scfg.mode, scfg.n))


def cmd_sweep(cfg: dict, out: Path, workers: int) -> None:
    test_data = load_data(cfg, "test")
    net = resolve_model(cfg, test_data)
    classifier = sweep_classifier(cfg, net)
    plan = C.sweep_plan(cfg)
    idx = select_points(cfg, test_data, int(cfg["sweep"]["points"]))
    results = run_sweep(classifier, test_data.points[idx], test_data.labels[idx], idx, plan,
                        cfg["seed"], workers)
    tag = cfg["model"]["tag"] or net.activation
    table = union_fraction_table(results, plan.dims_bins, plan.methods, tag,
                                 plan.include_clean_errors)
    verdict = obfuscation_verdict(table, float(cfg["sweep"]["verdict_margin"]))
    bins = dict(plan.dims_bins)
    cells = [{"datapoint_id": dp, "dims": k, "bins": bins[k],
              "outcomes": {m: o.to_dict() for m, o in cell.items()}}
             for (dp, k), cell in results.items()]
    io.write_json(out / "sweep_cells.json", {"cells": cells}, cfg)
    csv_rows = table.csv_rows()
    io.write_csv(out / "sweep_table.csv", csv_rows[0], csv_rows[1:], cfg)
    io.write_json(out / "sweep_table.json", {"table": table.to_dict(), "verdict": verdict}, cfg)


COMMANDS = {
    "gen-data": (cmd_gen_data, "write synthetic train/test CSVs"),
    "train": (cmd_train, "train a model and write model.bin + history.csv"),
    "nag": (cmd_nag, "robust accuracy under N repeated queries"),
    "smooth-compare": (cmd_smooth_compare, "PGD robust accuracy of smoothing vs n"),
    "sweep": (cmd_sweep, "subspace grid-sweep vulnerability tables"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randaudit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config, or a JSON output file to re-run")
        p.add_argument("--seed", help="global seed (decimal or 0x hex); overrides the config")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key override, e.g. --set smoothing.n=32")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        if args.workers < 1:
            raise C.ConfigError("--workers must be >= 1")
        file_cfg = C.load_file(args.config) if args.config else None
        cfg = C.resolve(file_cfg, args.set, args.seed)
        _check_files(cfg, need_train=args.command == "train"
                     or (args.command != "gen-data" and not cfg["model"]["file"]))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn(cfg, out, args.workers)
    except (C.ConfigError, InputError) as exc:
        print(f"randaudit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StochasticClassifierError as exc:
        print(f"randaudit: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"randaudit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
