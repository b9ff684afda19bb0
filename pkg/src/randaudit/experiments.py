"""End-to-end evaluations behind the ``nag`` and ``smooth-compare`` commands.

Every datapoint gets its own derived streams and results are reduced in
datapoint order, so the numbers do not depend on how work is split across
processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from randaudit.attacks import PgdConfig, pgd_attack
from randaudit.model import Network
from randaudit.nagfactor import (Z95, NagCurve, base_inferences, cycle_curve, estimate_p,
                                 group_mode_predictions, nag_curve)
from randaudit.rng import derive_stream
from randaudit.smoothing import CYCLE, FIXED, RANDOM, SmoothedClassifier, SmoothingConfig, smoothed_predict


def defense_stream(seed: int, datapoint_id: int, mode: str, n: int):
    """Corruption stream base for one smoothed classifier.

    Deterministic modes reuse one base for every input, as a deployed
    fixed-seed defense would; random mode gets per-datapoint streams.
    """
    if mode == RANDOM:
        return derive_stream(seed, [("smoothing", 0), ("datapoint", datapoint_id), ("n", n)])
    return derive_stream(seed, [("smoothing", 0), ("n", n)])


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# repeated-query curves


@dataclass(frozen=True)
class NagParams:
    n: int = 16
    sigma: float = 0.25
    inferences: int = 10_000
    trial_counts: Sequence[int] = (1, 10, 100, 1000)
    modes: Sequence[str] = (RANDOM, FIXED)
    cycle_k: int = 3


def _nag_point(job):
    net, x, y, i, params, seed = job
    out = {}
    for mode in params.modes:
        if mode == RANDOM:
            labels = base_inferences(net, x, params.sigma, params.inferences,
                                     derive_stream(seed, [("datapoint", i), ("inference", 0)]))
            preds = group_mode_predictions(labels, params.n,
                                           derive_stream(seed, [("datapoint", i), ("group", params.n)]))
            out[mode] = (estimate_p(preds, y), len(preds))
        else:
            k = params.cycle_k if mode == CYCLE else 1
            cfg = SmoothingConfig(params.n, params.sigma, mode, k)
            base = defense_stream(seed, i, mode, params.n)
            correct = [smoothed_predict(net, cfg, x, c, base)[0] == y for c in range(k)]
            out[mode] = correct
    return out


def run_nag(net: Network, points, labels, ids, params: NagParams, seed: int,
            workers: int = 1) -> Dict[str, NagCurve]:
    jobs = [(net, np.asarray(x, dtype=np.float64), int(y), int(i), params, seed)
            for x, y, i in zip(points, labels, ids)]
    per_point = _map(_nag_point, jobs, workers)
    ids = [int(i) for i in ids]
    curves = {}
    for mode in params.modes:
        if mode == RANDOM:
            ps = [(i, r[mode][0]) for i, r in zip(ids, per_point)]
            samples = [r[mode][1] for r in per_point]
            curves[mode] = nag_curve(ps, params.trial_counts, samples)
        elif mode == FIXED:
            ps = [(i, 1.0 if r[mode][0] else 0.0) for i, r in zip(ids, per_point)]
            curves[mode] = nag_curve(ps, params.trial_counts)
        else:
            correct = np.array([r[mode] for r in per_point], dtype=bool)
            curves[mode] = cycle_curve(ids, correct, params.trial_counts)
    return curves


# PGD against smoothing at varying n


@dataclass(frozen=True)
class CompareParams:
    n_values: Sequence[int] = (1, 2, 4, 8, 16, 32)
    sigma: float = 0.25
    modes: Sequence[str] = (RANDOM, FIXED)
    cycle_k: int = 1
    pgd: PgdConfig = PgdConfig(early_exit=False)


def _compare_point(job):
    net, x, y, i, params, seed = job
    robust = {}
    for n in params.n_values:
        attack_stream = derive_stream(seed, [("datapoint", i), ("attack", n)])
        for mode in params.modes:
            cfg = SmoothingConfig(n, params.sigma, mode, params.cycle_k)
            clf = SmoothedClassifier(net, cfg, defense_stream(seed, i, mode, n))
            # with early_exit off the verdict is a single prediction on each
            # restart's final iterate, so random mode gets no extra draws
            outcome = pgd_attack(clf.predict, clf.gradient, x, y, params.pgd, attack_stream.copy(), i)
            robust[(n, mode)] = not outcome.found
    return robust


def run_smooth_compare(net: Network, points, labels, ids, params: CompareParams, seed: int,
                       workers: int = 1) -> List[dict]:
    """Robust accuracy of PGD-attacked smoothing, one row per (n, mode)."""
    jobs = [(net, np.asarray(x, dtype=np.float64), int(y), int(i), params, seed)
            for x, y, i in zip(points, labels, ids)]
    per_point = _map(_compare_point, jobs, workers)
    rows = []
    for n in params.n_values:
        for mode in params.modes:
            acc = float(np.mean([r[(n, mode)] for r in per_point]))
            half = float(Z95 * np.sqrt(acc * (1 - acc) / len(per_point)))
            rows.append({"n": n, "mode": mode, "robust_accuracy": acc, "ci95": half})
    return rows
