"""Robust accuracy against an attacker who resubmits the same input N times.

A classifier that is right on ``x`` with probability ``p`` survives N
independent attempts with probability ``p**N``; a deterministic classifier has
``p`` in {0, 1} and a flat curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from randaudit.model import Network
from randaudit.rng import StreamSeed, fisher_yates

Z95 = 1.959963984540054


def group_mode_predictions(inferences: Sequence[int], n: int,
                           stream: Optional[StreamSeed]) -> np.ndarray:
    """Shuffle, cut into groups of ``n`` (remainder dropped), take each group's mode.

    ``stream=None`` skips the shuffle. Ties go to the lower label.
    """
    labels = np.asarray(inferences, dtype=np.int64)
    if n < 1 or n > len(labels):
        raise ValueError(f"group size must lie in [1, {len(labels)}], got {n}")
    if stream is not None:
        labels = labels[fisher_yates(stream, len(labels))]
    groups = len(labels) // n
    block = labels[:groups * n].reshape(groups, n)
    if n == 1:
        return block[:, 0].copy()
    width = int(labels.max()) + 1
    offsets = np.arange(groups)[:, None] * width
    counts = np.bincount((block + offsets).ravel(), minlength=groups * width).reshape(groups, width)
    return np.argmax(counts, axis=1)


def estimate_p(predictions: Sequence[int], true_label: int) -> float:
    predictions = np.asarray(predictions)
    if predictions.size == 0:
        raise ValueError("no predictions")
    return float(np.mean(predictions == true_label))


@dataclass
class NagCurve:
    per_point_p: List[Tuple[int, float]]
    trial_counts: List[int]
    robust_accuracy: List[float]
    ci95_halfwidth: List[float]

    def to_dict(self) -> dict:
        return {
            "per_point_p": [{"datapoint_id": i, "p": p} for i, p in self.per_point_p],
            "trial_counts": self.trial_counts,
            "robust_accuracy": self.robust_accuracy,
            "ci95_halfwidth": self.ci95_halfwidth,
        }


def _check_trials(trial_counts) -> List[int]:
    trials = sorted(set(int(t) for t in trial_counts))
    if not trials or trials[0] < 1:
        raise ValueError("trial counts must be >= 1")
    return trials


def nag_curve(per_point_p: Sequence[Tuple[int, float]], trial_counts: Sequence[int],
              samples: Optional[Sequence[int]] = None) -> NagCurve:
    """Mean of ``p**N`` over datapoints for each N.

    ``samples[i]`` is how many predictions estimated point i's p; the 95%
    half-width propagates each binomial variance through ``p**N`` (delta
    method) and averages over points.
    """
    ids = [int(i) for i, _ in per_point_p]
    p = np.array([float(v) for _, v in per_point_p])
    if p.size == 0:
        raise ValueError("no datapoints")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p estimates must lie in [0, 1]")
    trials = _check_trials(trial_counts)
    m = np.ones_like(p) if samples is None else np.asarray(samples, dtype=np.float64)
    acc, half = [], []
    for n in trials:
        acc.append(float(np.mean(p ** n)))
        var = (n * p ** (n - 1)) ** 2 * p * (1 - p) / m
        half.append(float(Z95 * np.sqrt(var.sum()) / p.size))
    return NagCurve(list(zip(ids, p.tolist())), trials, acc, half)


def cycle_curve(ids: Sequence[int], correct: np.ndarray, trial_counts: Sequence[int]) -> NagCurve:
    """Exact survival when predictions rotate through k fixed corruption sets.

    ``correct`` is a (points, k) boolean matrix; N attempts see seeds
    0..min(N, k)-1, so survival needs all of those to be right.
    """
    correct = np.asarray(correct, dtype=bool)
    trials = _check_trials(trial_counts)
    k = correct.shape[1]
    prefix = np.cumprod(correct, axis=1)
    acc = [float(np.mean(prefix[:, min(n, k) - 1])) for n in trials]
    p = correct.mean(axis=1)
    return NagCurve(list(zip([int(i) for i in ids], p.tolist())), trials, acc, [0.0] * len(trials))


def simulate_repeats(classifier: Callable[[np.ndarray, int], int], x, y: int, n_trials: int,
                     first_call: int = 0) -> bool:
    """Query ``classifier(x, call_index)`` up to N times; True if all answers are y."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    for i in range(n_trials):
        if classifier(x, first_call + i) != y:
            return False
    return True


def base_inferences(net: Network, x: np.ndarray, sigma: float, count: int,
                    stream: StreamSeed, chunk: int = 4096) -> np.ndarray:
    """Labels of ``count`` Gaussian-corrupted (and clamped) copies of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for start in range(0, count, chunk):
        m = min(chunk, count - start)
        noise = stream.gaussians(m * x.shape[0], sigma).reshape(m, x.shape[0])
        out.append(net.predict(np.clip(x + noise, 0.0, 1.0)))
    return np.concatenate(out)
