"""Majority-vote smoothing over Gaussian-corrupted copies of the input.

Three modes share one code path and differ only in which substream supplies
the corruption set for a given call:

* ``random``: tag ``("call", call_index)``, a fresh set on every call;
* ``fixed``: tag ``("call", 0)``, the same set for every call;
* ``cycle``: tag ``("call", call_index % k)``, rotating through k sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from randaudit.model import Network
from randaudit.rng import StreamSeed

RANDOM = "random"
FIXED = "fixed"
CYCLE = "cycle"
MODES = (RANDOM, FIXED, CYCLE)

ABSTAIN = -1


@dataclass(frozen=True)
class SmoothingConfig:
    n: int = 16
    sigma: float = 0.25
    mode: str = FIXED
    cycle_k: int = 1
    abstain_threshold: Optional[float] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cycle_k < 1:
            raise ValueError("cycle_k must be >= 1")
        if self.abstain_threshold is not None and not 0.0 <= self.abstain_threshold <= 1.0:
            raise ValueError("abstain_threshold must lie in [0, 1]")

    @property
    def deterministic(self) -> bool:
        return self.mode != RANDOM

    def call_tag(self, call_index: int) -> int:
        if self.mode == RANDOM:
            return call_index
        if self.mode == FIXED:
            return 0
        return call_index % self.cycle_k


def corruption_set(cfg: SmoothingConfig, call_index: int, d: int,
                   stream_base: StreamSeed) -> np.ndarray:
    """``(n, d)`` Gaussian corruptions for prediction number ``call_index``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    stream = stream_base.child(("call", cfg.call_tag(call_index)))
    return stream.gaussians(cfg.n * d, cfg.sigma).reshape(cfg.n, d)


def vote(labels: np.ndarray, num_classes: int, abstain_threshold: Optional[float] = None):
    """Majority label (lowest index on ties) and per-class counts."""
    counts = np.bincount(labels, minlength=num_classes)
    label = int(np.argmax(counts))
    if abstain_threshold is not None and counts[label] / counts.sum() < abstain_threshold:
        label = ABSTAIN
    return label, counts


def smoothed_predict(net: Network, cfg: SmoothingConfig, x: np.ndarray, call_index: int,
                     stream_base: StreamSeed):
    """Returns ``(label, counts)``; ``label`` may be ``ABSTAIN``."""
    x = np.asarray(x, dtype=np.float64)
    noisy = np.clip(x + corruption_set(cfg, call_index, x.shape[0], stream_base), 0.0, 1.0)
    return vote(net.predict(noisy), net.num_classes, cfg.abstain_threshold)


def smoothed_loss_gradient(net: Network, cfg: SmoothingConfig, x: np.ndarray, y: int,
                           call_index: int, stream_base: StreamSeed) -> np.ndarray:
    """Mean input gradient of cross-entropy over the corrupted copies.

    The clamp to [0,1] passes gradients straight through except on components
    it actually clipped, which get zero.
    """
    x = np.asarray(x, dtype=np.float64)
    raw = x + corruption_set(cfg, call_index, x.shape[0], stream_base)
    noisy = np.clip(raw, 0.0, 1.0)
    grads = net.input_gradient(noisy, y)
    grads = np.where((raw < 0.0) | (raw > 1.0), 0.0, grads)
    return grads.mean(axis=0)


class SmoothedClassifier:
    """Callable view of a smoothed network with an internal call counter.

    Every ``predict`` or ``gradient`` call consumes one call index, so in
    random mode each query sees fresh corruptions. Instances are cheap; make
    one per task rather than sharing.
    """

    def __init__(self, net: Network, cfg: SmoothingConfig, stream_base: StreamSeed,
                 start_index: int = 0):
        self.net = net
        self.cfg = cfg
        self.stream_base = stream_base
        self.calls = start_index

    @property
    def deterministic(self) -> bool:
        return self.cfg.deterministic

    @property
    def num_classes(self) -> int:
        return self.net.num_classes

    def _next(self) -> int:
        i = self.calls
        self.calls += 1
        return i

    def predict_counts(self, x):
        return smoothed_predict(self.net, self.cfg, x, self._next(), self.stream_base)

    def predict(self, x) -> int:
        return self.predict_counts(x)[0]

    def predict_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.predict(x) for x in np.atleast_2d(xs)], dtype=np.int64)

    def gradient(self, x, y) -> np.ndarray:
        return smoothed_loss_gradient(self.net, self.cfg, x, y, self._next(), self.stream_base)

    def probe(self, x):
        """Fingerprint used by the stochasticity check."""
        return self.predict_counts(x)[1].tolist()
