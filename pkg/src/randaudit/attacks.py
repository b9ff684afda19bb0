"""Untargeted PGD in the full input space or restricted to a subspace."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from randaudit.model import Network
from randaudit.rng import StreamSeed
from randaudit.subspace import (L2, LINF, Subspace, check_norm, lift, project_coords,
                                sample_ball, vector_norm)


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float = 0.5
    norm: str = L2
    steps: int = 40
    step_size: Optional[float] = None  # None -> 2.5 * epsilon / steps
    restarts: int = 1
    random_start: bool = True
    # False: no clean check or per-step checks, only each restart's final
    # iterate is classified (one query per restart)
    early_exit: bool = True

    def __post_init__(self):
        object.__setattr__(self, "norm", check_norm(self.norm))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be >= 1")
        if self.step_size is not None and not 0 < self.step_size <= 2 * self.epsilon:
            raise ValueError("step_size must lie in (0, 2 * epsilon]")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


@dataclass
class SearchOutcome:
    datapoint_id: int
    method: str
    found: bool
    adversarial_point: Optional[np.ndarray]
    distance: Optional[float]
    queries: int
    clean_error: bool = False
    hits: Optional[int] = None  # adversarial grid/sample points, exhaustive scans only

    def to_dict(self, with_point: bool = True) -> dict:
        out = {
            "datapoint_id": self.datapoint_id,
            "method": self.method,
            "found": self.found,
            "distance": self.distance,
            "queries": self.queries,
            "clean_error": self.clean_error,
        }
        if self.hits is not None:
            out["hits"] = self.hits
        if with_point:
            out["adversarial_point"] = (None if self.adversarial_point is None
                                        else [float(v) for v in self.adversarial_point])
        return out


class NetClassifier:
    """Adapter giving a plain network the classifier interface used by attacks."""

    deterministic = True

    def __init__(self, net: Network):
        self.net = net

    @property
    def num_classes(self) -> int:
        return self.net.num_classes

    def predict(self, x) -> int:
        return int(self.net.predict(x))

    def predict_batch(self, xs) -> np.ndarray:
        return self.net.predict(np.atleast_2d(xs))

    def gradient(self, x, y) -> np.ndarray:
        return self.net.input_gradient(x, y)

    def probe(self, x):
        return self.net.logits(x).tolist()


def step_direction(g: np.ndarray, norm: str) -> np.ndarray:
    if norm == LINF:
        return np.sign(g)
    n = float(np.sqrt(np.dot(g, g)))
    if n == 0.0:
        return np.zeros_like(g)
    return g / n


def _checked(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("gradient function returned non-finite values")
    return g


def method_name(restarts: int) -> str:
    return f"pgd{restarts}"


def _run(predict_fn, x, y, cfg: PgdConfig, stream: StreamSeed, budgets: Sequence[int],
         start_fn, step_fn, to_point, datapoint_id: int) -> List[SearchOutcome]:
    """Shared restart loop.

    ``start_fn(r)`` gives the initial state of restart r, ``step_fn(state)``
    one projected step and ``to_point(state)`` the evaluated input point.
    Restart r only ever reads the stream tagged ("restart", r), so a run with
    R restarts is a prefix of a run with more. One outcome per budget.
    """
    budgets = sorted(set(int(b) for b in budgets))
    early = cfg.early_exit
    queries = 0
    if early:
        queries = 1
        if predict_fn(x) != y:
            return [SearchOutcome(datapoint_id, method_name(b), True, np.array(x, dtype=np.float64),
                                  0.0, 1, clean_error=True) for b in budgets]
    hit = None
    hit_queries = {}
    for r in range(budgets[-1]):
        state = start_fn(stream.child(("restart", r)))
        point = to_point(state)
        if early and cfg.random_start:
            queries += 1
            if predict_fn(point) != y:
                hit = (r, point)
                break
        for _ in range(cfg.steps):
            state = step_fn(state)
            point = to_point(state)
            if early:
                queries += 1
                if predict_fn(point) != y:
                    hit = (r, point)
                    break
        if not early:
            queries += 1
            if predict_fn(point) != y:
                hit = (r, point)
        if hit is not None:
            break
        hit_queries[r + 1] = queries

    outcomes = []
    for b in budgets:
        if hit is not None and hit[0] < b:
            point = hit[1]
            dist = float(vector_norm(point - x, cfg.norm))
            outcomes.append(SearchOutcome(datapoint_id, method_name(b), True, point, dist, queries))
        else:
            outcomes.append(SearchOutcome(datapoint_id, method_name(b), False, None, None,
                                          hit_queries[b]))
    return outcomes


def pgd_budgets(predict_fn: Callable, grad_fn: Callable, x, y: int, cfg: PgdConfig,
                stream: StreamSeed, budgets: Sequence[int], datapoint_id: int = 0):
    """Full-space PGD evaluated at several restart budgets in a single run."""
    x = np.asarray(x, dtype=np.float64)
    alpha = cfg.alpha

    def start(rs):
        if not cfg.random_start:
            return x.copy()
        delta = sample_ball(cfg.epsilon, cfg.norm, x.shape[0], 1, rs)[0]
        return np.clip(x + delta, 0.0, 1.0)

    def step(xt):
        g = _checked(grad_fn(xt, y))
        moved = xt + alpha * step_direction(g, cfg.norm)
        return np.clip(x + project_coords(moved - x, cfg.epsilon, cfg.norm), 0.0, 1.0)

    return _run(predict_fn, x, y, cfg, stream, budgets, start, step, lambda s: s, datapoint_id)


def pgd_attack(predict_fn: Callable, grad_fn: Callable, x, y: int, cfg: PgdConfig,
               stream: StreamSeed, datapoint_id: int = 0) -> SearchOutcome:
    return pgd_budgets(predict_fn, grad_fn, x, y, cfg, stream, [cfg.restarts], datapoint_id)[0]


def subspace_pgd_budgets(predict_fn: Callable, grad_fn: Callable, sub: Subspace, anchor, y: int,
                         cfg: PgdConfig, stream: StreamSeed, budgets: Sequence[int],
                         datapoint_id: int = 0):
    """PGD over subspace coordinates; gradients pulled back through the lift."""
    anchor = np.asarray(anchor, dtype=np.float64)
    basis = sub.basis
    alpha = cfg.alpha

    def start(rs):
        if not cfg.random_start:
            return np.zeros(sub.dim_k)
        return sample_ball(cfg.epsilon, cfg.norm, sub.dim_k, 1, rs)[0]

    def step(c):
        raw = anchor + c @ basis
        point = np.clip(raw, 0.0, 1.0)
        g = _checked(grad_fn(point, y))
        # clamp has zero derivative on clipped components
        g = np.where((raw < 0.0) | (raw > 1.0), 0.0, g)
        gc = basis @ g
        return project_coords(c + alpha * step_direction(gc, cfg.norm), cfg.epsilon, cfg.norm)

    def to_point(c):
        return lift(sub, anchor, c, cfg.norm)[0]

    return _run(predict_fn, anchor, y, cfg, stream, budgets, start, step, to_point, datapoint_id)


def subspace_pgd(predict_fn: Callable, grad_fn: Callable, sub: Subspace, anchor, y: int,
                 cfg: PgdConfig, stream: StreamSeed, datapoint_id: int = 0) -> SearchOutcome:
    return subspace_pgd_budgets(predict_fn, grad_fn, sub, anchor, y, cfg, stream,
                                [cfg.restarts], datapoint_id)[0]
