"""Random orthonormal subspaces, grid enumeration and uniform-in-ball sampling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from randaudit.rng import StreamSeed

L2 = "l2"
LINF = "linf"
NORMS = (L2, LINF)

DEFAULT_GRID_CAP = 10**8
_REDRAW_TOL = 1e-8
# filter slack for the closed L2 ball
_BALL_TOL = 1e-12


def check_norm(norm: str) -> str:
    norm = str(norm).lower()
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    return norm


def vector_norm(v: np.ndarray, norm: str, axis=None) -> np.ndarray:
    if norm == LINF:
        return np.max(np.abs(v), axis=axis, initial=0.0)
    return np.sqrt(np.sum(v * v, axis=axis))


@dataclass(frozen=True)
class Subspace:
    basis: np.ndarray  # (K, D), orthonormal rows

    @property
    def dim_k(self) -> int:
        return self.basis.shape[0]

    @property
    def dim_d(self) -> int:
        return self.basis.shape[1]

    def orthonormality_error(self) -> float:
        gram = self.basis @ self.basis.T
        return float(np.max(np.abs(gram - np.eye(self.dim_k))))


@dataclass(frozen=True)
class GridSpec:
    bins: int
    epsilon: float
    norm: str = L2

    def __post_init__(self):
        if self.bins < 3 or self.bins % 2 == 0:
            raise ValueError(f"bins must be odd and >= 3, got {self.bins}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "norm", check_norm(self.norm))

    def axis_values(self) -> np.ndarray:
        # integer numerator keeps the axis exactly symmetric about 0
        m = 2.0 * np.arange(self.bins, dtype=np.float64) - (self.bins - 1)
        return (m / (self.bins - 1)) * self.epsilon


def make_basis(stream: StreamSeed, k: int, d: int) -> Subspace:
    """Orthonormalize ``k`` Gaussian ``d``-vectors with modified Gram-Schmidt.

    A vector that collapses below ``1e-8`` after orthogonalization is redrawn
    from the same stream.
    """
    if k < 1 or k > d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    rows = []
    while len(rows) < k:
        v = stream.gaussians(d)
        for q in rows:
            v = v - np.dot(q, v) * q
        norm = np.linalg.norm(v)
        if norm < _REDRAW_TOL:
            continue
        rows.append(v / norm)
    return Subspace(np.array(rows))


def grid_count_upper(spec: GridSpec, k: int) -> int:
    return spec.bins**k


def iter_grid_chunks(spec: GridSpec, k: int, chunk: int = 65536,
                     cap: int = DEFAULT_GRID_CAP) -> Iterator[np.ndarray]:
    """Yield the grid in row-major order as ``(m, k)`` coordinate blocks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total = grid_count_upper(spec, k)
    if total > cap:
        raise ValueError(f"grid of {spec.bins}^{k} = {total} points exceeds cap {cap}")
    axis = spec.axis_values()
    powers = spec.bins ** np.arange(k - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total), dtype=np.int64)
        idx = (flat[:, None] // powers[None, :]) % spec.bins
        coords = axis[idx]
        if spec.norm == L2:
            keep = np.sqrt(np.sum(coords * coords, axis=1)) <= spec.epsilon + _BALL_TOL
            coords = coords[keep]
        if len(coords):
            yield coords


def grid_coords(spec: GridSpec, k: int, cap: int = DEFAULT_GRID_CAP) -> np.ndarray:
    blocks = list(iter_grid_chunks(spec, k, cap=cap))
    if not blocks:
        return np.zeros((0, k))
    return np.concatenate(blocks)


def grid_size(spec: GridSpec, k: int, cap: int = DEFAULT_GRID_CAP) -> int:
    if spec.norm == LINF:
        total = grid_count_upper(spec, k)
        if total > cap:
            raise ValueError(f"grid of {spec.bins}^{k} = {total} points exceeds cap {cap}")
        return total
    return sum(len(b) for b in iter_grid_chunks(spec, k, cap=cap))


def brute_force_count(spec: GridSpec, k: int) -> int:
    """Slow reference count via itertools; for cross-checking ``grid_size``."""
    axis = [float(v) for v in spec.axis_values()]
    if spec.norm == LINF:
        return sum(1 for _ in itertools.product(axis, repeat=k))
    limit = spec.epsilon + _BALL_TOL
    return sum(1 for c in itertools.product(axis, repeat=k)
               if sum(x * x for x in c) ** 0.5 <= limit)


def sample_coords(spec: GridSpec, k: int, count: int, stream: StreamSeed) -> np.ndarray:
    """``count`` points uniform in the k-dimensional epsilon ball."""
    return sample_ball(spec.epsilon, spec.norm, k, count, stream)


def sample_ball(epsilon: float, norm: str, k: int, count: int, stream: StreamSeed) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    eps = epsilon
    if norm == LINF:
        u = stream.uniforms(count * k).reshape(count, k)
        return np.clip(-eps + 2.0 * eps * u, -eps, eps)
    # draw layout: count*k gaussians for directions, then count radii
    g = stream.gaussians(count * k).reshape(count, k)
    n = np.sqrt(np.sum(g * g, axis=1))
    g[n == 0.0] = np.eye(k)[0]
    n[n == 0.0] = 1.0
    r = eps * stream.uniforms(count) ** (1.0 / k)
    out = g / n[:, None] * r[:, None]
    norms = np.sqrt(np.sum(out * out, axis=1))
    over = norms > eps
    if np.any(over):
        out[over] *= (eps / norms[over] * (1.0 - 1e-15))[:, None]
    return out


def lift(sub: Subspace, anchor: np.ndarray, c: np.ndarray, norm: str = L2):
    """Map subspace coordinates to a point in [0,1]^D.

    Returns ``(point, achieved_distance)``, where the distance is measured after
    clamping to the unit cube. Accepts a batch of coordinates ``(m, K)`` too.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if anchor.shape != (sub.dim_d,) or c.shape[-1] != sub.dim_k:
        raise ValueError(
            f"dimension mismatch: basis {sub.basis.shape}, anchor {anchor.shape}, coords {c.shape}"
        )
    point = lift_points(sub, anchor, c)
    dist = vector_norm(point - anchor, norm, axis=-1)
    return point, dist


def lift_points(sub: Subspace, anchor: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``lift`` without the distance, for bulk scans."""
    return np.clip(anchor + c @ sub.basis, 0.0, 1.0)


def project_coords(c: np.ndarray, epsilon: float, norm: str) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if norm == LINF:
        return np.clip(c, -epsilon, epsilon)
    n = float(np.sqrt(np.dot(c, c)))
    if n > epsilon:
        return c * (epsilon / n)
    return c
