"""Splittable SplitMix64 substreams.

Every stochastic quantity in the package is drawn from a stream derived from
a 64-bit global seed and a tag path such as ``[("datapoint", 3), ("basis", 2)]``.
Derivation is a pure function, so results never depend on scheduling.

The scalar path (``next_uniform``) and the vectorized path (``uniforms``)
produce bit-identical draws; the vectorized one just evaluates many SplitMix64
outputs at once with wrapping uint64 arithmetic.
"""

from __future__ import annotations

from typing import Iterable, Sequence, Tuple

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

# smallest positive uniform the generator can return (1 * 2**-53)
_TINY = 2.0 ** -53

Tag = Tuple[str, int]


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def splitmix64(x: int) -> int:
    """One SplitMix64 step from state ``x``: add the golden gamma, then mix."""
    return _finalize((x + GAMMA) & MASK64)


def fnv1a_64(label: str) -> int:
    data = label.encode("ascii")
    if len(data) > 16:
        raise ValueError(f"tag label longer than 16 bytes: {label!r}")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def parse_seed(value) -> int:
    """Accept an int, a decimal string or a 0x-prefixed hex string."""
    if isinstance(value, bool):
        raise ValueError("seed must be an integer")
    if isinstance(value, int):
        seed = value
    else:
        text = str(value).strip().lower()
        seed = int(text, 16) if text.startswith("0x") else int(text, 10)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed out of 64-bit unsigned range: {value!r}")
    return seed


class StreamSeed:
    """Mutable SplitMix64 state. Each task owns its stream exclusively."""

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & MASK64

    def __repr__(self):
        return f"StreamSeed(0x{self.state:016X})"

    def __eq__(self, other):
        return isinstance(other, StreamSeed) and other.state == self.state

    def __hash__(self):
        return hash(self.state)

    def copy(self) -> "StreamSeed":
        return StreamSeed(self.state)

    def child(self, *tags: Tag) -> "StreamSeed":
        """Derive a substream from the current state without advancing it."""
        return StreamSeed(_fold(self.state, tags))

    # scalar draws

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return _finalize(self.state)

    def next_uniform(self) -> float:
        return (self.next_u64() >> 11) * _TINY

    def next_gaussian(self, sigma: float = 1.0) -> float:
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        return float(self.gaussians(1, sigma)[0])

    # vectorized draws, bit-identical to repeated scalar calls

    def u64s(self, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be nonnegative")
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * GAMMA) & MASK64
        return z

    def uniforms(self, count: int) -> np.ndarray:
        return (self.u64s(count) >> np.uint64(11)).astype(np.float64) * _TINY

    def gaussians(self, count: int, sigma: float = 1.0) -> np.ndarray:
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        u = self.uniforms(2 * count).reshape(count, 2)
        return box_muller(u[:, 0], u[:, 1], sigma)


def box_muller(u1, u2, sigma: float = 1.0):
    """Cosine branch of Box-Muller; ``u1 == 0`` maps to the smallest draw.

    Always evaluated with numpy ufuncs (libm ``log`` can differ in the last
    bit), so scalar and vector draws agree exactly.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    u1 = np.where(u1 == 0.0, _TINY, u1)
    z = sigma * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return float(z) if z.ndim == 0 else z


def _fold(state: int, tags: Iterable[Tag]) -> int:
    for label, index in tags:
        if not 0 <= index <= MASK64:
            raise ValueError(f"tag index out of range: {index}")
        state = splitmix64(state ^ fnv1a_64(label) ^ index)
    return state


def derive_stream(global_seed: int, tags: Sequence[Tag] = ()) -> StreamSeed:
    """Stream for ``tags`` under ``global_seed``; a pure function of both."""
    return StreamSeed(_fold(splitmix64(global_seed & MASK64), tags))


def next_uniform(stream: StreamSeed) -> float:
    return stream.next_uniform()


def next_gaussian(stream: StreamSeed, sigma: float = 1.0) -> float:
    return stream.next_gaussian(sigma)


def gaussian_vector(stream: StreamSeed, dim: int, sigma: float = 1.0) -> np.ndarray:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return stream.gaussians(dim, sigma)


def fisher_yates(stream: StreamSeed, n: int) -> np.ndarray:
    """Permutation of ``range(n)``; one uniform per swap, drawn high index first."""
    perm = np.arange(n)
    if n < 2:
        return perm
    u = stream.uniforms(n - 1)
    js = (u * np.arange(n, 1, -1)).astype(np.int64)
    for i, j in zip(range(n - 1, 0, -1), js.tolist()):
        perm[i], perm[j] = perm[j], perm[i]
    return perm
