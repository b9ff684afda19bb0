"""Subspace grid-sweep: brute force versus gradient search on a deterministic model.

For every datapoint and subspace dimension K, a fresh orthonormal basis is
drawn and three searches run inside the same epsilon ball: the full grid, an
equal number of uniform random samples, and subspace PGD at several restart
budgets. If PGD misses datapoints the brute-force searches find, the
gradients are suspect.
"""

from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from randaudit.attacks import PgdConfig, SearchOutcome, subspace_pgd_budgets
from randaudit.io import fmt_float
from randaudit.rng import derive_stream
from randaudit.subspace import (DEFAULT_GRID_CAP, L2, LINF, GridSpec, check_norm, grid_size,
                                iter_grid_chunks, lift, lift_points, make_basis, sample_coords)

GRID = "grid"
RANDOM = "random"
REFERENCE_DIMS_BINS = ((1, 1001), (2, 51), (3, 21), (4, 11), (5, 9), (6, 9))
DEFAULT_METHODS = (GRID, RANDOM, "pgd1", "pgd10", "pgd20")

_PGD_RE = re.compile(r"^pgd(\d+)$")
_CHUNK = 65536
_CACHE_POINTS = 2 ** 24  # unfiltered grid size below which blocks are cached

UNHINDERED = "gradients unhindered"
OBFUSCATED = "suspected obfuscated gradients"
INCONCLUSIVE = "inconclusive"


class StochasticClassifierError(RuntimeError):
    """Raised when the sweep is handed a classifier whose answers vary."""


def pgd_restarts(method: str) -> Optional[int]:
    m = _PGD_RE.match(method)
    return int(m.group(1)) if m else None


def column_label(method: str) -> str:
    if method == GRID:
        return "Grid-sweep"
    if method == RANDOM:
        return "Rand-sample"
    return f"PGD{pgd_restarts(method)}"


@dataclass(frozen=True)
class SweepPlan:
    dims_bins: Tuple[Tuple[int, int], ...] = REFERENCE_DIMS_BINS
    epsilon: float = 0.5
    norm: str = L2
    methods: Tuple[str, ...] = DEFAULT_METHODS
    pgd_steps: int = 40
    pgd_step_size: Optional[float] = None
    pgd_random_start: bool = True
    exhaustive: bool = False
    grid_cap: int = DEFAULT_GRID_CAP
    include_clean_errors: bool = False

    def __post_init__(self):
        object.__setattr__(self, "norm", check_norm(self.norm))
        object.__setattr__(self, "dims_bins", tuple((int(k), int(b)) for k, b in self.dims_bins))
        object.__setattr__(self, "methods", tuple(self.methods))
        for method in self.methods:
            if method not in (GRID, RANDOM) and not pgd_restarts(method):
                raise ValueError(f"unknown sweep method {method!r}")
        if len(set(self.methods)) != len(self.methods) or not self.methods:
            raise ValueError("methods must be a nonempty list without duplicates")
        for k, b in self.dims_bins:
            GridSpec(b, self.epsilon, self.norm)
            if k < 1:
                raise ValueError(f"subspace dimension must be >= 1, got {k}")
            if b ** k > self.grid_cap:
                raise ValueError(f"grid {b}^{k} exceeds cap {self.grid_cap}")

    def grid_spec(self, bins: int) -> GridSpec:
        return GridSpec(bins, self.epsilon, self.norm)

    @property
    def pgd_budgets(self) -> List[int]:
        return sorted(pgd_restarts(m) for m in self.methods if pgd_restarts(m))

    def pgd_config(self) -> PgdConfig:
        budgets = self.pgd_budgets
        return PgdConfig(self.epsilon, self.norm, self.pgd_steps, self.pgd_step_size,
                         budgets[-1] if budgets else 1, self.pgd_random_start)


def check_deterministic(classifier, x) -> None:
    if not getattr(classifier, "deterministic", True):
        raise StochasticClassifierError("classifier declares itself stochastic; determinize it first")
    if classifier.probe(x) != classifier.probe(x):
        raise StochasticClassifierError("two probe calls on the same input disagree")


def _scan(classifier, sub, anchor, y, blocks, norm, exhaustive, datapoint_id, method):
    """Evaluate coordinate blocks in order; stop at the first misclassification."""
    scanned = 0
    first = None
    hits = 0
    for coords in blocks:
        points = lift_points(sub, anchor, coords)
        wrong = np.flatnonzero(classifier.predict_batch(points) != y)
        if first is None and wrong.size:
            i = int(wrong[0])
            point, dist = lift(sub, anchor, coords[i], norm)
            first = (point, float(dist), scanned + i + 1)
        hits += wrong.size
        scanned += len(coords)
        if first is not None and not exhaustive:
            break
    if first is None:
        return SearchOutcome(datapoint_id, method, False, None, None, scanned,
                             hits=0 if exhaustive else None)
    point, dist, queries = first
    return SearchOutcome(datapoint_id, method, True, point, dist,
                         scanned if exhaustive else queries, hits=hits if exhaustive else None)


def _blocks(arr: np.ndarray, size: int = _CHUNK):
    for start in range(0, len(arr), size):
        yield arr[start:start + size]


@lru_cache(maxsize=8)
def _cached_grid(bins: int, epsilon: float, norm: str, k: int, cap: int):
    blocks = tuple(iter_grid_chunks(GridSpec(bins, epsilon, norm), k, _CHUNK, cap))
    for b in blocks:
        b.setflags(write=False)
    return blocks


def grid_blocks(spec: GridSpec, k: int, cap: int = DEFAULT_GRID_CAP):
    """Row-major grid blocks; grids up to ``_CACHE_POINTS`` are built once and reused."""
    if spec.bins ** k <= min(cap, _CACHE_POINTS):
        return _cached_grid(spec.bins, spec.epsilon, spec.norm, k, cap)
    return iter_grid_chunks(spec, k, _CHUNK, cap)


def _grid_count(spec: GridSpec, k: int, cap: int) -> int:
    if spec.norm == LINF or spec.bins ** k > min(cap, _CACHE_POINTS):
        return grid_size(spec, k, cap)
    return sum(len(b) for b in grid_blocks(spec, k, cap))


def sweep_datapoint(classifier, x, y: int, plan: SweepPlan, k: int, bins: int, stream,
                    datapoint_id: int = 0) -> Dict[str, SearchOutcome]:
    """All configured searches for one (datapoint, K) cell.

    ``stream`` is the datapoint's stream; the basis comes from its
    ("basis", K) child and each method from its own child.
    """
    x = np.asarray(x, dtype=np.float64)
    check_deterministic(classifier, x)
    spec = plan.grid_spec(bins)
    if classifier.predict(x) != y:
        return {m: SearchOutcome(datapoint_id, m, True, x.copy(), 0.0, 1, clean_error=True)
                for m in plan.methods}
    sub = make_basis(stream.child(("basis", k)), k, x.shape[0])
    cell = stream.child(("dims", k))
    out: Dict[str, SearchOutcome] = {}
    count = None
    if GRID in plan.methods:
        out[GRID] = _scan(classifier, sub, x, y, grid_blocks(spec, k, plan.grid_cap),
                          plan.norm, plan.exhaustive, datapoint_id, GRID)
    if RANDOM in plan.methods:
        count = _grid_count(spec, k, plan.grid_cap)
        coords = sample_coords(spec, k, count, cell.child(("random", 0)))
        out[RANDOM] = _scan(classifier, sub, x, y, _blocks(coords), plan.norm, plan.exhaustive,
                            datapoint_id, RANDOM)
    budgets = plan.pgd_budgets
    if budgets:
        results = subspace_pgd_budgets(classifier.predict, classifier.gradient, sub, x, y,
                                       plan.pgd_config(), cell.child(("pgd", 0)), budgets,
                                       datapoint_id)
        for outcome in results:
            out[outcome.method] = outcome
    return {m: out[m] for m in plan.methods}


CellKey = Tuple[int, int]  # (datapoint_id, K)


def _sweep_chunk(args):
    classifier, items, plan, seed = args
    results = {}
    for datapoint_id, x, y in items:
        stream = derive_stream(seed, [("datapoint", datapoint_id)])
        for k, bins in plan.dims_bins:
            results[(datapoint_id, k)] = sweep_datapoint(classifier, x, y, plan, k, bins,
                                                         stream, datapoint_id)
    return results


def run_sweep(classifier, points: np.ndarray, labels: Sequence[int], ids: Sequence[int],
              plan: SweepPlan, seed: int, workers: int = 1) -> Dict[CellKey, Dict[str, SearchOutcome]]:
    """Sweep every datapoint; results keyed by (datapoint_id, K) in sorted order."""
    items = [(int(i), np.asarray(p, dtype=np.float64), int(y)) for i, p, y in zip(ids, points, labels)]
    if items:
        check_deterministic(classifier, items[0][1])
    if workers <= 1 or len(items) < 2:
        merged = _sweep_chunk((classifier, items, plan, seed))
    else:
        parts = [items[w::workers] for w in range(workers)]
        merged = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_sweep_chunk, [(classifier, p, plan, seed) for p in parts if p]):
                merged.update(part)
    return {key: merged[key] for key in sorted(merged)}


# tables


@dataclass
class TableRow:
    dims: object  # K, or "summary"
    bins: Optional[int]
    found: Dict[str, int]
    union: int
    fractions: Dict[str, float]
    empty_union: bool


@dataclass
class VulnerabilityTable:
    model_tag: str
    methods: Tuple[str, ...]
    rows: List[TableRow] = field(default_factory=list)
    include_clean_errors: bool = False
    clean_errors: int = 0
    datapoints: int = 0

    @property
    def summary(self) -> TableRow:
        return next(r for r in self.rows if r.dims == "summary")

    def to_dict(self) -> dict:
        return {
            "model_tag": self.model_tag,
            "methods": list(self.methods),
            "include_clean_errors": self.include_clean_errors,
            "clean_errors": self.clean_errors,
            "datapoints": self.datapoints,
            "rows": [
                {"dims": r.dims, "bins": r.bins, "found": r.found, "union": r.union,
                 "fractions": r.fractions, "empty_union": r.empty_union}
                for r in self.rows
            ],
        }

    def csv_rows(self) -> List[List[str]]:
        header = ["Dims", "Bins"] + [column_label(m) for m in self.methods]
        rows = [header]
        for r in self.rows:
            rows.append([str(r.dims), "" if r.bins is None else str(r.bins)]
                        + [fmt_float(r.fractions[m]) for m in self.methods])
        return rows


def _fraction_row(dims, bins, found_sets: Mapping[str, set], methods) -> TableRow:
    union = set().union(*found_sets.values()) if found_sets else set()
    found = {m: len(found_sets[m]) for m in methods}
    if not union:
        return TableRow(dims, bins, found, 0, {m: 1.0 for m in methods}, True)
    return TableRow(dims, bins, found, len(union),
                    {m: len(found_sets[m]) / len(union) for m in methods}, False)


def union_fraction_table(outcomes: Mapping[CellKey, Mapping[str, SearchOutcome]],
                         dims_bins: Sequence[Tuple[int, int]], methods: Sequence[str],
                         model_tag: str = "model",
                         include_clean_errors: bool = False) -> VulnerabilityTable:
    """Per-K rows plus a summary row unioned over all K.

    A method's fraction is the share of the union of vulnerable datapoints
    (over all methods) that it found. Clean errors are left out unless
    ``include_clean_errors``.
    """
    methods = tuple(methods)
    ids_by_k: Dict[int, set] = {}
    clean = set()
    for (dp, k), cell in outcomes.items():
        if set(cell) != set(methods):
            raise ValueError(f"cell ({dp}, {k}) covers methods {sorted(cell)}, expected {sorted(methods)}")
        ids_by_k.setdefault(k, set()).add(dp)
        if any(o.clean_error for o in cell.values()):
            clean.add(dp)
    all_ids = set().union(*ids_by_k.values()) if ids_by_k else set()
    for k, ids in ids_by_k.items():
        if ids != all_ids:
            raise ValueError(f"dimension {k} covers a different datapoint set")

    table = VulnerabilityTable(model_tag, methods, include_clean_errors=include_clean_errors,
                               clean_errors=len(clean), datapoints=len(all_ids))
    total = {m: set() for m in methods}
    for k, bins in dims_bins:
        per_k = {m: set() for m in methods}
        for (dp, kk), cell in outcomes.items():
            if kk != k or (dp in clean and not include_clean_errors):
                continue
            for m in methods:
                if cell[m].found:
                    per_k[m].add(dp)
                    total[m].add(dp)
        if k in ids_by_k:
            table.rows.append(_fraction_row(k, bins, per_k, methods))
    table.rows.append(_fraction_row("summary", None, total, methods))
    return table


def obfuscation_verdict(table: VulnerabilityTable, margin: float = 0.1) -> dict:
    """Compare the strongest PGD column with grid-sweep on the summary row."""
    pgd = sorted((pgd_restarts(m), m) for m in table.methods if pgd_restarts(m))
    if GRID not in table.methods or not pgd:
        raise ValueError("verdict needs a grid column and at least one pgd column")
    fr = table.summary.fractions
    grid = fr[GRID]
    strongest = pgd[-1][1]
    ten_plus = [m for r, m in pgd if r >= 10]
    if fr[strongest] < grid - margin:
        verdict = OBFUSCATED
    elif ten_plus and fr[ten_plus[-1]] >= grid - margin:
        verdict = UNHINDERED
    else:
        verdict = INCONCLUSIVE
    return {
        "verdict": verdict,
        "margin": margin,
        "grid": grid,
        "pgd": {m: fr[m] for _, m in pgd},
        "empty_union": table.summary.empty_union,
    }
