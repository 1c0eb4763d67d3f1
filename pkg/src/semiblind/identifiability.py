"""Exhaustive identifiability checks for sparse SEM topologies from masked data.

Everything here enumerates subsets, so it is meant for small graphs
(tens of nodes, sparsity 1 or 2). Every search is lexicographic and returns
the first witness found, so verdicts are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Optional, Tuple

import numpy as np

from .exceptions import BudgetExceededError, InconsistentDataError, InvalidSpecError, NonIdentifiableError, ShapeError
from .graphmodel import ObservationSet, TopologyMatrix

__all__ = [
    "MaskedObservationMatrix",
    "IdentVerdict",
    "kruskal_rank",
    "check_as1",
    "check_as2",
    "check_as3",
    "noiseless_recovery_oracle",
]

MAX_KRUSKAL_COLUMNS = 20
MAX_SUBSETS = 2_000_000
SUPPORT_TOL = 1e-12
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MaskedObservationMatrix:
    """Node-by-slot data with zeros where a node was not sampled."""

    values: np.ndarray  # N x L
    mask: np.ndarray  # N x L bool

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        m = np.array(self.mask, dtype=bool)
        if v.ndim != 2 or v.shape != m.shape:
            raise ShapeError(f"values {v.shape} and mask {m.shape} must be equal 2-D shapes")
        if not np.all(np.isfinite(v)):
            raise InvalidSpecError("values must be finite")
        v = np.where(m, v, 0.0)
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def slots(self):
        return self.values.shape[1]

    @classmethod
    def from_observations(cls, obs: ObservationSet):
        y, w = obs.masked()
        return cls(y, w)

    @classmethod
    def full(cls, values):
        v = np.asarray(values, dtype=float)
        return cls(v, np.ones(v.shape, dtype=bool))


@dataclass(frozen=True)
class IdentVerdict:
    """Outcome of an assumption check.

    ``columns`` (slots) and ``rows`` (nodes, as3 only) certify the assumption
    when ``satisfied``; otherwise ``rows`` names the failing node subset for
    as3 and ``columns`` the last subset tried for as2.
    """

    satisfied: bool
    columns: Tuple[int, ...] = ()
    rows: Optional[Tuple[int, ...]] = None
    kruskal_value: int = 0


def _full_rank_cols(m):
    """Whether the columns of ``m`` are linearly independent (numerical rank)."""
    rows, cols = m.shape
    if cols == 0:
        return True
    if rows < cols:
        return False
    sv = np.linalg.svd(m, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    if smax == 0:
        return False
    tol = max(rows, cols) * np.finfo(float).eps * smax
    return bool(sv[-1] > tol)


def _check_budget(count, budget, what):
    if count > budget:
        raise BudgetExceededError(f"{what} needs {count} subsets, budget is {budget}", budget)


def kruskal_rank(mat, max_columns=MAX_KRUSKAL_COLUMNS) -> int:
    """Largest ``k`` such that every set of ``k`` columns is linearly independent."""
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError("kruskal_rank needs a nonempty 2-D matrix")
    ncol = m.shape[1]
    if ncol > max_columns:
        raise BudgetExceededError(f"{ncol} columns exceed the exhaustive limit of {max_columns}", max_columns)
    upper = min(m.shape)
    for k in range(1, upper + 1):
        for cols in combinations(range(ncol), k):
            if not _full_rank_cols(m[:, cols]):
                return k - 1
    return upper


def check_as1(adj, sparsity) -> bool:
    """Every row has at most ``sparsity`` entries with magnitude above 1e-12."""
    a = np.asarray(adj.entries if isinstance(adj, TopologyMatrix) else adj, dtype=float)
    return bool(np.all(np.count_nonzero(np.abs(a) > SUPPORT_TOL, axis=1) <= sparsity))


def check_as2(obs: MaskedObservationMatrix, sparsity, axis="slots", max_subsets=MAX_SUBSETS) -> IdentVerdict:
    """Look for ``2S`` fully observed slots whose data has Kruskal rank ``>= 2S``.

    ``axis="slots"`` takes the Kruskal rank over the ``2S`` chosen signal
    vectors (the node-by-slot block has ``2S`` columns), i.e. asks for
    linearly independent snapshots. ``axis="nodes"`` takes it over the
    ``N`` node profiles of the ``2S``-slot block instead; that reading is
    never satisfied by noiseless SEM data with ``S >= 1`` because each node
    is a combination of its in-neighbours.
    """
    if axis not in ("slots", "nodes"):
        raise InvalidSpecError("axis must be 'slots' or 'nodes'")
    need = 2 * int(sparsity)
    if need == 0:
        return IdentVerdict(True, (), None, 0)
    full = np.flatnonzero(obs.mask.all(axis=0))
    if full.size < need:
        return IdentVerdict(False, tuple(int(c) for c in full), None, 0)
    _check_budget(comb(full.size, need), max_subsets, "as2 search")
    best = 0
    last = ()
    for cols in combinations(full.tolist(), need):
        block = obs.values[:, cols]  # N x 2S
        if axis == "slots":
            k = need if _full_rank_cols(block) else kruskal_rank(block)
        else:
            k = kruskal_rank(block.T)
        best = max(best, k)
        last = tuple(cols)
        if k >= need:
            return IdentVerdict(True, last, None, k)
    return IdentVerdict(False, last, None, best)


def check_as3(obs: MaskedObservationMatrix, sparsity, max_subsets=MAX_SUBSETS) -> IdentVerdict:
    """For every ``2S``-node set, find ``2S`` slots observing all of it with a nonsingular block."""
    need = 2 * int(sparsity)
    if need == 0:
        return IdentVerdict(True, (), (), 0)
    n = obs.n
    if n < need:
        return IdentVerdict(False, (), tuple(range(n)), 0)
    _check_budget(comb(n, need), max_subsets, "as3 row search")
    spent = 0
    first_cols = None
    for rows in combinations(range(n), need):
        cover = np.flatnonzero(obs.mask[list(rows)].all(axis=0))
        found = None
        if cover.size >= need:
            spent += comb(cover.size, need)
            _check_budget(spent, max_subsets, "as3 search")
            sub = obs.values[list(rows)]
            for cols in combinations(cover.tolist(), need):
                if _full_rank_cols(sub[:, cols]):
                    found = tuple(cols)
                    break
        if found is None:
            return IdentVerdict(False, (), tuple(rows), 0)
        if first_cols is None:
            first_cols = found
    return IdentVerdict(True, first_cols, tuple(range(need)), need)


def _row_candidates(obs, n, sparsity, tol):
    """Distinct rows ``a`` with ``supp(a)`` of size <= S solving the masked equations for node ``n``."""
    others = [j for j in range(obs.n) if j != n]
    found = []
    x, m = obs.values, obs.mask
    scale = max(1.0, float(np.linalg.norm(x[n])))
    for k in range(0, int(sparsity) + 1):
        for supp in combinations(others, k):
            use = m[n].copy()
            if k:
                use &= m[list(supp)].all(axis=0)
            rhs = x[n, use]
            design = x[list(supp)][:, use].T  # slots x k
            row = np.zeros(obs.n)
            if k == 0:
                if np.linalg.norm(rhs) <= tol * scale:
                    found.append(row)
                continue
            if design.shape[0] == 0:
                coef = np.zeros(k)
                null = np.eye(k)[0]
            else:
                coef, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=None)
                if np.linalg.norm(design @ coef - rhs) > tol * scale:
                    continue
                null = None
                if rank < k:
                    null = np.linalg.svd(design)[2][-1]
            row[list(supp)] = coef
            found.append(row)
            if null is not None:
                alt = row.copy()
                alt[list(supp)] += null * max(1.0, np.linalg.norm(coef))
                found.append(alt)
    distinct = []
    for r in found:
        if not any(np.allclose(r, d, rtol=0, atol=1e-9) for d in distinct):
            distinct.append(r)
    return distinct


def noiseless_recovery_oracle(obs: MaskedObservationMatrix, sparsity, max_candidates=MAX_SUBSETS, tol=RESIDUAL_TOL):
    """Recover an ``S``-sparse zero-diagonal ``A`` with ``x_n = sum_j a_nj x_j`` on observed slots.

    Each row is solved by brute force over supports of size at most ``S``,
    using the slots where the node and the whole candidate support are
    sampled. A support whose system is consistent but rank deficient counts
    as two distinct solutions.

    Raises
    ------
    InconsistentDataError
        Some row has no consistent sparse solution.
    NonIdentifiableError
        Some row has two distinct consistent solutions; both are attached.
    """
    n = obs.n
    total = sum(comb(n - 1, k) for k in range(int(sparsity) + 1))
    _check_budget(total * n, max_candidates, "support enumeration")
    a = np.zeros((n, n))
    for i in range(n):
        rows = _row_candidates(obs, i, sparsity, tol)
        if not rows:
            raise InconsistentDataError(i)
        if len(rows) > 1:
            raise NonIdentifiableError(i, rows[:2])
        a[i] = rows[0]
    return TopologyMatrix(a)
