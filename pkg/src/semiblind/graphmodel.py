"""Data types, generative models and the sampling machinery.

Conventions
-----------
* Node indices are zero-based in memory. On the wire (JSON) they are
  one-based, see :mod:`semiblind.io`.
* Signal matrices are ``N x K``: one column per slot. SVARM trajectories
  carry the initial slot ``s(0)`` in column 0 and record ``z0``.
* Every generator takes a :class:`numpy.random.Generator`. We always build
  it with :func:`make_rng`, i.e. PCG64 seeded with a 64-bit integer; normal
  variates come from numpy's ziggurat transform, which is deterministic and
  platform independent for a given numpy version.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Optional

import numpy as np

from .exceptions import InvalidSpecError, ShapeError, SingularModelError

__all__ = [
    "KRONECKER_SEED",
    "TopologyMatrix",
    "SignalMatrix",
    "SamplingSchedule",
    "ObservationSet",
    "KroneckerSpec",
    "NoiseSpec",
    "make_rng",
    "kronecker_expand",
    "sample_adjacency",
    "laplacian",
    "bandlimited_signals",
    "sem_synthesize",
    "svarm_synthesize",
    "sample_observations",
    "random_schedule",
    "rescale_to_stable",
]

#: 3x3 seed matrix of the 81-node synthetic Kronecker graph.
KRONECKER_SEED = np.array([[0.6, 0.1, 0.7], [0.3, 0.1, 0.5], [0.0, 1.0, 0.1]])

# Above this condition number I - A is treated as singular.
COND_LIMIT = 1e12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def make_rng(seed):
    """Return the package's PCG64 generator for ``seed`` (passthrough for generators)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class TopologyMatrix:
    """Weighted ``N x N`` adjacency. ``entries[i, j]`` is the edge ``j -> i``."""

    entries: np.ndarray
    zero_diag: bool = True

    def __post_init__(self):
        a = _frozen(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"adjacency must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidSpecError("adjacency has non-finite entries")
        if self.zero_diag and np.any(np.diag(a) != 0):
            raise InvalidSpecError("zero_diag is set but the diagonal is nonzero")
        object.__setattr__(self, "entries", a)

    @property
    def n(self):
        return self.entries.shape[0]

    def support(self, tol=0.0):
        """Boolean off-diagonal support ``|A| > tol``."""
        s = np.abs(self.entries) > tol
        np.fill_diagonal(s, False)
        return s

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    """Graph process, one column per slot.

    When ``z0`` is given, column 0 holds ``s(0)`` of an SVARM trajectory and
    :attr:`process` excludes it.
    """

    values: np.ndarray
    z0: Optional[np.ndarray] = None

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise ShapeError(f"signals must be 2-D (nodes x slots), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidSpecError("signals have non-finite entries")
        object.__setattr__(self, "values", v)
        if self.z0 is not None:
            z = _frozen(self.z0).ravel()
            if z.shape != (v.shape[0],):
                raise ShapeError("z0 length must equal the node count")
            object.__setattr__(self, "z0", z)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def slots(self):
        return self.values.shape[1]

    @property
    def process(self):
        """Columns ``s(1), ..., s(T)`` (all columns for SEM data)."""
        return self.values[:, 1:] if self.z0 is not None else self.values

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True, eq=False)
class SamplingSchedule:
    """Per-slot sorted index sets of sampled vertices (zero-based)."""

    n: int
    slots: tuple

    def __post_init__(self):
        if int(self.n) < 1:
            raise InvalidSpecError("node count must be positive")
        clean = []
        for t, idx in enumerate(self.slots):
            idx = np.asarray(idx, dtype=np.int64).ravel()
            if idx.size and (idx[0] < 0 or idx[-1] >= self.n or np.any(np.diff(idx) <= 0)):
                raise InvalidSpecError(
                    f"slot {t}: indices must be strictly increasing within [0, {self.n})"
                )
            idx = idx.copy()
            idx.setflags(write=False)
            clean.append(idx)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "slots", tuple(clean))

    def __len__(self):
        return len(self.slots)

    @property
    def counts(self):
        """``M(t)`` for every slot."""
        return np.array([len(s) for s in self.slots], dtype=np.int64)

    def selection_matrix(self, t):
        """The ``M(t) x N`` 0/1 row-selection matrix."""
        idx = self.slots[t]
        m = np.zeros((len(idx), self.n))
        m[np.arange(len(idx)), idx] = 1.0
        return m

    def mask(self):
        """``N x T`` boolean observability matrix."""
        w = np.zeros((self.n, len(self.slots)), dtype=bool)
        for t, idx in enumerate(self.slots):
            w[idx, t] = True
        return w

    @classmethod
    def full(cls, n, slots):
        return cls(n, tuple(np.arange(n) for _ in range(slots)))

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.shape[0], tuple(np.flatnonzero(mask[:, t]) for t in range(mask.shape[1])))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed vectors ``y(t)`` aligned with a :class:`SamplingSchedule`."""

    schedule: SamplingSchedule
    values: tuple

    def __post_init__(self):
        if len(self.values) != len(self.schedule):
            raise ShapeError(
                f"{len(self.values)} observation vectors for {len(self.schedule)} slots"
            )
        clean = []
        for t, (y, idx) in enumerate(zip(self.values, self.schedule.slots)):
            y = _frozen(y).ravel()
            if y.shape != idx.shape:
                raise ShapeError(f"slot {t}: y has length {y.size}, schedule has {idx.size}")
            if not np.all(np.isfinite(y)):
                raise InvalidSpecError(f"slot {t}: non-finite observation")
            clean.append(y)
        object.__setattr__(self, "values", tuple(clean))

    @property
    def n(self):
        return self.schedule.n

    def __len__(self):
        return len(self.values)

    @property
    def counts(self):
        return self.schedule.counts

    def masked(self):
        """Return ``(Y, W)``: zero-filled ``N x T`` data and its boolean mask."""
        w = self.schedule.mask()
        y = np.zeros(w.shape)
        for t, (v, idx) in enumerate(zip(self.values, self.schedule.slots)):
            y[idx, t] = v
        return y, w

    def backfill(self):
        """``M(t)^T y(t)`` for every slot, as an ``N x T`` array."""
        return self.masked()[0]

    @classmethod
    def from_masked(cls, y, mask):
        y = np.asarray(y, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        if y.shape != mask.shape:
            raise ShapeError("data and mask shapes differ")
        sched = SamplingSchedule.from_mask(mask)
        return cls(sched, tuple(y[idx, t] for t, idx in enumerate(sched.slots)))

    @classmethod
    def from_nan_array(cls, x):
        """Build from a ``(slots, nodes)`` array whose NaNs mark unsampled entries."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ShapeError(f"expected a 2-D (slots, nodes) array, got shape {x.shape}")
        mask = ~np.isnan(x.T)
        return cls.from_masked(np.nan_to_num(x.T), mask)

    def to_nan_array(self):
        y, w = self.masked()
        out = np.where(w, y, np.nan)
        return out.T


@dataclass(frozen=True, eq=False)
class KroneckerSpec:
    seed: np.ndarray
    order: int

    def __post_init__(self):
        s = _frozen(self.seed)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise InvalidSpecError("Kronecker seed must be a square matrix")
        if np.any(~np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
            raise InvalidSpecError("Kronecker seed entries must lie in [0, 1]")
        if int(self.order) < 1:
            raise InvalidSpecError("Kronecker order must be a positive integer")
        object.__setattr__(self, "seed", s)
        object.__setattr__(self, "order", int(self.order))


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    process_sigma: float = 1.0
    obs_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.process_sigma >= 0 and self.obs_sigma >= 0):
            raise InvalidSpecError("noise standard deviations must be nonnegative")


def kronecker_expand(spec: KroneckerSpec) -> np.ndarray:
    """Edge-probability matrix ``seed ⊗ seed ⊗ ... (order factors)``."""
    return reduce(np.kron, [spec.seed] * spec.order)


def sample_adjacency(prob, rng) -> TopologyMatrix:
    """Draw Bernoulli edges, add the transpose and clear the diagonal.

    Entries of the result are in ``{0, 1, 2}``; callers that need a binary
    graph should use :meth:`TopologyMatrix.support`.
    """
    p = np.asarray(prob, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ShapeError("probability matrix must be square")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise InvalidSpecError("edge probabilities must lie in [0, 1]")
    rng = make_rng(rng)
    a = (rng.random(p.shape) < p).astype(float)
    a = a + a.T
    np.fill_diagonal(a, 0.0)
    return TopologyMatrix(a, zero_diag=True)


def laplacian(adj) -> np.ndarray:
    """Combinatorial Laplacian ``diag(A 1) - A``."""
    a = np.asarray(adj, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("adjacency must be square")
    return np.diag(a.sum(axis=1)) - a


def low_frequency_basis(lap, bandwidth):
    """Eigenvectors of the ``bandwidth`` smallest eigenvalues of a symmetric Laplacian.

    ``numpy.linalg.eigh`` returns eigenvalues in ascending order; the stable
    argsort keeps that order on ties, so the basis is deterministic.
    """
    lap = np.asarray(lap, dtype=float)
    n = lap.shape[0]
    if not 1 <= bandwidth <= n:
        raise InvalidSpecError(f"bandwidth must be in [1, {n}], got {bandwidth}")
    if not np.allclose(lap, lap.T, atol=1e-12):
        raise InvalidSpecError("Laplacian must be symmetric")
    try:
        w, u = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        from .exceptions import NumericError

        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(w, kind="stable")
    return u[:, order[:bandwidth]]


def bandlimited_signals(lap, bandwidth, slots, rng) -> SignalMatrix:
    """Columns ``sum_i gamma_i u_i`` over the low-frequency eigenvectors, ``gamma ~ N(0, 1)``."""
    u = low_frequency_basis(lap, bandwidth)
    rng = make_rng(rng)
    gamma = rng.standard_normal((bandwidth, slots))
    return SignalMatrix(u @ gamma)


def rescale_to_stable(adj, factor=1.1):
    """Divide ``A`` by ``factor * rho(A)`` when its spectral radius is at least 1."""
    a = np.asarray(adj, dtype=float)
    rho = np.max(np.abs(np.linalg.eigvals(a))) if a.size else 0.0
    if rho >= 1:
        a = a / (factor * rho)
    if isinstance(adj, TopologyMatrix):
        return TopologyMatrix(a, zero_diag=adj.zero_diag)
    return a


def _check_invertible(m, what):
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularModelError(f"{what} is singular", cond)
    return cond


def sem_signals_from_noise(adj, noise) -> np.ndarray:
    """Solve ``(I - A) s(t) = e(t)`` for every column of ``noise``."""
    a = np.asarray(adj, dtype=float)
    ima = np.eye(a.shape[0]) - a
    _check_invertible(ima, "I - A")
    return np.linalg.solve(ima, np.asarray(noise, dtype=float))


def sem_synthesize(adj, noise: NoiseSpec, slots, rescale=False, return_noise=False):
    """Draw ``e(t) ~ N(0, sigma^2 I)`` and return ``s(t) = (I - A)^{-1} e(t)``.

    Parameters
    ----------
    adj : TopologyMatrix or array_like
    noise : NoiseSpec
        ``process_sigma`` scales ``e``; ``seed`` seeds the generator.
    slots : int
    rescale : bool, default False
        Apply :func:`rescale_to_stable` to ``A`` first.
    return_noise : bool, default False
        Also return the ``N x slots`` noise draws.
    """
    a = np.asarray(adj, dtype=float)
    if rescale:
        a = rescale_to_stable(a)
    rng = make_rng(noise.seed)
    e = noise.process_sigma * rng.standard_normal((a.shape[0], slots))
    s = SignalMatrix(sem_signals_from_noise(a, e))
    return (s, e) if return_noise else s


def svarm_synthesize(a0, a1, z0, noise: NoiseSpec, slots, return_noise=False):
    """Simulate ``s(t) = A0 s(t) + A1 s(t-1) + e(t)`` for ``t = 1..slots``.

    ``s(0) = z0 + e(0)``. The returned matrix has ``slots + 1`` columns and
    records ``z0``.
    """
    a0 = np.asarray(a0, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    n = a0.shape[0]
    if a0.shape != (n, n) or a1.shape != (n, n):
        raise ShapeError("A0 and A1 must both be N x N")
    z0 = np.asarray(z0, dtype=float).ravel()
    if z0.shape != (n,):
        raise ShapeError("z0 length must equal the node count")
    ima = np.eye(n) - a0
    _check_invertible(ima, "I - A0")
    rng = make_rng(noise.seed)
    e = noise.process_sigma * rng.standard_normal((n, slots + 1))
    s = np.empty((n, slots + 1))
    s[:, 0] = z0 + e[:, 0]
    for t in range(1, slots + 1):
        s[:, t] = np.linalg.solve(ima, a1 @ s[:, t - 1] + e[:, t])
    out = SignalMatrix(s, z0=z0)
    return (out, e) if return_noise else out


def sample_observations(signals, schedule: SamplingSchedule, noise: NoiseSpec, rng=None):
    """``y(t) = M(t) s(t) + eps(t)`` with ``eps ~ N(0, obs_sigma^2 I)``.

    For SVARM trajectories the initial column is skipped, so the schedule
    covers slots ``1..T``.
    """
    if isinstance(signals, SignalMatrix):
        s = signals.process
    else:
        s = np.asarray(signals, dtype=float)
    if schedule.n != s.shape[0]:
        raise ShapeError(f"schedule has {schedule.n} nodes, signals have {s.shape[0]}")
    if len(schedule) != s.shape[1]:
        raise ShapeError(f"schedule has {len(schedule)} slots, signals have {s.shape[1]}")
    rng = make_rng(noise.seed if rng is None else rng)
    ys = []
    for t, idx in enumerate(schedule.slots):
        y = s[idx, t]
        if noise.obs_sigma > 0:
            y = y + noise.obs_sigma * rng.standard_normal(len(idx))
        ys.append(y)
    return ObservationSet(schedule, tuple(ys))


def random_schedule(n, samples_per_slot, slots, rng) -> SamplingSchedule:
    """Uniform ``M``-subsets of the vertices, drawn independently per slot."""
    if not 0 <= samples_per_slot <= n:
        raise InvalidSpecError(f"samples per slot must be in [0, {n}], got {samples_per_slot}")
    rng = make_rng(rng)
    sets = [np.sort(rng.choice(n, size=samples_per_slot, replace=False)) for _ in range(slots)]
    return SamplingSchedule(n, tuple(sets))
