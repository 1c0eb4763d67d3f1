"""Joint inference of an SEM topology and the graph signals (JISG).

The objective is

    J(A, S) = sum_t ||s_t - A s_t||^2 + sum_t mu/M_t ||y_t - M_t s_t||^2
              + lambda1 ||A||_1 + lambda2 ||A||_F^2,   diag(A) = 0,

minimised by block coordinate descent: an ADMM topology step followed by
a per-slot signal step (gradient descent or a direct solve). Slots with no samples keep only
the graph term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._admm import elastic_net_admm, soft_threshold
from ._validation import as_adjacency, as_signals, check_observations
from .exceptions import InvalidSpecError, NumericError, ShapeError
from .graphmodel import ObservationSet, SignalMatrix, TopologyMatrix

__all__ = [
    "ArmijoParams",
    "SemConfig",
    "JisgResult",
    "sem_objective",
    "signal_objective_grad",
    "infer_signals",
    "topology_admm_sem",
    "sem_kkt_residual",
    "jisg",
    "JISG",
]


@dataclass(frozen=True)
class ArmijoParams:
    step: float = 1.0
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4

    def __post_init__(self):
        if not (self.step > 0 and 0 < self.backtrack < 1 and 0 < self.sufficient_decrease < 1):
            raise InvalidSpecError("Armijo needs step > 0 and backtrack, constant in (0, 1)")


SIGNAL_SOLVERS = ("gd", "exact")


@dataclass(frozen=True)
class SemConfig:
    """Weights and iteration controls for :func:`jisg`.

    ``signal_solver="gd"`` runs Armijo gradient descent on the signal step;
    ``"exact"`` solves each slot's normal equations directly, which is the
    point gradient descent converges to and is much faster when ``mu`` is
    large relative to ``M_t``.
    """

    mu: float = 1e4
    lambda1: float = 0.5
    lambda2: float = 0.1
    rho: float = 1.0
    gd: ArmijoParams = field(default_factory=ArmijoParams)
    tol_outer: float = 1e-6
    tol_inner: float = 1e-6
    max_outer: int = 100
    max_inner: int = 500
    max_admm: int = 1000
    seed: int = 0
    signal_solver: str = "gd"

    def __post_init__(self):
        if isinstance(self.gd, dict):
            object.__setattr__(self, "gd", ArmijoParams(**self.gd))
        if self.signal_solver not in SIGNAL_SOLVERS:
            raise InvalidSpecError(f"signal_solver must be one of {SIGNAL_SOLVERS}")
        if min(self.mu, self.lambda1, self.lambda2) < 0:
            raise InvalidSpecError("mu, lambda1 and lambda2 must be nonnegative")
        if self.rho <= 0:
            raise InvalidSpecError("rho must be positive")
        if self.tol_outer <= 0 or self.tol_inner <= 0:
            raise InvalidSpecError("tolerances must be positive")
        if min(self.max_outer, self.max_inner, self.max_admm) < 1:
            raise InvalidSpecError("iteration caps must be at least 1")


@dataclass(frozen=True, eq=False)
class JisgResult:
    adjacency: TopologyMatrix
    signals: SignalMatrix
    objective_trace: np.ndarray
    converged: bool
    iterations: int


def _fit_weights(counts, mu):
    """Per-slot ``mu / M_t`` (zero where the slot is empty)."""
    counts = np.asarray(counts, dtype=float)
    if mu == 0:
        return np.zeros_like(counts)
    return np.divide(mu, counts, out=np.zeros_like(counts), where=counts > 0)


def sem_objective(adj, signals, obs: ObservationSet, cfg: SemConfig) -> float:
    """Evaluate ``J(A, S)``; empty slots contribute no observation term."""
    a = as_adjacency(adj)
    s = as_signals(signals, a.shape[0])
    if obs.n != a.shape[0] or len(obs) != s.shape[1]:
        raise ShapeError("observations do not match the signal dimensions")
    y, w = obs.masked()
    resid = s - a @ s
    fit = np.sum(w * (y - s) ** 2, axis=0)
    return float(
        np.sum(resid**2)
        + np.dot(_fit_weights(obs.counts, cfg.mu), fit)
        + cfg.lambda1 * np.sum(np.abs(a))
        + cfg.lambda2 * np.sum(a**2)
    )


def _graph_weight(m, mu):
    # Per-slot weight on ||(I - A) s||^2 once the slot objective is scaled by M_t/mu.
    if m == 0:
        return 1.0
    if mu == 0:
        raise InvalidSpecError("mu = 0 makes the per-slot objective undefined")
    return m / mu


def signal_objective_grad(adj, s, y, sample_set, cfg):
    """Value and exact gradient of ``(M/mu)||(I - A)s||^2 + ||y - M s||^2``.

    ``cfg`` may be a :class:`SemConfig` or the scalar ``mu``. With an empty
    sample set the value reduces to ``||(I - A)s||^2``.
    """
    mu = cfg.mu if hasattr(cfg, "mu") else float(cfg)
    a = as_adjacency(adj)
    s = np.asarray(s, dtype=float).ravel()
    idx = np.asarray(sample_set, dtype=np.int64).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != idx.shape:
        raise ShapeError("y and the sample set differ in length")
    c = _graph_weight(len(idx), mu)
    r = s - a @ s
    e = s[idx] - y
    value = c * r @ r + e @ e
    grad = 2 * c * (r - a.T @ r)
    grad[idx] += 2 * e
    return float(value), grad


def _exact_signals(a, obs, cfg):
    y, w = obs.masked()
    n, t_len = y.shape
    c = np.array([_graph_weight(m, cfg.mu) for m in obs.counts])
    d = np.eye(n) - a
    dtd = d.T @ d
    hess = c[:, None, None] * dtd
    hess[:, np.arange(n), np.arange(n)] += w.T
    try:
        s = np.linalg.solve(hess, (w * y).T[:, :, None])[:, :, 0].T
    except np.linalg.LinAlgError:
        # singular when I - A is rank deficient on an unsampled subspace
        s = np.column_stack([np.linalg.lstsq(hess[t], w[:, t] * y[:, t], rcond=None)[0] for t in range(t_len)])
    return s


def infer_signals(adj, obs: ObservationSet, cfg: SemConfig, init=None, return_info=False):
    """Minimise the per-slot signal objective for a fixed topology.

    With ``cfg.signal_solver == "exact"`` each slot's normal equations are
    solved directly (minimum-norm on rank deficiency). Otherwise per-slot
    Armijo gradient descent starts from ``init`` (default ``M(t)^T y(t)``);
    a slot stops once its
    gradient norm drops below ``tol_inner * (1 + ||y_t||)``, when no Armijo
    step yields a decrease any more, or at ``max_inner``. All slots are
    updated together; each keeps its own step size.
    """
    a = as_adjacency(adj, obs.n)
    if cfg.signal_solver == "exact":
        s = _exact_signals(a, obs, cfg)
        if not np.all(np.isfinite(s)):
            raise NumericError("non-finite signals from the exact solve")
        out = SignalMatrix(s)
        return (out, {"iterations": 0, "converged": True}) if return_info else out
    y, w = obs.masked()
    wf = w.astype(float)
    counts = obs.counts
    n, t_len = y.shape
    c = np.array([_graph_weight(m, cfg.mu) for m in counts])
    s = y.copy() if init is None else as_signals(init, n).copy()
    if s.shape != y.shape:
        raise ShapeError("initial signals do not match the observations")
    d = np.eye(n) - a
    dtd = d.T @ d

    def value(cols, x):
        r = d @ x
        return c[cols] * np.sum(r * r, axis=0) + np.sum(wf[:, cols] * (x - y[:, cols]) ** 2, axis=0)

    def grad(cols, x):
        return 2 * c[cols] * (dtd @ x) + 2 * wf[:, cols] * (x - y[:, cols])

    every = np.arange(t_len)
    thresh = cfg.tol_inner * (1 + np.linalg.norm(y, axis=0))
    f = value(every, s)
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite signal objective")
    stalled = np.zeros(t_len, dtype=bool)
    armijo = cfg.gd
    it = 0
    for it in range(1, cfg.max_inner + 1):
        g = grad(every, s)
        gn2 = np.sum(g * g, axis=0)
        active = np.flatnonzero((np.sqrt(gn2) > thresh) & ~stalled)
        if active.size == 0:
            it -= 1
            break
        xa, ga, fa, ga2 = s[:, active], g[:, active], f[active], gn2[active]
        step = np.full(active.size, armijo.step)
        ok = np.zeros(active.size, dtype=bool)
        fc = fa.copy()
        cand = xa.copy()
        for _ in range(64):
            todo = ~ok
            trial = xa[:, todo] - step[todo] * ga[:, todo]
            ft = value(active[todo], trial)
            good = ft <= fa[todo] - armijo.sufficient_decrease * step[todo] * ga2[todo]
            pos = np.flatnonzero(todo)
            cand[:, pos[good]] = trial[:, good]
            fc[pos[good]] = ft[good]
            ok[pos[good]] = True
            if ok.all():
                break
            step[pos[~good]] *= armijo.backtrack
        stalled[active[~ok]] = True
        s[:, active[ok]] = cand[:, ok]
        f[active[ok]] = fc[ok]
        if not np.all(np.isfinite(f)):
            raise NumericError("non-finite signal objective during gradient descent")
    out = SignalMatrix(s)
    if return_info:
        g = grad(every, s)
        done = np.linalg.norm(g, axis=0) <= thresh
        return out, {"iterations": it, "converged": bool(done.all()), "grad_ok": done}
    return out


def topology_admm_sem(signals, cfg: SemConfig, state=None, tol=None, return_info=False):
    """Minimise ``||S - A S||^2 + lambda1 ||A||_1 + lambda2 ||A||_F^2`` over zero-diagonal ``A``.

    The ADMM core works with half of this objective, hence ``l1 = lambda1 / 2``.
    """
    s = as_signals(signals)
    res = elastic_net_admm(
        s,
        None,
        l1=cfg.lambda1 / 2,
        l2=cfg.lambda2,
        rho=cfg.rho,
        tol=cfg.tol_inner if tol is None else tol,
        max_iter=cfg.max_admm,
        state=state,
    )
    top = TopologyMatrix(res.a0)
    return (top, res) if return_info else top


def sem_kkt_residual(adj, signals, lambda1, lambda2):
    """Max off-diagonal violation of the prox fixed point ``A = T_l1(A - grad f(A))``."""
    a = as_adjacency(adj)
    s = as_signals(signals, a.shape[0])
    g = -2 * (s - a @ s) @ s.T + 2 * lambda2 * a
    fixed = soft_threshold(a - g, lambda1)
    diff = np.abs(a - fixed)
    np.fill_diagonal(diff, 0.0)
    return float(diff.max()) if diff.size else 0.0


def _rel_change(old, new):
    scale = max(abs(old), abs(new))
    return 0.0 if scale == 0 else abs(old - new) / scale


def jisg(obs: ObservationSet, cfg: SemConfig = SemConfig(), callback=None) -> JisgResult:
    """Block coordinate descent over the topology and the signals.

    ``objective_trace[0]`` is the objective at the initial point
    ``(A = 0, s_t = M_t^T y_t)``; one entry is appended per outer iteration.
    A topology step that would raise the objective (possible only through
    ADMM inexactness) is rejected, which keeps the trace nonincreasing.
    """
    obs = check_observations(obs)
    n = obs.n
    s = obs.backfill()
    a = np.zeros((n, n))
    j = sem_objective(a, s, obs, cfg)
    trace = [j]
    state = None
    converged = False
    k = 0
    for k in range(1, cfg.max_outer + 1):
        top, info = topology_admm_sem(s, cfg, state=state, return_info=True)
        state = info.state
        cand = top.entries
        if sem_objective(cand, s, obs, cfg) <= j:
            a = cand
        cand = infer_signals(a, obs, cfg, init=s).values
        j_new = sem_objective(a, cand, obs, cfg)
        j_keep = sem_objective(a, s, obs, cfg)
        if j_new <= j_keep:
            s = cand
        else:  # rounding in the exact solve
            j_new = j_keep
        trace.append(j_new)
        if callback is not None:
            callback(k, a, s, j_new)
        done = _rel_change(j, j_new) < cfg.tol_outer
        j = j_new
        if done:
            converged = True
            break
    return JisgResult(
        adjacency=TopologyMatrix(a),
        signals=SignalMatrix(s),
        objective_trace=np.array(trace),
        converged=converged,
        iterations=k,
    )


class JISG(TransformerMixin, BaseEstimator):
    """Semi-blind SEM estimator: learns a directed topology and imputes missing samples.

    Parameters
    ----------
    mu : float, default 1e4
        Weight of the observation fit.
    lambda1, lambda2 : float
        Elastic-net weights on ``||A||_1`` and ``||A||_F^2``.
    rho : float, default 1.0
        ADMM penalty.
    armijo_step, armijo_backtrack, armijo_c : float
        Line-search parameters of the signal step.
    tol_outer, tol_inner : float
    max_outer, max_inner, max_admm : int
    signal_solver : {"gd", "exact"}, default "gd"
        Gradient descent or a direct solve for the signal step.
    random_state : int, optional
        Recorded in the configuration; the solver itself is deterministic.

    Attributes
    ----------
    adjacency_ : ndarray of shape (n_nodes, n_nodes)
    signals_ : ndarray of shape (n_slots, n_nodes)
        Reconstructed process for the training data.
    objective_trace_ : ndarray
    n_iter_ : int
    converged_ : bool

    Notes
    -----
    ``X`` has one row per slot and one column per node; NaN marks an
    unsampled node. An :class:`~semiblind.graphmodel.ObservationSet` is
    accepted as well.
    """

    def __init__(
        self,
        mu=1e4,
        lambda1=0.5,
        lambda2=0.1,
        rho=1.0,
        armijo_step=1.0,
        armijo_backtrack=0.5,
        armijo_c=1e-4,
        tol_outer=1e-6,
        tol_inner=1e-6,
        max_outer=100,
        max_inner=500,
        max_admm=1000,
        signal_solver="gd",
        random_state=None,
    ):
        self.mu = mu
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.rho = rho
        self.armijo_step = armijo_step
        self.armijo_backtrack = armijo_backtrack
        self.armijo_c = armijo_c
        self.tol_outer = tol_outer
        self.tol_inner = tol_inner
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.max_admm = max_admm
        self.signal_solver = signal_solver
        self.random_state = random_state

    def _config(self):
        return SemConfig(
            mu=self.mu,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            rho=self.rho,
            gd=ArmijoParams(self.armijo_step, self.armijo_backtrack, self.armijo_c),
            tol_outer=self.tol_outer,
            tol_inner=self.tol_inner,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            max_admm=self.max_admm,
            signal_solver=self.signal_solver,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def fit(self, X, y=None):
        obs = check_observations(X)
        res = jisg(obs, self._config())
        self.n_features_in_ = obs.n
        self.adjacency_ = res.adjacency.entries.copy()
        self.signals_ = res.signals.values.T.copy()
        self.objective_trace_ = res.objective_trace
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        self.result_ = res
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).signals_.copy()

    def transform(self, X):
        """Reconstruct the process from new observations with the learned topology."""
        check_is_fitted(self, "adjacency_")
        obs = check_observations(X, self.n_features_in_)
        return infer_signals(self.adjacency_, obs, self._config()).values.T.copy()
