"""Joint inference of a first-order structural VAR and the state trajectory (JISGoT).

The model is ``s(t) = A0 s(t) + A1 s(t-1) + e(t)`` with ``s(0) = z0 + e(0)``.
The objective over ``(A0, A1, s(0..T))`` is

    sum_{t>=1} ||s(t) - A0 s(t) - A1 s(t-1)||^2 + ||s(0) - z0||^2
      + sum_t mu/M_t ||y(t) - M(t) s(t)||^2
      + 2 lambda1 (||A0||_1 + ||A1||_1) + lambda2 (||A0||_F^2 + ||A1||_F^2)

with ``diag(A0) = 0``. For fixed topologies the signal block is a linear
Gaussian state-space model whose MAP trajectory is the RTS smoother output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._admm import elastic_net_admm, soft_threshold
from ._validation import as_adjacency, as_signals, check_observations, check_vector
from .exceptions import InvalidSpecError, NumericError, ShapeError, SingularModelError
from .graphmodel import COND_LIMIT, ObservationSet, SignalMatrix, TopologyMatrix
from .sem import ArmijoParams, _fit_weights, _rel_change

__all__ = [
    "SvarmConfig",
    "StateSpaceForm",
    "SmootherState",
    "JisgotResult",
    "reformulate",
    "rts_smooth",
    "dense_ls_oracle",
    "soft_threshold",
    "topology_admm_svarm",
    "svarm_objective",
    "jisgot",
    "stack_multilag",
    "JISGoT",
]

# invertibility guard: shrink factor and maximum number of shrinks
_SHRINK = 0.9
_MAX_SHRINK = 20


@dataclass(frozen=True, eq=False)
class SvarmConfig:
    """Configuration of :func:`jisgot`; ``z0=None`` means the zero vector."""

    mu: float = 100.0
    lambda1: float = 0.01
    lambda2: float = 0.1
    rho: float = 1.0
    gd: ArmijoParams = field(default_factory=ArmijoParams)
    tol_outer: float = 1e-6
    tol_inner: float = 1e-6
    max_outer: int = 100
    max_inner: int = 500
    max_admm: int = 1000
    seed: int = 0
    z0: Optional[np.ndarray] = None

    def __post_init__(self):
        if isinstance(self.gd, dict):
            object.__setattr__(self, "gd", ArmijoParams(**self.gd))
        if min(self.mu, self.lambda1, self.lambda2) < 0:
            raise InvalidSpecError("mu, lambda1 and lambda2 must be nonnegative")
        if self.rho <= 0:
            raise InvalidSpecError("rho must be positive")
        if self.tol_outer <= 0 or self.tol_inner <= 0:
            raise InvalidSpecError("tolerances must be positive")
        if min(self.max_outer, self.max_inner, self.max_admm) < 1:
            raise InvalidSpecError("iteration caps must be at least 1")
        if self.z0 is not None:
            z0 = np.array(self.z0, dtype=float).ravel()
            if not np.all(np.isfinite(z0)):
                raise InvalidSpecError("z0 has non-finite entries")
            z0.flags.writeable = False
            object.__setattr__(self, "z0", z0)

    def initial_state(self, n):
        if self.z0 is None:
            return np.zeros(n)
        return check_vector(self.z0, n, "z0")


@dataclass(frozen=True, eq=False)
class StateSpaceForm:
    """``x(t) = trans @ x(t-1) + w(t)`` with ``w(t) ~ N(0, state_cov)``."""

    trans: np.ndarray
    state_cov: np.ndarray

    @property
    def n(self):
        return self.trans.shape[0]


@dataclass(frozen=True, eq=False)
class SmootherState:
    """Forward and backward pass quantities; index 0 is slot ``t = 0``.

    ``pred_mean[0]`` and ``pred_cov[0]`` hold the prior.
    """

    filt_mean: np.ndarray  # (T+1, N)
    filt_cov: np.ndarray  # (T+1, N, N)
    pred_mean: np.ndarray
    pred_cov: np.ndarray
    smooth_mean: np.ndarray
    smooth_cov: np.ndarray

    @property
    def signals(self) -> SignalMatrix:
        return SignalMatrix(self.smooth_mean.T, z0=self.pred_mean[0])


@dataclass(frozen=True, eq=False)
class JisgotResult:
    a0: TopologyMatrix
    a1: TopologyMatrix
    signals: SignalMatrix
    objective_trace: np.ndarray
    converged: bool
    iterations: int
    shrink_events: int = 0


def _cond(m):
    try:
        c = np.linalg.cond(m)
    except np.linalg.LinAlgError:
        return np.inf
    return float(c) if np.isfinite(c) else np.inf


def reformulate(a0, a1) -> StateSpaceForm:
    """State-space form of the SVAR: ``(I - A0)^{-1} A1`` and ``((I - A0)^T (I - A0))^{-1}``."""
    a0 = as_adjacency(a0)
    a1 = as_adjacency(a1, a0.shape[0])
    d = np.eye(a0.shape[0]) - a0
    c = _cond(d)
    if c > COND_LIMIT:
        raise SingularModelError("I - A0 is not safely invertible", c)
    trans = np.linalg.solve(d, a1)
    d_inv = np.linalg.inv(d)
    cov = d_inv @ d_inv.T
    return StateSpaceForm(trans, (cov + cov.T) / 2)


def _sym(p):
    return (p + p.T) / 2


def _smoother_gain(p_filt, trans, p_pred):
    # G = P_{t|t} B^T P_{t+1|t}^{-1}, from P_{t+1|t} G^T = B P_{t|t}
    rhs = trans @ p_filt
    try:
        return linalg.solve(p_pred, rhs, assume_a="pos").T
    except (linalg.LinAlgError, ValueError):
        n = p_pred.shape[0]
        smax = np.linalg.norm(p_pred, 2)
        return (np.linalg.pinv(p_pred, rcond=n * np.finfo(float).eps) @ rhs).T if smax > 0 else np.zeros_like(rhs.T)


def rts_smooth(ssf: StateSpaceForm, init_mean, init_cov, obs: ObservationSet, mu) -> SmootherState:
    """Kalman filter followed by the Rauch-Tung-Striebel backward pass.

    The measurement noise at slot ``t`` is ``(M_t / mu) I``; slots without
    samples are pure predictions. With ``mu = 0`` every correction is skipped.
    """
    n = ssf.n
    obs = check_observations(obs, n)
    if mu < 0:
        raise InvalidSpecError("mu must be nonnegative")
    t_len = len(obs)
    b, q = ssf.trans, ssf.state_cov
    x0 = check_vector(init_mean, n, "init_mean")
    p0 = np.asarray(init_cov, dtype=float)
    if p0.shape != (n, n):
        raise ShapeError("init_cov must be N x N")
    xf = np.empty((t_len + 1, n))
    pf = np.empty((t_len + 1, n, n))
    xp = np.empty_like(xf)
    pp = np.empty_like(pf)
    xf[0] = xp[0] = x0
    pf[0] = pp[0] = _sym(p0)

    for t in range(1, t_len + 1):
        x = b @ xf[t - 1]
        p = _sym(b @ pf[t - 1] @ b.T + q)
        xp[t], pp[t] = x, p
        idx = obs.schedule.slots[t - 1]
        m = len(idx)
        if m and mu > 0:
            y = obs.values[t - 1]
            innov_cov = p[np.ix_(idx, idx)] + (m / mu) * np.eye(m)
            try:
                cf = linalg.cho_factor(innov_cov)
            except linalg.LinAlgError as exc:
                raise NumericError(f"innovation covariance not positive definite at slot {t}") from exc
            gain = linalg.cho_solve(cf, p[idx, :]).T  # P M^T S^{-1}
            x = x + gain @ (y - x[idx])
            p = _sym(p - gain @ p[idx, :])
        xf[t], pf[t] = x, p

    xs = xf.copy()
    ps = pf.copy()
    for t in range(t_len - 1, -1, -1):
        g = _smoother_gain(pf[t], b, pp[t + 1])
        xs[t] = xf[t] + g @ (xs[t + 1] - xp[t + 1])
        ps[t] = _sym(pf[t] + g @ (ps[t + 1] - pp[t + 1]) @ g.T)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ps))):
        raise NumericError("smoother produced non-finite values")
    return SmootherState(xf, pf, xp, pp, xs, ps)


def dense_ls_oracle(ssf: StateSpaceForm, z0, obs: ObservationSet, mu) -> SignalMatrix:
    """Solve the stacked weighted least-squares problem for the trajectory directly.

    Unknowns are ``s(0..T)`` stacked; the rows are the prior ``s(0) = z0``
    (weight ``I``), the transitions (weight ``state_cov^{-1}``) and the
    observations (weight ``(mu / M_t) I``). Only meant for small problems.
    """
    n = ssf.n
    obs = check_observations(obs, n)
    z0 = check_vector(z0, n, "z0")
    t_len = len(obs)
    dim = n * (t_len + 1)
    if dim > 4000:
        raise InvalidSpecError(f"{dim} unknowns is too large for the dense solver")
    q_inv = np.linalg.inv(ssf.state_cov)
    q_inv = _sym(q_inv)
    normal = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    normal[:n, :n] += np.eye(n)
    rhs[:n] += z0
    # transition block row: [-B, I] acting on (s(t-1), s(t))
    h = np.hstack([-ssf.trans, np.eye(n)])
    hw = h.T @ q_inv @ h
    weights = _fit_weights(obs.counts, mu)
    for t in range(1, t_len + 1):
        sl = slice((t - 1) * n, (t + 1) * n)
        normal[sl, sl] += hw
        idx = obs.schedule.slots[t - 1]
        if len(idx) and weights[t - 1] > 0:
            rows = t * n + idx
            normal[rows, rows] += weights[t - 1]
            rhs[rows] += weights[t - 1] * obs.values[t - 1]
    try:
        sol = linalg.solve(normal, rhs, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise NumericError("normal equations are singular") from exc
    return SignalMatrix(sol.reshape(t_len + 1, n).T, z0=z0)


def _split(signals):
    s = as_signals(signals)
    if s.shape[1] < 2:
        raise ShapeError("need signals for t = 0..T with T >= 1")
    return s[:, 1:], s[:, :-1]


def topology_admm_svarm(sig_t, sig_tm1, cfg, state=None, tol=None, beta=0.0, priors=None, return_info=False):
    """Minimise the topology part of the SVAR objective over ``(A0, A1)``.

    ``sig_t`` holds ``s(1..T)`` and ``sig_tm1`` holds ``s(0..T-1)``, both
    column-wise. The ADMM core minimises half of the objective, which maps
    ``2 lambda1`` to ``l1 = lambda1``. ``beta`` and ``priors`` add the
    proximal pull ``beta ||A - prior||_F^2`` used by the online tracker
    (the halving cancels against the core's ``beta / 2``).
    """
    cur = as_signals(sig_t)
    prev = as_signals(sig_tm1, cur.shape[0])
    if cur.shape != prev.shape:
        raise ShapeError("current and lagged signals differ in shape")
    p0, p1 = (None, None) if priors is None else priors
    res = elastic_net_admm(
        cur,
        prev,
        l1=cfg.lambda1,
        l2=cfg.lambda2,
        rho=cfg.rho,
        beta=beta,
        prior0=p0,
        prior1=p1,
        tol=cfg.tol_inner if tol is None else tol,
        max_iter=cfg.max_admm,
        state=state,
    )
    out = (TopologyMatrix(res.a0), TopologyMatrix(res.a1, zero_diag=False))
    return (out, res) if return_info else out


def svarm_objective(a0, a1, signals, obs: ObservationSet, cfg: SvarmConfig) -> float:
    """Evaluate the SVAR objective; ``signals`` covers slots ``0..T``."""
    s = as_signals(signals)
    z0 = cfg.initial_state(s.shape[0])
    return _objective_core(a0, a1, s, obs, cfg) + float(np.sum((s[:, 0] - z0) ** 2))


def _objective_core(a0, a1, signals, obs, cfg) -> float:
    # every term except the one on s(0)
    a0 = as_adjacency(a0)
    n = a0.shape[0]
    a1 = as_adjacency(a1, n)
    s = as_signals(signals, n)
    if s.shape[1] != len(obs) + 1 or obs.n != n:
        raise ShapeError("signals must have one more slot than the observations")
    y, w = obs.masked()
    resid = s[:, 1:] - a0 @ s[:, 1:] - a1 @ s[:, :-1]
    fit = np.sum(w * (y - s[:, 1:]) ** 2, axis=0)
    reg = sum(2 * cfg.lambda1 * np.sum(np.abs(a)) + cfg.lambda2 * np.sum(a**2) for a in (a0, a1))
    return float(
        np.sum(resid**2) + np.dot(_fit_weights(obs.counts, cfg.mu), fit) + reg
    )


def _guard_invertible(a0):
    """Shrink ``a0`` until ``I - a0`` is well conditioned; returns (a0, shrinks)."""
    eye = np.eye(a0.shape[0])
    for k in range(_MAX_SHRINK + 1):
        c = _cond(eye - a0)
        if c <= COND_LIMIT:
            return a0, k
        if k == _MAX_SHRINK:
            raise SingularModelError(f"I - A0 stays singular after {k} shrinks", c)
        a0 = _SHRINK * a0
    return a0, _MAX_SHRINK


def smooth_signals(a0, a1, obs, cfg: SvarmConfig, init_mean=None, init_cov=None) -> SignalMatrix:
    """MAP trajectory ``s(0..T)`` for fixed topologies."""
    n = obs.n
    z0 = cfg.initial_state(n) if init_mean is None else init_mean
    p0 = np.eye(n) if init_cov is None else init_cov
    st = rts_smooth(reformulate(a0, a1), z0, p0, obs, cfg.mu)
    return SignalMatrix(st.smooth_mean.T, z0=np.asarray(z0, dtype=float))


def jisgot(obs: ObservationSet, cfg: SvarmConfig = SvarmConfig(), callback=None) -> JisgotResult:
    """Block coordinate descent alternating topology ADMM and RTS smoothing.

    ``objective_trace[0]`` is the objective at the initial point
    ``A0 = A1 = 0``, ``s(0) = z0``, ``s(t) = M(t)^T y(t)``. A topology step
    that raises the objective, or that needed shrinking to keep ``I - A0``
    invertible and then raises it, is rejected.
    """
    obs = check_observations(obs)
    n = obs.n
    if len(obs) < 1:
        raise ShapeError("need at least one slot")
    z0 = cfg.initial_state(n)
    s = np.column_stack([z0, obs.backfill()])
    a0 = np.zeros((n, n))
    a1 = np.zeros((n, n))
    j = svarm_objective(a0, a1, s, obs, cfg)
    trace = [j]
    state = None
    shrinks = 0
    converged = False
    k = 0
    for k in range(1, cfg.max_outer + 1):
        (c0, c1), info = topology_admm_svarm(s[:, 1:], s[:, :-1], cfg, state=state, return_info=True)
        state = info.state
        c0, used = _guard_invertible(c0.entries)
        shrinks += used
        c1 = c1.entries
        if svarm_objective(c0, c1, s, obs, cfg) <= j:
            a0, a1 = c0, c1
        s = smooth_signals(a0, a1, obs, cfg).values
        j_new = svarm_objective(a0, a1, s, obs, cfg)
        trace.append(j_new)
        if callback is not None:
            callback(k, a0, a1, s, j_new)
        done = _rel_change(j, j_new) < cfg.tol_outer
        j = j_new
        if done:
            converged = True
            break
    if shrinks:
        warnings.warn(f"A0 was shrunk {shrinks} times to keep I - A0 invertible", RuntimeWarning, stacklevel=2)
    return JisgotResult(
        a0=TopologyMatrix(a0),
        a1=TopologyMatrix(a1, zero_diag=False),
        signals=SignalMatrix(s, z0=z0),
        objective_trace=np.array(trace),
        converged=converged,
        iterations=k,
        shrink_events=shrinks,
    )


def stack_multilag(a0, lags: List) -> tuple:
    """Companion form of a multi-lag SVAR.

    The stacked state is ``[s(t); s(t-1); ...; s(t-L+1)]``. The first block
    row of the lagged matrix carries ``A(1..L)`` and the identity blocks just
    below its diagonal shift older states down; the instantaneous matrix is
    ``A0`` in its first block and zero elsewhere.
    """
    a0 = as_adjacency(a0)
    n = a0.shape[0]
    if len(lags) < 1:
        raise InvalidSpecError("need at least one lag")
    blocks = [as_adjacency(a, n) for a in lags]
    depth = len(blocks)
    ext0 = np.zeros((n * depth, n * depth))
    ext1 = np.zeros_like(ext0)
    ext0[:n, :n] = a0
    ext1[:n, :] = np.hstack(blocks)
    for i in range(1, depth):
        ext1[i * n:(i + 1) * n, (i - 1) * n:i * n] = np.eye(n)
    return ext0, ext1


class JISGoT(TransformerMixin, BaseEstimator):
    """Semi-blind structural VAR estimator over a time series of partial samples.

    Parameters
    ----------
    mu : float, default 100
    lambda1, lambda2 : float
    rho : float, default 1.0
    z0 : array-like of shape (n_nodes,), optional
        Mean of the initial state ``s(0)``; zeros when omitted.
    tol_outer, tol_inner : float
    max_outer, max_admm : int

    Attributes
    ----------
    instantaneous_ : ndarray of shape (n_nodes, n_nodes)
        Same-slot adjacency, zero diagonal.
    lagged_ : ndarray of shape (n_nodes, n_nodes)
        One-slot-lag adjacency.
    signals_ : ndarray of shape (n_slots, n_nodes)
        Smoothed trajectory for the observed slots.
    initial_state_ : ndarray of shape (n_nodes,)
        Smoothed ``s(0)``.
    objective_trace_, n_iter_, converged_

    Notes
    -----
    Row ``i`` of ``X`` is slot ``i + 1``; slot 0 is latent.
    """

    def __init__(
        self,
        mu=100.0,
        lambda1=0.01,
        lambda2=0.1,
        rho=1.0,
        z0=None,
        tol_outer=1e-6,
        tol_inner=1e-6,
        max_outer=100,
        max_admm=1000,
        random_state=None,
    ):
        self.mu = mu
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.rho = rho
        self.z0 = z0
        self.tol_outer = tol_outer
        self.tol_inner = tol_inner
        self.max_outer = max_outer
        self.max_admm = max_admm
        self.random_state = random_state

    def _config(self):
        return SvarmConfig(
            mu=self.mu,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            rho=self.rho,
            tol_outer=self.tol_outer,
            tol_inner=self.tol_inner,
            max_outer=self.max_outer,
            max_admm=self.max_admm,
            seed=0 if self.random_state is None else int(self.random_state),
            z0=self.z0,
        )

    def fit(self, X, y=None):
        obs = check_observations(X)
        res = jisgot(obs, self._config())
        self.n_features_in_ = obs.n
        self.instantaneous_ = res.a0.entries.copy()
        self.lagged_ = res.a1.entries.copy()
        self.signals_ = res.signals.values[:, 1:].T.copy()
        self.initial_state_ = res.signals.values[:, 0].copy()
        self.objective_trace_ = res.objective_trace
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        self.result_ = res
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).signals_.copy()

    def transform(self, X):
        """Smooth a new series with the learned topologies."""
        check_is_fitted(self, "instantaneous_")
        obs = check_observations(X, self.n_features_in_)
        s = smooth_signals(self.instantaneous_, self.lagged_, obs, self._config())
        return s.values[:, 1:].T.copy()
