"""Fixed-lag online tracking of time-varying SVAR topologies.

At every new slot ``tau`` the tracker solves a windowed version of the batch
problem over the states ``s(tau - lag .. tau)``:

    (s(t) - m)^T P^{-1} (s(t) - m)  +  windowed SVAR terms
      + beta ||A0 - A0_prev||_F^2 + beta ||A1 - A1_prev||_F^2

where ``(m, P)`` is the Kalman-filtered estimate of the window's first state
and ``A*_prev`` are the previous step's topologies. Once the window is full
it slides by one slot per step and the anchor ``(m, P)`` advances by one
filter update under the newest topologies.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_observations, check_vector
from .exceptions import InvalidSpecError, NumericError
from .graphmodel import ObservationSet, SamplingSchedule
from .sem import _rel_change
from .svarm import (
    SvarmConfig,
    _guard_invertible,
    _objective_core,
    reformulate,
    rts_smooth,
    topology_admm_svarm,
)

__all__ = [
    "TrackerConfig",
    "TrackerState",
    "TrackerStep",
    "tracker_init",
    "tracker_step",
    "run_online",
    "OnlineJISGoT",
]


@dataclass(frozen=True, eq=False)
class TrackerConfig(SvarmConfig):
    """:class:`SvarmConfig` plus the window length, the proximal weight and warm starts.

    ``max_outer`` and ``tol_outer`` bound the per-step BCD and default to a
    looser setting than the batch solver.
    """

    tol_outer: float = 1e-5
    max_outer: int = 10
    lag: int = 5
    beta: float = 0.1
    warm_start: bool = True

    def __post_init__(self):
        super().__post_init__()
        if int(self.lag) != self.lag or self.lag < 1:
            raise InvalidSpecError("lag must be a positive integer")
        if self.beta < 0:
            raise InvalidSpecError("beta must be nonnegative")


@dataclass(eq=False)
class TrackerState:
    """Mutable tracker state; owned by one caller at a time."""

    anchor_mean: np.ndarray
    anchor_cov: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    buffer: deque  # of (indices, values) per slot, oldest first
    time: int = 0  # number of slots consumed
    window_signals: Optional[np.ndarray] = None  # N x (len(buffer) + 1)
    admm_state: object = None

    @property
    def n(self):
        return self.anchor_mean.shape[0]

    @property
    def anchor_time(self):
        return self.time - len(self.buffer)


@dataclass(frozen=True, eq=False)
class TrackerStep:
    """Output of one tracker step.

    ``signals`` has one column per window slot ``window_start .. time``;
    ``filtered`` is its last column. ``warmup`` marks steps taken before the
    window filled up.
    """

    time: int
    a0: np.ndarray
    a1: np.ndarray
    signals: np.ndarray
    window_start: int
    warmup: bool
    iterations: int
    objective_trace: np.ndarray

    @property
    def filtered(self):
        return self.signals[:, -1]


def tracker_init(z0, cfg: TrackerConfig) -> TrackerState:
    z0 = np.asarray(z0, dtype=float).ravel()
    n = z0.shape[0]
    check_vector(z0, n, "z0")
    return TrackerState(
        anchor_mean=z0.copy(),
        anchor_cov=np.eye(n),
        a0=np.zeros((n, n)),
        a1=np.zeros((n, n)),
        buffer=deque(),
        time=0,
    )


def _window_obs(state):
    n = state.n
    sched = SamplingSchedule(n, [idx for idx, _ in state.buffer])
    return ObservationSet(sched, [v for _, v in state.buffer])


def _prior_term(s0, mean, cov):
    d = s0 - mean
    return float(d @ linalg.cho_solve(linalg.cho_factor(cov), d))


def _window_objective(a0, a1, s, obs, state, cfg, prev0, prev1):
    prox = cfg.beta * (np.sum((a0 - prev0) ** 2) + np.sum((a1 - prev1) ** 2))
    return (
        _objective_core(a0, a1, s, obs, cfg)
        + _prior_term(s[:, 0], state.anchor_mean, state.anchor_cov)
        + float(prox)
    )


def _advance_anchor(state, cfg, indices, values):
    """One Kalman predict/correct step of the anchor with the current topologies."""
    ssf = reformulate(state.a0, state.a1)
    x = ssf.trans @ state.anchor_mean
    p = ssf.trans @ state.anchor_cov @ ssf.trans.T + ssf.state_cov
    p = (p + p.T) / 2
    m = len(indices)
    if m and cfg.mu > 0:
        innov = p[np.ix_(indices, indices)] + (m / cfg.mu) * np.eye(m)
        try:
            cf = linalg.cho_factor(innov)
        except linalg.LinAlgError as exc:
            raise NumericError(f"anchor innovation covariance not positive definite at slot {state.anchor_time + 1}") from exc
        gain = linalg.cho_solve(cf, p[indices, :]).T
        x = x + gain @ (values - x[indices])
        p = p - gain @ p[indices, :]
        p = (p + p.T) / 2
    state.anchor_mean, state.anchor_cov = x, p


def tracker_step(state: TrackerState, y, indices, cfg: TrackerConfig) -> TrackerStep:
    """Consume one slot and re-estimate the window; mutates ``state``.

    Returns the step record with the new topologies and the smoothed window.
    """
    n = state.n
    idx = np.asarray(indices, dtype=np.int64).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != idx.shape:
        raise InvalidSpecError("y and indices differ in length")
    # validate through the schedule type (range, ordering)
    SamplingSchedule(n, [idx])

    lag = int(cfg.lag)
    prev_signals = state.window_signals
    if len(state.buffer) == lag:
        old_idx, old_y = state.buffer.popleft()
        _advance_anchor(state, cfg, old_idx, old_y)
        if prev_signals is not None:
            prev_signals = prev_signals[:, 1:]
    state.buffer.append((idx, y))
    state.time += 1
    warmup = len(state.buffer) < lag

    obs = _window_obs(state)
    backfill = obs.backfill()
    if cfg.warm_start and prev_signals is not None:
        s = np.column_stack([prev_signals, backfill[:, -1]])
        a0, a1 = state.a0.copy(), state.a1.copy()
        admm_state = state.admm_state
    else:
        s = np.column_stack([state.anchor_mean, backfill])
        a0, a1 = np.zeros((n, n)), np.zeros((n, n))
        admm_state = None
    prev0, prev1 = state.a0, state.a1

    j = _window_objective(a0, a1, s, obs, state, cfg, prev0, prev1)
    trace = [j]
    k = 0
    for k in range(1, cfg.max_outer + 1):
        (c0, c1), info = topology_admm_svarm(
            s[:, 1:], s[:, :-1], cfg, state=admm_state, beta=cfg.beta, priors=(prev0, prev1), return_info=True
        )
        admm_state = info.state
        c0, _ = _guard_invertible(c0.entries)
        c1 = c1.entries
        if _window_objective(c0, c1, s, obs, state, cfg, prev0, prev1) <= j:
            a0, a1 = c0, c1
        sm = rts_smooth(reformulate(a0, a1), state.anchor_mean, state.anchor_cov, obs, cfg.mu)
        s = sm.smooth_mean.T
        j_new = _window_objective(a0, a1, s, obs, state, cfg, prev0, prev1)
        trace.append(j_new)
        done = _rel_change(j, j_new) < cfg.tol_outer
        j = j_new
        if done:
            break

    state.a0, state.a1 = a0, a1
    state.window_signals = s
    state.admm_state = admm_state
    return TrackerStep(
        time=state.time,
        a0=a0.copy(),
        a1=a1.copy(),
        signals=s.copy(),
        window_start=state.anchor_time,
        warmup=warmup,
        iterations=k,
        objective_trace=np.array(trace),
    )


def _records(stream):
    for rec in stream:
        if isinstance(rec, dict):
            yield rec["indices"], rec["y"]
        else:
            idx, y = rec
            yield idx, y


def run_online(stream: Iterable, cfg: TrackerConfig, n=None, z0=None) -> List[TrackerStep]:
    """Fold :func:`tracker_step` over a stream of slots.

    Each element is ``(indices, y)`` or a mapping with those keys. ``n`` is
    required unless ``z0`` or ``cfg.z0`` fixes the node count.
    """
    if z0 is None:
        if cfg.z0 is not None:
            z0 = cfg.z0
        elif n is not None:
            z0 = np.zeros(n)
        else:
            raise InvalidSpecError("pass n or z0 to size the tracker")
    state = tracker_init(z0, cfg)
    return [tracker_step(state, y, idx, cfg) for idx, y in _records(stream)]


class OnlineJISGoT(TransformerMixin, BaseEstimator):
    """Streaming SVAR topology tracker with ``partial_fit``.

    Parameters
    ----------
    lag : int, default 5
        Window length in slots.
    beta : float, default 0.1
        Weight of the pull toward the previous topology estimates.
    mu, lambda1, lambda2, rho, z0, tol_outer, max_outer, tol_inner, max_admm :
        As in :class:`~semiblind.svarm.JISGoT`; the per-step BCD defaults to
        10 iterations with tolerance 1e-5.
    warm_start : bool, default True
        Start each step from the previous window and topologies.

    Attributes
    ----------
    instantaneous_, lagged_ : ndarray of shape (n_nodes, n_nodes)
        Latest topology estimates.
    steps_ : list of TrackerStep
        One record per consumed slot.
    """

    def __init__(
        self,
        lag=5,
        beta=0.1,
        mu=100.0,
        lambda1=0.01,
        lambda2=0.1,
        rho=1.0,
        z0=None,
        tol_outer=1e-5,
        max_outer=10,
        tol_inner=1e-6,
        max_admm=1000,
        warm_start=True,
    ):
        self.lag = lag
        self.beta = beta
        self.mu = mu
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.rho = rho
        self.z0 = z0
        self.tol_outer = tol_outer
        self.max_outer = max_outer
        self.tol_inner = tol_inner
        self.max_admm = max_admm
        self.warm_start = warm_start

    def _config(self):
        return TrackerConfig(
            mu=self.mu,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            rho=self.rho,
            z0=self.z0,
            tol_outer=self.tol_outer,
            max_outer=self.max_outer,
            tol_inner=self.tol_inner,
            max_admm=self.max_admm,
            lag=self.lag,
            beta=self.beta,
            warm_start=self.warm_start,
        )

    def _run(self, state, obs, cfg):
        steps = [tracker_step(state, v, idx, cfg) for idx, v in zip(obs.schedule.slots, obs.values)]
        return steps, np.array([s.filtered for s in steps]).reshape(len(steps), state.n)

    def partial_fit(self, X, y=None):
        obs = check_observations(X, getattr(self, "n_features_in_", None))
        cfg = self._config()
        if not hasattr(self, "state_"):
            self.n_features_in_ = obs.n
            z0 = np.zeros(obs.n) if self.z0 is None else self.z0
            self.state_ = tracker_init(z0, cfg)
            self.steps_ = []
        steps, filtered = self._run(self.state_, obs, cfg)
        self.steps_.extend(steps)
        self.instantaneous_ = self.state_.a0.copy()
        self.lagged_ = self.state_.a1.copy()
        self._last_filtered = filtered
        return self

    def fit(self, X, y=None):
        for attr in ("state_", "steps_", "n_features_in_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X)

    def fit_transform(self, X, y=None):
        """Fit on ``X`` and return the per-slot filtered estimates."""
        return self.fit(X)._last_filtered

    def transform(self, X):
        """Filtered estimates for ``X`` continuing from the current state, without updating it."""
        check_is_fitted(self, "state_")
        obs = check_observations(X, self.n_features_in_)
        _, filtered = self._run(copy.deepcopy(self.state_), obs, self._config())
        return filtered
