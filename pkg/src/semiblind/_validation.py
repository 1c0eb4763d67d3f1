"""Input validation helpers shared by the estimators and solvers."""

import numpy as np

from .exceptions import ShapeError
from .graphmodel import ObservationSet, SignalMatrix, TopologyMatrix


def check_observations(X, n_nodes=None):
    """Coerce ``X`` into an :class:`ObservationSet`.

    Accepts an :class:`ObservationSet` or an array of shape
    ``(n_slots, n_nodes)`` whose NaN entries mark unsampled nodes.
    """
    if isinstance(X, ObservationSet):
        obs = X
    else:
        x = np.asarray(X, dtype=float)
        if x.ndim != 2:
            raise ShapeError(f"expected 2-D (n_slots, n_nodes) data, got shape {x.shape}")
        if np.any(np.isinf(x)):
            raise ValueError("observations contain infinite values")
        obs = ObservationSet.from_nan_array(x)
    if n_nodes is not None and obs.n != n_nodes:
        raise ShapeError(f"expected {n_nodes} nodes, got {obs.n}")
    return obs


def check_square(a, name="matrix", n=None):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise ShapeError(f"{name} must be {n} x {n}, got {a.shape}")
    return a


def as_adjacency(adj, n=None):
    """Array view of a :class:`TopologyMatrix` or array-like adjacency."""
    if isinstance(adj, TopologyMatrix):
        adj = adj.entries
    return check_square(adj, "adjacency", n)


def as_signals(signals, n=None):
    if isinstance(signals, SignalMatrix):
        signals = signals.values
    s = np.asarray(signals, dtype=float)
    if s.ndim != 2:
        raise ShapeError(f"signals must be 2-D (nodes x slots), got shape {s.shape}")
    if n is not None and s.shape[0] != n:
        raise ShapeError(f"signals have {s.shape[0]} nodes, expected {n}")
    return s


def check_vector(v, n, name="vector"):
    v = np.asarray(v, dtype=float).ravel()
    if v.shape != (n,):
        raise ShapeError(f"{name} must have length {n}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v
