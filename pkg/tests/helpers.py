"""Seeded instance builders shared by the test modules."""

import numpy as np

from semiblind.graphmodel import NoiseSpec, ObservationSet, SamplingSchedule, random_schedule, make_rng, sample_observations


def sparse_stable(n, density, rng, scale=0.4, zero_diag=True):
    a = scale * rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    if zero_diag:
        np.fill_diagonal(a, 0.0)
    rad = np.max(np.abs(np.linalg.eigvals(a))) if a.any() else 0.0
    if rad >= 0.9:
        a *= 0.8 / rad
    return a


def random_obs(n, t_len, m, seed, values=None):
    rng = make_rng(seed)
    if values is None:
        values = rng.standard_normal((n, t_len))
    sched = random_schedule(n, m, t_len, rng)
    return sample_observations(values, sched, NoiseSpec(0, 0))


def mixed_obs(n, t_len, seed):
    """Random data with a different sample count per slot (including empty slots)."""
    rng = np.random.default_rng(seed)
    slots = []
    for _ in range(t_len):
        m = int(rng.integers(0, n + 1))
        slots.append(np.sort(rng.choice(n, m, replace=False)))
    sched = SamplingSchedule(n, slots)
    return ObservationSet(sched, [rng.standard_normal(len(s)) for s in slots])


def swap_blocks(n):
    """Block-diagonal matrix of 2 x 2 swaps ``[[0, 1], [1, 0]]``."""
    a = np.zeros((n, n))
    for k in range(0, n, 2):
        a[k, k + 1] = a[k + 1, k] = 1.0
    return a


def swap_signals(n, slots, rng):
    """Random columns of the null space of ``I - swap_blocks(n)``: equal values within a pair."""
    pair = rng.standard_normal((n // 2, slots))
    return np.repeat(pair, 2, axis=0)
