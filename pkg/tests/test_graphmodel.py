import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semiblind.exceptions import InvalidSpecError, ShapeError, SingularModelError
from semiblind.graphmodel import (
    KRONECKER_SEED,
    KroneckerSpec,
    NoiseSpec,
    ObservationSet,
    SamplingSchedule,
    SignalMatrix,
    TopologyMatrix,
    bandlimited_signals,
    kronecker_expand,
    laplacian,
    make_rng,
    random_schedule,
    sample_adjacency,
    sample_observations,
    sem_synthesize,
    svarm_synthesize,
)


def test_kronecker_shape_and_corner():
    p = kronecker_expand(KroneckerSpec(KRONECKER_SEED, 4))
    assert p.shape == (81, 81)
    assert p[0, 0] == pytest.approx(0.6**4, abs=1e-15)
    assert p[0, 0] == pytest.approx(0.1296)


def test_kronecker_order_one_is_seed():
    seed = np.array([[0.2, 0.9], [0.5, 0.0]])
    np.testing.assert_array_equal(kronecker_expand(KroneckerSpec(seed, 1)), seed)


@pytest.mark.parametrize(
    "seed, order",
    [(np.array([[1.5]]), 1), (np.ones((2, 3)) / 2, 2), (KRONECKER_SEED, 0), (-KRONECKER_SEED, 2)],
)
def test_kronecker_spec_rejects_bad_input(seed, order):
    with pytest.raises(InvalidSpecError):
        KroneckerSpec(seed, order)


def test_sample_adjacency_degenerate_probabilities():
    rng = make_rng(0)
    assert not sample_adjacency(np.zeros((4, 4)), rng).entries.any()
    a = sample_adjacency(np.ones((3, 3)), rng).entries
    np.testing.assert_array_equal(a, 2 * (1 - np.eye(3)))


def test_sample_adjacency_density_matches_expectation():
    prob = kronecker_expand(KroneckerSpec(KRONECKER_SEED, 4))
    n = prob.shape[0]
    rng = make_rng(42)
    # exact probability that an off-diagonal entry of A + A^T is nonzero
    off = ~np.eye(n, dtype=bool)
    expected = np.mean((1 - (1 - prob) * (1 - prob.T))[off])
    dens = [np.mean(sample_adjacency(prob, rng).entries[off] > 0) for _ in range(100)]
    rel = np.abs(np.array(dens) - expected) / expected
    assert abs(np.mean(dens) - expected) / expected < 0.1
    assert rel.max() < 0.6


def test_laplacian_examples():
    np.testing.assert_array_equal(laplacian(np.array([[0.0, 1], [1, 0]])), [[1, -1], [-1, 1]])
    assert not laplacian(np.zeros((3, 3))).any()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_laplacian_symmetric_zero_rowsum(n, seed):
    rng = np.random.default_rng(seed)
    w = rng.random((n, n))
    a = w + w.T
    np.fill_diagonal(a, 0)
    lap = laplacian(a)
    np.testing.assert_allclose(lap, lap.T)
    np.testing.assert_allclose(lap.sum(axis=1), 0, atol=1e-12)


def test_bandlimited_constant_for_bandwidth_one():
    a = np.ones((5, 5)) - np.eye(5)
    sig = bandlimited_signals(laplacian(a), 1, 4, make_rng(1)).values
    for col in sig.T:
        np.testing.assert_allclose(col, col[0] * np.ones(5), atol=1e-12)


def test_bandlimited_kronecker_lies_in_eigenspace():
    adj = sample_adjacency(kronecker_expand(KroneckerSpec(KRONECKER_SEED, 4)), make_rng(3)).entries
    lap = laplacian(adj)
    sig = bandlimited_signals(lap, 10, 20, make_rng(4)).values
    # independent eigenbasis via scipy
    from scipy.linalg import eigh

    w, u = eigh(lap)
    basis = u[:, :10]
    resid = sig - basis @ (basis.T @ sig)
    assert np.abs(resid).max() < 1e-10


def test_sem_synthesize_identity_and_triangular():
    s, e = sem_synthesize(np.zeros((3, 3)), NoiseSpec(1.0, 0.0, 5), 4, return_noise=True)
    np.testing.assert_array_equal(s.values, e)
    a = np.zeros((3, 3))
    a[0, 1] = 0.5
    from semiblind.graphmodel import sem_signals_from_noise

    np.testing.assert_allclose(sem_signals_from_noise(a, np.array([0.0, 1, 0])), [0.5, 1, 0])


def test_sem_synthesize_residual():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((10, 10)) * (rng.random((10, 10)) < 0.3)
    np.fill_diagonal(a, 0)
    a /= 1.5 * np.max(np.abs(np.linalg.eigvals(a)))
    s, e = sem_synthesize(a, NoiseSpec(1.0, 0, 2), 30, return_noise=True)
    assert np.abs(s.values - a @ s.values - e).max() < 1e-12


def test_sem_synthesize_singular():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(SingularModelError):
        sem_synthesize(a, NoiseSpec(), 3)


def test_svarm_synthesize_examples():
    z0 = np.array([1.0, -2.0, 3.0])
    s, e = svarm_synthesize(np.zeros((3, 3)), np.zeros((3, 3)), z0, NoiseSpec(1.0, 0, 3), 5, return_noise=True)
    np.testing.assert_array_equal(s.values[:, 1:], e[:, 1:])
    s = svarm_synthesize(np.zeros((3, 3)), np.eye(3), z0, NoiseSpec(0.0), 6)
    np.testing.assert_array_equal(s.values, np.tile(z0[:, None], 7))
    assert s.process.shape == (3, 6)


def test_svarm_synthesize_residual():
    rng = np.random.default_rng(11)
    n = 6
    a0 = 0.3 * rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3)
    np.fill_diagonal(a0, 0)
    a1 = 0.2 * rng.standard_normal((n, n))
    s, e = svarm_synthesize(a0, a1, np.zeros(n), NoiseSpec(1.0, 0, 1), 50, return_noise=True)
    v = s.values
    resid = v[:, 1:] - a0 @ v[:, 1:] - a1 @ v[:, :-1] - e[:, 1:]
    assert np.abs(resid).max() < 1e-12


def test_sample_observations_selection():
    s = np.arange(12.0).reshape(3, 4)
    obs = sample_observations(s, SamplingSchedule.full(3, 4), NoiseSpec(0, 0))
    for t in range(4):
        np.testing.assert_array_equal(obs.values[t], s[:, t])
    sched = SamplingSchedule(3, ([0, 2], [], [1], [0, 1, 2]))
    obs = sample_observations(s, sched, NoiseSpec(0, 0))
    assert obs.values[1].shape == (0,)
    np.testing.assert_array_equal(obs.values[0], s[[0, 2], 0])


def test_random_schedule_edges_and_frequency():
    full = random_schedule(5, 5, 3, make_rng(0))
    assert all(np.array_equal(s, np.arange(5)) for s in full.slots)
    assert all(len(s) == 0 for s in random_schedule(5, 0, 3, make_rng(0)).slots)
    sched = random_schedule(81, 40, 100, make_rng(9))
    freq = sched.mask().mean(axis=1)
    assert freq.min() > 0
    assert freq.mean() == pytest.approx(40 / 81)
    # binomial spread over 100 slots is about 0.05 per vertex
    assert np.mean(np.abs(freq - 40 / 81) <= 0.1) > 0.9


def test_schedule_validation():
    with pytest.raises(InvalidSpecError):
        SamplingSchedule(3, ([2, 1],))
    with pytest.raises(InvalidSpecError):
        SamplingSchedule(3, ([3],))
    with pytest.raises(ShapeError):
        ObservationSet(SamplingSchedule(3, ([0, 1],)), ([1.0],))


def test_topology_matrix_invariants():
    with pytest.raises(InvalidSpecError):
        TopologyMatrix(np.eye(2))
    TopologyMatrix(np.eye(2), zero_diag=False)
    with pytest.raises(ShapeError):
        TopologyMatrix(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        SignalMatrix(np.zeros((2, 3)), z0=np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_nan_array_roundtrip(n, t_len, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((t_len, n))
    x[rng.random((t_len, n)) < 0.4] = np.nan
    obs = ObservationSet.from_nan_array(x)
    np.testing.assert_array_equal(np.isnan(obs.to_nan_array()), np.isnan(x))
    np.testing.assert_array_equal(np.nan_to_num(obs.to_nan_array()), np.nan_to_num(x))


def test_make_rng_deterministic():
    assert make_rng(3).random() == make_rng(3).random()
    g = make_rng(1)
    assert make_rng(g) is g
