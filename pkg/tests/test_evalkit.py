import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semiblind.evalkit import (
    BandlimitedInterpolator,
    KroneckerExperiment,
    best_threshold,
    bl_estimate,
    cnmse,
    eier,
    nmse,
    run_synthetic_kronecker,
    write_reports_csv,
)
from semiblind.exceptions import InvalidSpecError, ShapeError, UndefinedMetricError
from semiblind.graphmodel import (
    KRONECKER_SEED,
    KroneckerSpec,
    NoiseSpec,
    SamplingSchedule,
    bandlimited_signals,
    kronecker_expand,
    laplacian,
    make_rng,
    random_schedule,
    sample_adjacency,
    sample_observations,
)


def test_eier_examples():
    rng = np.random.default_rng(0)
    s = rng.random((6, 6)) < 0.3
    assert eier(s, s) == 0
    off = ~np.eye(5, dtype=bool)
    a = np.zeros((5, 5), dtype=bool)
    assert eier(a, off) == 100
    b = np.zeros((9, 9), dtype=bool)
    b[2, 7] = True
    assert eier(np.zeros((9, 9), dtype=bool), b) == 100 / 72
    assert eier(np.zeros((9, 9)), b) == pytest.approx(1.3889, abs=1e-4)


def test_eier_ignores_diagonal_and_checks_shape():
    assert eier(np.eye(4), np.zeros((4, 4))) == 0
    with pytest.raises(ShapeError):
        eier(np.zeros((3, 3)), np.zeros((4, 4)))


def test_best_threshold_examples():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((7, 7)) * (rng.random((7, 7)) < 0.3)
    np.fill_diagonal(a, 0)
    assert best_threshold(a, a)[1] == 0
    density = 100 * np.count_nonzero(a) / 42
    assert best_threshold(a, np.zeros((7, 7)))[1] == pytest.approx(density)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 9), st.integers(0, 2**31 - 1))
def test_best_threshold_beats_grid(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.4)
    np.fill_diagonal(a, 0)
    est = a + 0.3 * rng.standard_normal((n, n))
    th, err = best_threshold(a, est)
    assert eier(a != 0, np.abs(est) > th) == pytest.approx(err)
    for g in np.linspace(0, np.abs(est).max() * 1.01, 100):
        assert err <= eier(a != 0, np.abs(est) > g) + 1e-12


def test_nmse_examples():
    rng = np.random.default_rng(2)
    s = rng.standard_normal((5, 7))
    assert nmse(s, s) == 0
    assert nmse(s, np.zeros_like(s)) == pytest.approx(7)
    assert nmse(s, 2 * s) == pytest.approx(7)
    with pytest.raises(UndefinedMetricError):
        nmse(np.zeros((2, 2)), np.ones((2, 2)))


def test_cnmse_examples():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((4, 6))
    assert not cnmse(s, s).any()
    np.testing.assert_allclose(cnmse(s, np.zeros_like(s)), np.ones(6))
    # constant per-slot error norm and signal norm give a flat series
    sig = np.tile(np.array([3.0, 4.0, 0.0])[:, None], 5)
    est = sig + np.array([1.0, 0.0, 0.0])[:, None]
    np.testing.assert_allclose(cnmse(sig, est), np.full(5, 1 / 25))
    assert cnmse(s, np.zeros_like(s), horizon=3).shape == (3,)
    with pytest.raises(InvalidSpecError):
        cnmse(s, s, horizon=9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_metrics_nonnegative_and_cnmse_ends_at_ratio(n, t_len, seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((n, t_len)) + 0.1
    e = rng.standard_normal((n, t_len))
    assert nmse(s, e) >= 0
    c = cnmse(s, e)
    assert np.all(c >= 0)
    assert c[-1] == pytest.approx(np.sum((s - e) ** 2) / np.sum(s**2))


def _kron_graph(seed):
    rng = make_rng(seed)
    return sample_adjacency(kronecker_expand(KroneckerSpec(KRONECKER_SEED, 4)), rng).entries, rng


def test_bl_exact_recovery():
    # seed 1 gives a connected graph; isolated vertices would carry their own
    # zero-frequency eigenvectors and break generic sampling
    adj, rng = _kron_graph(1)
    sig = bandlimited_signals(laplacian(adj), 10, 12, rng)
    obs = sample_observations(sig, random_schedule(81, 30, 12, rng), NoiseSpec(0, 0))
    est, flags = bl_estimate(adj, 10, obs, return_flags=True)
    assert not flags.any()
    assert np.abs(est.values - sig.values).max() < 1e-8


def test_bl_full_basis_interpolates_and_flags():
    rng = np.random.default_rng(0)
    w = rng.random((6, 6))
    adj = w + w.T
    np.fill_diagonal(adj, 0)
    y = rng.standard_normal((6, 3))
    obs = sample_observations(y, SamplingSchedule.full(6, 3), NoiseSpec(0, 0))
    np.testing.assert_allclose(bl_estimate(adj, 6, obs).values, y, atol=1e-10)
    obs = sample_observations(y, random_schedule(6, 2, 3, make_rng(1)), NoiseSpec(0, 0))
    _, flags = bl_estimate(adj, 4, obs, return_flags=True)
    assert flags.all()
    with pytest.raises(InvalidSpecError):
        bl_estimate(np.triu(adj), 2, obs)


def test_bandlimited_interpolator_estimator():
    adj, rng = _kron_graph(1)
    sig = bandlimited_signals(laplacian(adj), 5, 4, rng)
    obs = sample_observations(sig, random_schedule(81, 20, 4, rng), NoiseSpec(0, 0))
    est = BandlimitedInterpolator(adjacency=adj, bandwidth=5).fit().transform(obs.to_nan_array())
    assert est.shape == (4, 81)
    np.testing.assert_allclose(est, sig.values.T, atol=1e-8)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_small_experiment_is_deterministic(tmp_path):
    exp = KroneckerExperiment(order=2, bandwidth=3, slots=10, m_values=(3, 9), seeds=(0, 1))
    first = run_synthetic_kronecker(exp)
    second = run_synthetic_kronecker(exp)
    np.testing.assert_array_equal([r.nmse for r in first], [r.nmse for r in second])
    np.testing.assert_array_equal([r.eier_percent for r in first], [r.eier_percent for r in second])
    assert {r.method for r in first} == {"jisg", "bl", "en-sem"}
    path = tmp_path / "reports.csv"
    write_reports_csv(first, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "method,m,seed,eier,nmse,runtime_s"
    assert len(lines) == len(first) + 1


def test_experiment_validation():
    with pytest.raises(InvalidSpecError):
        KroneckerExperiment(m_values=(100,))
    with pytest.raises(InvalidSpecError):
        KroneckerExperiment(methods=("magic",))
