import copy

import numpy as np
import pytest

from helpers import random_obs
from semiblind.evalkit import best_threshold
from semiblind.exceptions import InvalidSpecError
from semiblind.graphmodel import NoiseSpec, SamplingSchedule, make_rng, sample_observations, svarm_synthesize
from semiblind.online import OnlineJISGoT, TrackerConfig, run_online, tracker_init, tracker_step
from semiblind.svarm import SvarmConfig, jisgot
from test_svarm import _svarm_instance


def _stream(obs):
    return [(obs.schedule.slots[t], obs.values[t]) for t in range(len(obs))]


def _changes(steps):
    return np.array([
        np.linalg.norm(np.hstack([s.a0 - p.a0, s.a1 - p.a1])) for p, s in zip(steps, steps[1:])
    ])


def test_init_state():
    st = tracker_init(np.zeros(3), TrackerConfig())
    np.testing.assert_array_equal(st.anchor_mean, np.zeros(3))
    np.testing.assert_array_equal(st.anchor_cov, np.eye(3))
    st = tracker_init(np.array([1.0, 2.0]), TrackerConfig())
    assert not st.a0.any() and not st.a1.any()
    again = tracker_init(np.array([1.0, 2.0]), TrackerConfig())
    np.testing.assert_array_equal(st.anchor_mean, again.anchor_mean)
    np.testing.assert_array_equal(st.anchor_cov, again.anchor_cov)


def test_config_validation():
    with pytest.raises(InvalidSpecError):
        TrackerConfig(lag=0)
    with pytest.raises(InvalidSpecError):
        TrackerConfig(beta=-1)


def test_huge_beta_freezes_topologies():
    obs = random_obs(4, 8, 3, 2)
    cfg = TrackerConfig(beta=1e12, lag=3)
    state = tracker_init(np.zeros(4), cfg)
    state.a0 = np.array([[0, 0.2, 0, 0], [0, 0, 0, 0.1], [0, 0, 0, 0], [0.3, 0, 0, 0]])
    state.a1 = 0.1 * np.eye(4)
    prev0, prev1 = state.a0.copy(), state.a1.copy()
    for idx, y in _stream(obs):
        step = tracker_step(state, y, idx, cfg)
        assert np.abs(step.a0 - prev0).max() < 1e-6
        assert np.abs(step.a1 - prev1).max() < 1e-6


def test_window_matches_batch_when_lag_covers_everything():
    n, t_len = 5, 30
    a0 = np.zeros((n, n))
    a0[0, 2] = 0.3
    a1 = 0.3 * np.eye(n)
    sig = svarm_synthesize(a0, a1, np.zeros(n), NoiseSpec(1.0, 0, 4), t_len)
    obs = random_obs(n, t_len, 3, 4, values=sig.process)
    common = dict(mu=50, lambda1=0.5, lambda2=0.1, max_outer=200, tol_outer=1e-9)
    batch = jisgot(obs, SvarmConfig(**common))
    cfg = TrackerConfig(lag=t_len, beta=0.0, warm_start=False, **common)
    # with a full-length window and cold starts only the final step matters,
    # so the earlier steps run a single sweep
    cheap = TrackerConfig(lag=t_len, beta=0.0, warm_start=False, **{**common, "max_outer": 1})
    state = tracker_init(np.zeros(n), cfg)
    stream = _stream(obs)
    for idx, y in stream[:-1]:
        tracker_step(state, y, idx, cheap)
    last = tracker_step(state, stream[-1][1], stream[-1][0], cfg)
    assert np.abs(last.a0 - batch.a0.entries).max() < 1e-6
    assert np.abs(last.a1 - batch.a1.entries).max() < 1e-6
    assert np.abs(last.signals - batch.signals.values).max() < 1e-6


def test_window_objective_nonincreasing_per_step():
    obs = random_obs(5, 20, 2, 7)
    for step in run_online(_stream(obs), TrackerConfig(lag=4), n=5):
        assert np.all(np.diff(step.objective_trace) <= 1e-10)
        assert not np.diag(step.a0).any()


def test_empty_stream():
    assert run_online([], TrackerConfig(), n=3) == []
    with pytest.raises(InvalidSpecError):
        run_online([], TrackerConfig())


def test_replay_is_bit_identical():
    obs = random_obs(4, 12, 2, 3)
    first = run_online(_stream(obs), TrackerConfig(lag=3), n=4)
    second = run_online(_stream(obs), TrackerConfig(lag=3), n=4)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.a0, b.a0)
        np.testing.assert_array_equal(a.a1, b.a1)
        np.testing.assert_array_equal(a.signals, b.signals)


def test_window_bookkeeping():
    obs = random_obs(3, 7, 2, 1)
    steps = run_online(_stream(obs), TrackerConfig(lag=3), n=3)
    assert [s.time for s in steps] == list(range(1, 8))
    assert [s.window_start for s in steps] == [0, 0, 0, 1, 2, 3, 4]
    assert [s.warmup for s in steps] == [True, True, False, False, False, False, False]
    assert all(s.signals.shape[1] == min(s.time, 3) + 1 for s in steps)


def test_dict_records_accepted():
    obs = random_obs(3, 4, 2, 0)
    recs = [{"indices": i, "y": y} for i, y in _stream(obs)]
    a = run_online(recs, TrackerConfig(lag=2), n=3)
    b = run_online(_stream(obs), TrackerConfig(lag=2), n=3)
    np.testing.assert_array_equal(a[-1].a0, b[-1].a0)


def _switching_instance(seed, n=8, t_len=160):
    rng = make_rng(seed)

    def draw():
        sign = lambda: rng.choice([-1, 1], size=(n, n))  # noqa: E731
        a0 = sign() * rng.uniform(0.3, 0.5, (n, n)) * (rng.random((n, n)) < 0.05)
        np.fill_diagonal(a0, 0)
        a1 = sign() * rng.uniform(0.3, 0.5, (n, n)) * (rng.random((n, n)) < 0.2)
        return a0, a1

    a0, a1 = draw()
    b0, b1 = draw()
    half = t_len // 2
    first = svarm_synthesize(a0, a1, np.zeros(n), NoiseSpec(1, 0, seed), half)
    second = svarm_synthesize(b0, b1, first.values[:, -1], NoiseSpec(1, 0, seed + 100), half)
    sig = np.hstack([first.process, second.process])
    obs = sample_observations(sig, SamplingSchedule.full(n, t_len), NoiseSpec(0, 0))
    return (b0 != 0) | (b1 != 0), obs


def test_tracker_follows_topology_switch():
    truth, obs = _switching_instance(1)
    t_len = len(obs)
    batch = jisgot(obs, SvarmConfig(mu=100, lambda1=10, lambda2=0.1))
    _, batch_err = best_threshold(truth, np.maximum(np.abs(batch.a0.entries), np.abs(batch.a1.entries)))
    steps = run_online(_stream(obs), TrackerConfig(mu=100, lambda1=4, lambda2=0.1, lag=40, beta=0.1), n=obs.n)
    online_err = np.mean([
        best_threshold(truth, np.maximum(np.abs(s.a0), np.abs(s.a1)))[1] for s in steps[-t_len // 4:]
    ])
    assert online_err < batch_err


def test_larger_beta_damps_topology_changes():
    _, _, obs = _svarm_instance(2, n=6, t_len=40)
    mean_change = []
    for beta in (0.1, 10.0, 200.0):
        steps = run_online(_stream(obs), TrackerConfig(mu=100, lambda1=1, lambda2=0.1, lag=5, beta=beta), n=6)
        mean_change.append(_changes(steps)[-20:].mean())
    assert mean_change[0] > mean_change[1] > mean_change[2]


@pytest.mark.xfail(strict=True, reason="a fixed window with a constant proximal weight keeps fluctuating; no decreasing trend")
def test_stationary_estimates_settle():
    slopes = []
    for seed in range(4):
        _, _, obs = _svarm_instance(seed, n=6, t_len=60)
        steps = run_online(_stream(obs), TrackerConfig(mu=100, lambda1=1, lambda2=0.1, lag=5), n=6)
        d = _changes(steps)[-20:]
        slopes.append(np.polyfit(np.arange(20), d, 1)[0])
    assert max(slopes) < 0


def test_estimator_partial_fit_matches_fit():
    obs = random_obs(4, 10, 2, 5)
    x = obs.to_nan_array()
    full = OnlineJISGoT(lag=3).fit(x)
    inc = OnlineJISGoT(lag=3).partial_fit(x[:6]).partial_fit(x[6:])
    np.testing.assert_array_equal(full.instantaneous_, inc.instantaneous_)
    np.testing.assert_array_equal(full.lagged_, inc.lagged_)
    assert len(inc.steps_) == 10


def test_estimator_transform_leaves_state_alone():
    obs = random_obs(4, 10, 2, 6)
    x = obs.to_nan_array()
    est = OnlineJISGoT(lag=3).fit(x[:6])
    before = copy.deepcopy(est.state_)
    out = est.transform(x[6:])
    assert out.shape == (4, 4)
    np.testing.assert_array_equal(before.a0, est.state_.a0)
    assert before.time == est.state_.time
    filt = est.fit_transform(x)
    assert filt.shape == (10, 4)
