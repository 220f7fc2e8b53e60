import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from becnet.kmc import (
    KmcState,
    Trajectory,
    first_passage_time,
    kmc_step,
    run_ensemble,
    run_trajectory,
    sample_grid,
    trajectory_seeds,
)
from becnet.model import INFINITE, ModelError, NetworkSpec, ThermoParams, transition_weights
from becnet.oracle import mean_spin_trajectory, stationary_distribution
from becnet.schedule import BetaSchedule

from conftest import random_spec


def test_step_changes_one_site(rng):
    spec = random_spec(rng, 3, 4, scale=0.3)
    state = KmcState(np.array([1, 2, 3]), 0.0, np.random.default_rng(1))
    for _ in range(200):
        nxt = kmc_step(state, spec, ThermoParams(0.8))
        diff = nxt.k - state.k
        assert np.abs(diff).sum() == 1
        assert nxt.t >= state.t
        assert np.all((nxt.k >= 0) & (nxt.k <= 4))
        state = nxt


def test_step_terminal_at_absorbing_state():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([-1.0]), 3)
    state = KmcState(np.array([3]), 1.5, np.random.default_rng(0))
    out = kmc_step(state, spec, ThermoParams(INFINITE))
    assert out.terminal and out.t == 1.5 and out.k.tolist() == [3]


def test_time_draw_uses_half_open_interval():
    class FixedRng:
        def random(self, n):
            return np.array([0.25, 0.0])  # numpy draws [0, 1); r = 1 - 0 = 1

    spec = NetworkSpec(np.zeros((1, 1)), np.zeros(1), 2)
    out = kmc_step(KmcState(np.array([1]), 0.0, FixedRng()), spec, ThermoParams(1.0))
    assert out.t == 0.0


def _event_frequencies(spec, thermo, k, n, seed):
    rng = np.random.default_rng(seed)
    counts = {}
    for _ in range(n):
        nxt = kmc_step(KmcState(k.copy(), 0.0, rng), spec, thermo)
        key = tuple((nxt.k - k).tolist())
        counts[key] = counts.get(key, 0) + 1
    return counts


@pytest.mark.parametrize("k0", [0, 1])
def test_event_probabilities_single_site_two_levels(k0):
    spec = NetworkSpec(np.zeros((1, 1)), np.array([0.3]), 1)
    counts = _event_frequencies(spec, ThermoParams(1.0), np.array([k0]), 2000, 3)
    assert counts == {(1 if k0 == 0 else -1,): 2000}


def test_event_probabilities_binomial():
    spec = NetworkSpec(np.array([[0.0, 0.3], [0.3, 0.0]]), np.array([0.2, -0.4]), 3)
    th = ThermoParams(0.7)
    k = np.array([1, 2])
    n = 100_000
    counts = _event_frequencies(spec, th, k, n, 11)
    weights = {}
    for i in range(2):
        up, down = transition_weights(spec, th, k, i)
        e = [0, 0]
        e[i] = 1
        weights[tuple(e)] = up
        e[i] = -1
        weights[tuple(e)] = down
    total = sum(weights.values())
    for key, w in weights.items():
        p = w / total
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts.get(key, 0) - n * p) <= 3 * sigma


def test_trajectory_zero_length():
    spec = NetworkSpec(np.zeros((2, 2)), np.zeros(2), 4)
    traj = run_trajectory(spec, ThermoParams(1.0), np.array([1, 3]), 0.0, 0.1, seed=5)
    assert traj.times.tolist() == [0.0]
    assert traj.spins.tolist() == [[-0.5, 0.5]]


def test_trajectory_reproducible(rng):
    spec = random_spec(rng, 3, 5, scale=0.2)
    a = run_trajectory(spec, ThermoParams(1.0), None, 2.0, 0.05, seed=99)
    b = run_trajectory(spec, ThermoParams(1.0), None, 2.0, 0.05, seed=99)
    c = run_trajectory(spec, ThermoParams(1.0), None, 2.0, 0.05, seed=98)
    assert a.spins.tobytes() == b.spins.tobytes()
    assert a.spins.tobytes() != c.spins.tobytes()


def test_trajectory_matches_repeated_steps(rng):
    spec = random_spec(rng, 2, 6, scale=0.2)
    th = ThermoParams(0.6)
    k0 = np.array([2, 5])
    traj = run_trajectory(spec, th, k0, 0.5, 0.01, seed=4)
    state = KmcState(k0, 0.0, np.random.default_rng(4))
    for t, s in zip(traj.times, traj.spins):
        while True:
            nxt = kmc_step(state, spec, th)
            if nxt.t > t:
                break
            state = nxt
        assert np.array_equal(s, (2 * state.k - 6) / 6)
        # rewind: replay from the start to keep the stream aligned
        state = KmcState(k0, 0.0, np.random.default_rng(4))


def test_large_site_count_path(rng):
    # M above the small-instance threshold takes the vectorised path
    spec = random_spec(rng, 20, 3, scale=0.05)
    traj = run_trajectory(spec, ThermoParams(1.0), None, 0.5, 0.1, seed=1)
    assert traj.spins.shape == (6, 20)
    assert np.all(np.abs(traj.spins) <= 1)


def test_absorbing_state_fills_remaining_samples():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([-1.0]), 4)
    traj = run_trajectory(spec, ThermoParams(INFINITE), np.array([2]), 50.0, 1.0, seed=0)
    assert traj.spins[-1, 0] == 1.0
    assert traj.spins.shape == (51, 1)


def test_trajectory_times_must_increase():
    with pytest.raises(ModelError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 1)))


def test_sample_grid():
    assert sample_grid(1.0, 0.25).tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ModelError):
        sample_grid(1.0, 0.0)


def test_infinite_temperature_mean_is_zero():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([0.8]), 4)
    ens = run_ensemble(spec, ThermoParams(0.0), 2000, 3.0, 1.0, base_seed=2)
    assert abs(ens.mean[-1, 0]) <= 3 * ens.stderr[-1, 0]


def test_single_site_speedup_two_points():
    def settle(N):
        spec = NetworkSpec(np.zeros((1, 1)), np.array([-1.0]), N)
        t_max = 5.0 / N
        ens = run_ensemble(spec, ThermoParams(INFINITE), 200, t_max, t_max / 1000, 5, k0=np.array([N // 2]))
        idx = np.argmax(np.abs(ens.mean[:, 0] - 1.0) < 0.1)
        return ens.times[idx]

    ratio = settle(100) / settle(1000)
    assert 8.0 < ratio < 12.0


def test_ensemble_single_trajectory():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([0.1]), 5)
    ens = run_ensemble(spec, ThermoParams(1.0), 1, 1.0, 0.1, base_seed=3, k0=np.array([2]))
    seed = trajectory_seeds(3, 1)[0]
    traj = run_trajectory(spec, ThermoParams(1.0), np.array([2]), 1.0, 0.1, seed)
    assert np.array_equal(ens.mean, traj.spins)
    assert np.all(ens.var == 0)


def test_ensemble_matches_oracle_mean():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([0.3]), 5)
    th = ThermoParams(1.0)
    ens = run_ensemble(spec, th, 4000, 1.0, 0.1, base_seed=8)
    exact, _ = mean_spin_trajectory(spec, th, ens.times)
    assert np.all(np.abs(ens.mean - exact) <= 4 * ens.stderr + 1e-12)


def test_equilibrium_variance_matches_oracle():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([0.15]), 4)
    th = ThermoParams(1.0)
    ens = run_ensemble(spec, th, 4000, 3.0, 3.0, base_seed=21)
    pi = stationary_distribution(spec, th)
    s = (2 * np.arange(5) - 4) / 4
    var = pi @ s**2 - (pi @ s) ** 2
    # standard error of a sample variance: sqrt((mu4 - var^2) / n)
    mu4 = pi @ (s - pi @ s) ** 4
    se = math.sqrt((mu4 - var**2) / 4000)
    assert abs(ens.var[-1, 0] - var) <= 3 * se


def test_doubling_trajectories_halves_squared_error():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([0.2]), 3)
    th = ThermoParams(1.0)
    a = run_ensemble(spec, th, 2000, 1.0, 1.0, base_seed=1)
    b = run_ensemble(spec, th, 4000, 1.0, 1.0, base_seed=2)
    ratio = b.stderr[-1, 0] ** 2 / a.stderr[-1, 0] ** 2
    assert 0.4 < ratio < 0.6


def test_ensemble_independent_of_worker_count():
    spec = NetworkSpec(np.array([[0.0, 0.2], [0.2, 0.0]]), np.array([0.1, -0.1]), 3)
    th = ThermoParams(0.5)
    a = run_ensemble(spec, th, 150, 0.5, 0.1, base_seed=4, workers=1)
    b = run_ensemble(spec, th, 150, 0.5, 0.1, base_seed=4, workers=2)
    assert a.mean.tobytes() == b.mean.tobytes()
    assert a.var.tobytes() == b.var.tobytes()


def test_histogram_total_variation():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([0.25]), 3)
    th = ThermoParams(1.0)
    t = 0.4
    counts = np.zeros(4)
    for seed in trajectory_seeds(6, 10_000):
        traj = run_trajectory(spec, th, np.array([0]), t, t, seed)
        counts[int(round((traj.spins[-1, 0] + 1) * 3 / 2))] += 1
    from becnet.oracle import evolve

    p = evolve(spec, th, np.array([1.0, 0, 0, 0]), t)
    assert 0.5 * np.abs(counts / counts.sum() - p).sum() < 0.05


def test_schedule_is_followed():
    # beta ramps from 0 to large: the site ends filled for a negative field
    spec = NetworkSpec(np.zeros((1, 1)), np.array([-1.0]), 20)
    sched = BetaSchedule([0.0, 0.5], [0.0, 20.0])
    ens = run_ensemble(spec, sched, 200, 2.0, 0.5, base_seed=0, k0=np.array([10]))
    assert ens.mean[-1, 0] > 0.9


def test_first_passage_time():
    spec = NetworkSpec(np.zeros((1, 1)), np.array([-1.0]), 50)
    th = ThermoParams(INFINITE)
    t = first_passage_time(spec, th, np.array([25]), lambda s: s[0] > 0.5, 10.0, seed=1)
    assert t is not None and t > 0
    assert first_passage_time(spec, th, np.array([25]), lambda s: s[0] < -0.5, 10.0, seed=1) is None
    assert first_passage_time(spec, th, np.array([25]), lambda s: True, 10.0, seed=1) == 0.0


@given(base=st.integers(0, 2**32), n=st.integers(1, 50))
def test_seeds_are_prefix_stable_and_distinct(base, n):
    seeds = trajectory_seeds(base, n)
    assert len(set(seeds)) == n
    assert trajectory_seeds(base, n + 3)[:n] == seeds
