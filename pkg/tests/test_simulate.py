import numpy as np
import pytest

from sgpg import exact, games, simulate
from sgpg.errors import RuntimeBreach


def test_certain_stop_gives_length_one():
    g = games.single_state_game(1.0, [np.zeros((2, 2)), np.zeros((2, 2))])
    rng = simulate.RngState(1, 0)
    for _ in range(200):
        traj = simulate.sample_episode(g, games.uniform_policy(g), rng)
        assert traj.T == 1


def test_episode_is_deterministic_per_stream():
    g = games.builtin_game("handoff2")
    pi = games.uniform_policy(g)
    t1 = simulate.sample_episode(g, pi, simulate.RngState(42, 7))
    t2 = simulate.sample_episode(g, pi, simulate.RngState(42, 7))
    assert np.array_equal(t1.states, t2.states)
    assert np.array_equal(t1.actions, t2.actions)
    assert np.array_equal(t1.rewards, t2.rewards)
    t3 = simulate.sample_episode(g, pi, simulate.RngState(42, 8))
    different = (t1.T != t3.T or not np.array_equal(t1.actions, t3.actions)
                 or not np.array_equal(t1.states, t3.states))
    assert different


def test_rng_advances_between_episodes():
    g = games.builtin_game("coord2")
    pi = games.uniform_policy(g)
    rng = simulate.RngState(5, 0)
    simulate.sample_episode(g, pi, rng)
    assert rng.stream == 1


def test_mean_episode_length_matches_geometric():
    g = games.builtin_game("coord2")
    mean, se = simulate.mc_functional(g, games.uniform_policy(g),
                                      np.ones((1, 4)), 100_000, simulate.RngState(9, 0))
    assert abs(mean - 2.0) <= 3 * se


def test_trajectory_rewards_in_range():
    g = games.builtin_game("random", seed=3, n_states=2, actions=(2, 2), zeta=0.5)
    rng = simulate.RngState(2, 0)
    for _ in range(100):
        traj = simulate.sample_episode(g, games.uniform_policy(g), rng)
        assert traj.T >= 1
        assert np.all(np.abs(traj.rewards) <= 1.0)


def test_mc_functional_zero_table():
    g = games.builtin_game("coord2")
    mean, se = simulate.mc_functional(g, games.uniform_policy(g),
                                      np.zeros((1, 4)), 500, simulate.RngState(0, 0))
    assert mean == 0.0 and se == 0.0


def test_mc_functional_matches_value():
    g = games.builtin_game("coord2")
    pi_star = games.deterministic_policy(g, [[0], [0]])
    mean, se = simulate.mc_functional(g, pi_star, g.rewards[0], 40_000,
                                      simulate.RngState(4, 0))
    assert abs(mean - 2.0) <= 3 * se


def test_mc_matches_conversion_on_builtins():
    rng_policy = np.random.default_rng(31)
    for name in ("coord2", "pennies2", "handoff2"):
        g = games.builtin_game(name)
        rows = tuple(np.array([r / r.sum() for r in rng_policy.uniform(0.2, 1, (g.n_states, a))])
                     for a in g.action_counts)
        pi = games.PolicyProfile(rows)
        f = rng_policy.uniform(-1, 1, size=(g.n_states, g.n_joint))
        expected = exact.conversion_expectation(g, pi, f)
        mean, se = simulate.mc_functional(g, pi, f, 30_000, simulate.RngState(6, 0))
        assert abs(mean - expected) <= 3 * max(se, 1e-12)


def test_occupancy_matches_visitation():
    g = games.builtin_game("handoff2")
    pi = games.uniform_policy(g)
    nu = exact.visitation(g, pi).nu
    batch = simulate.sample_batch(g, pi, 60_000, simulate.RngState(8, 0))
    occ = batch.occupancy(g.n_states)
    # per-state SE of the empirical mean visit count
    for s in range(g.n_states):
        per_ep = np.bincount(batch.ep[batch.s == s], minlength=batch.n_episodes)
        se = per_ep.std(ddof=1) / np.sqrt(batch.n_episodes)
        assert abs(occ[s] - nu[s]) <= 3 * se


def test_batch_and_single_sampler_agree_in_distribution():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.2, 0.8]])))
    rng = simulate.RngState(12, 0)
    singles = [simulate.sample_episode(g, pi, rng).T for _ in range(4000)]
    batch = simulate.sample_batch(g, pi, 4000, simulate.RngState(13, 0))
    # mean lengths agree within joint 3-sigma
    m1, s1 = np.mean(singles), np.std(singles, ddof=1) / np.sqrt(len(singles))
    m2 = batch.lengths.mean()
    s2 = batch.lengths.std(ddof=1) / np.sqrt(batch.n_episodes)
    assert abs(m1 - m2) <= 3 * np.hypot(s1, s2)


def test_max_length_tripwire():
    g = games.builtin_game("coord2")
    tab = simulate._tables(g)
    original = tab.max_len
    tab.max_len = 1
    try:
        with pytest.raises(RuntimeBreach) as exc:
            for k in range(200):
                simulate.sample_episode(g, games.uniform_policy(g), simulate.RngState(1, k))
        assert exc.value.code == "MAX_LENGTH_EXCEEDED"
    finally:
        tab.max_len = original
