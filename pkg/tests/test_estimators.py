import numpy as np
import pytest

from sgpg import estimators, exact, games, simulate
from sgpg.errors import ConfigError, RuntimeBreach


def test_mix_policy_endpoints():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.2, 0.8]])))
    assert estimators.mix_policy(pi, 0.0) is pi
    uni = estimators.mix_policy(pi, 1.0)
    assert games.policies_equal(uni, games.uniform_policy(g))
    det = games.deterministic_policy(g, [[0], [0]])
    mixed = estimators.mix_policy(det, 0.2)
    assert np.allclose(mixed.rows[0], [[0.9, 0.1]])
    assert mixed.kappa().min() >= 0.2 / 2 - 1e-15


def test_mix_policy_rejects_bad_eps():
    g = games.builtin_game("coord2")
    with pytest.raises(ConfigError) as exc:
        estimators.mix_policy(games.uniform_policy(g), 1.5)
    assert exc.value.code == "EPS_OUT_OF_RANGE"


def test_reinforce_single_step_log_trick():
    g = games.builtin_game("coord2")
    uni = games.uniform_policy(g)
    traj = simulate.Trajectory(states=np.array([0]),
                               actions=np.array([[1, 0]]),
                               rewards=np.array([[0.5, -0.5]]))
    est = estimators.reinforce_estimate(uni, traj)
    # played coordinate gets r / 0.5 = 2r, the other coordinate stays 0
    assert np.allclose(est[0], [[0.0, 1.0]])
    assert np.allclose(est[1], [[-1.0, 0.0]])


def test_reinforce_zero_return_gives_zero_vector():
    g = games.builtin_game("coord2")
    uni = games.uniform_policy(g)
    traj = simulate.Trajectory(states=np.array([0, 0, 0]),
                               actions=np.array([[0, 1], [1, 0], [0, 0]]),
                               rewards=np.zeros((3, 2)))
    est = estimators.reinforce_estimate(uni, traj)
    assert all(np.all(e == 0) for e in est)


def test_reinforce_rejects_zero_probability_action():
    g = games.builtin_game("coord2")
    det = games.deterministic_policy(g, [[0], [0]])
    traj = simulate.Trajectory(states=np.array([0]),
                               actions=np.array([[1, 0]]),
                               rewards=np.array([[1.0, 1.0]]))
    with pytest.raises(RuntimeBreach) as exc:
        estimators.reinforce_estimate(det, traj)
    assert exc.value.code == "ZERO_PROBABILITY_ACTION"


def test_score_mean_tangent_equals_gradient_tangent():
    # the raw estimator mean and the engine gradient differ by a constant
    # per (player, state) block; their block-centered parts must agree
    rng = np.random.default_rng(3)
    for name in ("coord2", "pennies2", "handoff2"):
        g = games.builtin_game(name)
        for _ in range(5):
            rows = tuple(np.array([r / r.sum() for r in rng.uniform(0.1, 1, (g.n_states, a))])
                         for a in g.action_counts)
            pi = games.PolicyProfile(rows)
            sm = estimators.score_estimator_mean(g, pi)
            v = exact.policy_gradient(g, pi).v
            t1 = estimators.tangent_project(sm, g.shape)
            t2 = estimators.tangent_project(v, g.shape)
            assert np.abs(t1 - t2).max() < 1e-10


def test_score_mean_matches_empirical():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.4, 0.6]])))
    stats = estimators.reinforce_stats(g, pi, 60_000, simulate.RngState(3, 0))
    dev = np.abs(stats.mean - stats.score_mean) / np.maximum(stats.se, 1e-300)
    assert dev.max() <= 4.0


def test_reinforce_variance_bound():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.4, 0.6]])))
    stats = estimators.reinforce_stats(g, pi, 30_000, simulate.RngState(5, 0))
    assert np.all(stats.mse_per_player <= stats.mse_bound_per_player)


def test_make_signal_full_is_exact():
    g = games.builtin_game("pennies2")
    sig = estimators.make_signal("full", g, games.uniform_policy(g))
    assert np.allclose(sig.vhat, 0.0, atol=1e-14)
    assert sig.bias_bound == 0.0 and sig.noise_bound == 0.0


def test_make_signal_stochastic_zero_scale_equals_full():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.4, 0.6]])))
    full = estimators.make_signal("full", g, pi)
    stoch = estimators.make_signal("stochastic", g, pi,
                                   noise_cfg=estimators.NoiseConfig(scale=0.0),
                                   rng=simulate.RngState(1, 0))
    assert np.array_equal(full.vhat, stoch.vhat)


def test_make_signal_stochastic_mean_recovers_gradient():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.4, 0.6]])))
    v = exact.policy_gradient(g, pi).v
    rng = simulate.RngState(7, 0)
    cfg = estimators.NoiseConfig(kind="uniform", scale=0.5)
    draws = np.array([estimators.make_signal("stochastic", g, pi, noise_cfg=cfg, rng=rng).vhat
                      for _ in range(10_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - v) <= 4 * se)


def test_make_signal_value_based_preconditions():
    g = games.builtin_game("coord2")
    with pytest.raises(ConfigError) as exc:
        estimators.make_signal("value_based", g, games.uniform_policy(g),
                               eps_n=0.0, rng=simulate.RngState(0, 0))
    assert exc.value.code == "EPS_OUT_OF_RANGE"
    with pytest.raises(ConfigError):
        estimators.make_signal("nosuch", g, games.uniform_policy(g))


def test_value_based_bounds_recorded():
    g = games.builtin_game("coord2")
    sig = estimators.make_signal("value_based", g, games.uniform_policy(g),
                                 eps_n=0.3, rng=simulate.RngState(2, 0))
    assert sig.eps == 0.3
    assert np.isclose(sig.bias_bound, estimators.bias_constant(g) * 0.3)
    assert np.isclose(sig.noise_bound, estimators.mixed_noise_bound(g, 0.3))
    # the stated constant: G = 3 n A^{3/2} sqrt(S) / zeta^3
    assert np.isclose(estimators.bias_constant(g), 3 * 2 * 4**1.5 * 1.0 / 0.125)
    # per-player noise second moment 24 A_i^2 / (eps zeta^4)
    per = 24.0 * 4 / (0.3 * 0.5 ** 4)
    assert np.isclose(estimators.mixed_noise_bound(g, 0.3), np.sqrt(2 * per))


def test_mixing_bias_bounds_hold_exactly():
    # tangent part of the conditional-mean shift obeys both the global
    # G*eps bound and the per-player smoothness bound
    rng = np.random.default_rng(11)
    for name in ("coord2", "handoff2"):
        g = games.builtin_game(name)
        G = estimators.bias_constant(g)
        L_par = 3.0 * np.sqrt(np.array(g.action_counts)) / g.zeta_min ** 3
        for eps in (0.05, 0.2, 0.5):
            rows = tuple(np.array([r / r.sum() for r in rng.uniform(0.1, 1, (g.n_states, a))])
                         for a in g.action_counts)
            pi = games.PolicyProfile(rows)
            pi_hat = estimators.mix_policy(pi, eps)
            v = exact.policy_gradient(g, pi)
            v_hat = exact.policy_gradient(g, pi_hat)
            diff = estimators.tangent_project(v_hat.v - v.v, g.shape)
            assert np.linalg.norm(diff) <= G * eps + 1e-12
            off = 0
            row_norms = [np.linalg.norm(pi_hat.rows[j] - pi.rows[j])
                         for j in range(g.n_players)]
            smooth_sum = sum(np.sqrt(g.action_counts[j]) * row_norms[j]
                             for j in range(g.n_players))
            for i in range(g.n_players):
                block = g.n_states * g.action_counts[i]
                di = np.linalg.norm((v_hat.v - v.v)[off:off + block])
                assert di <= L_par[i] * smooth_sum + 1e-12
                off += block


def test_decompose_signal_models():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.4, 0.6]])))
    v = exact.policy_gradient(g, pi).v

    sig = estimators.make_signal("full", g, pi)
    dec = estimators.decompose_signal(g, pi, sig)
    assert np.allclose(dec.noise, 0) and np.allclose(dec.bias, 0)

    rng = simulate.RngState(3, 0)
    sig3 = estimators.make_signal("value_based", g, pi, eps_n=0.25, rng=rng)
    dec3 = estimators.decompose_signal(g, pi, sig3)
    mean = estimators.score_estimator_mean(g, estimators.mix_policy(pi, 0.25))
    assert np.allclose(dec3.noise, sig3.vhat - mean)
    assert np.allclose(dec3.bias, mean - v)
    assert np.allclose(dec3.noise + dec3.bias + dec3.v_true, sig3.vhat)


def test_value_based_noise_is_zero_mean_empirically():
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.7, 0.3]]), np.array([[0.4, 0.6]])))
    eps = 0.3
    mean = estimators.score_estimator_mean(g, estimators.mix_policy(pi, eps))
    rng = simulate.RngState(17, 0)
    draws = np.array([estimators.make_signal("value_based", g, pi, eps_n=eps, rng=rng).vhat
                      for _ in range(30_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) <= 4 * se)


def test_batch_averaging():
    g = games.builtin_game("coord2")
    pi = games.uniform_policy(g)
    rng1 = simulate.RngState(5, 0)
    sig_b = estimators.make_signal("value_based", g, pi, eps_n=0.5, rng=rng1, batch=4)
    rng2 = simulate.RngState(5, 0)
    parts = [estimators.make_signal("value_based", g, pi, eps_n=0.5, rng=rng2).vhat
             for _ in range(4)]
    assert np.allclose(sig_b.vhat, np.mean(parts, axis=0))
    assert rng1.stream == rng2.stream == 4
