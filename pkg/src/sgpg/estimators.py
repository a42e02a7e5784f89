"""Gradient signals for the three feedback models.

full         -- the exact ensemble gradient (bias 0, noise 0).
stochastic   -- exact gradient plus i.i.d. zero-mean noise (bounded uniform
                by default; gaussian behind a flag, which technically breaks
                the bounded-noise assumption the error schedule relies on and
                is offered for experimentation only).
value_based  -- score-function (log-trick) estimate from a single episode
                sampled at the epsilon-mixed policy.

The value-based estimate of player i is R_i(tau) times the sum over steps of
the gradient of log pi_i(a_t | s_t): each step contributes 1/pi_i(a_t|s_t)
at the played coordinate and 0 elsewhere.  With mixing epsilon the bias is
at most G * epsilon (G below) and the per-player second moment of the error
is at most 24 A_i^2 / (epsilon zeta^4); without mixing it is unbiased with
second moment at most 24 A_i / (kappa_i zeta^4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BAD_PARAMS,
    EPS_OUT_OF_RANGE,
    ZERO_PROBABILITY_ACTION,
    ConfigError,
    RuntimeBreach,
)
from .exact import policy_gradient, transition_matrix, value_report, visitation
from .games import PolicyProfile
from .simulate import sample_batch, sample_episode

MODELS = ("full", "stochastic", "value_based")


@dataclass
class NoiseConfig:
    kind: str = "uniform"      # "uniform" (bounded) or "gaussian"
    scale: float = 0.0         # half-width / standard deviation per coordinate


@dataclass
class Decomposition:
    v_true: np.ndarray         # v(pi_n)
    noise: np.ndarray          # vhat - E[vhat | F_n]
    bias: np.ndarray           # E[vhat | F_n] - v(pi_n)


@dataclass
class GradientSignal:
    vhat: np.ndarray
    model: str
    eps: float = 0.0
    bias_bound: float = 0.0
    noise_bound: float = 0.0
    decomposition: Decomposition | None = None


def bias_constant(game):
    """G = 3 n A^{3/2} sqrt(|S|) / zeta^3 with A = sum_i A_i."""
    A = sum(game.action_counts)
    return 3.0 * game.n_players * A ** 1.5 * math.sqrt(game.n_states) / game.zeta_min ** 3


def mixed_noise_bound(game, eps):
    """Ensemble second-moment bound sqrt(sum_i 24 A_i^2 / (eps zeta^4))."""
    tot = sum(24.0 * a * a / (eps * game.zeta_min ** 4) for a in game.action_counts)
    return math.sqrt(tot)


def score_estimator_mean(game, pi):
    """Exact mean of the one-episode score estimator sampled at `pi`.

    The raw (uncentered) log-trick estimate is unbiased for the gradient of
    the trajectory-probability extension of the value, which differs from
    the engine's gradient by a constant on each (player, state) block:

        E[vhat_(i,s,a)] = nu(s) Qbar_i(s,a) + c_{i,s},
        c_{i,s} = sum_{s'} nu(s') sum_j pi(j|s') r_i(s',j) (P H)[s',j -> s]

    with H = (I - M)^{-1}.  Block constants are annihilated by blockwise
    simplex projection, so the two notions of "the gradient" drive the
    learning dynamics identically; this function is the right reference for
    componentwise statistics of the raw estimator.
    """
    rep = value_report(game, pi)
    nu = visitation(game, pi).nu
    M = transition_matrix(game, pi)
    H = np.linalg.inv(np.eye(game.n_states) - M)
    joint = pi.joint_table()
    out = []
    for i in range(game.n_players):
        Ti = np.einsum("sj,sj,sjt->st", joint, game.rewards[i], game.transitions)
        c = nu @ Ti @ H                         # (S,)
        out.append(nu[:, None] * rep.Qbar[i] + c[:, None])
    return np.concatenate([g.ravel() for g in out])


def tangent_project(x, shape):
    """Remove the per-(player, state) block means: the component of a score
    vector that blockwise simplex projection actually responds to."""
    from .games import flatten_blocks
    x = np.asarray(x, dtype=float)
    out = x.copy()
    for i, s, off, a in flatten_blocks(shape):
        out[off:off + a] -= out[off:off + a].mean()
    return out


def mix_policy(pi, eps):
    """(1 - eps) pi + eps * uniform, per player and state."""
    if not (0.0 <= eps <= 1.0):
        raise ConfigError(EPS_OUT_OF_RANGE, f"eps must be in [0, 1], got {eps}")
    if eps == 0.0:
        return pi
    rows = tuple((1.0 - eps) * r + eps / r.shape[1] for r in pi.rows)
    return PolicyProfile(rows)


def reinforce_estimate(pi_hat, traj):
    """Per-player log-trick estimates from one trajectory sampled at pi_hat."""
    states = traj.states.tolist()
    actions = traj.actions.tolist()
    totals = traj.rewards.sum(axis=0).tolist()
    out = []
    for i, rows in enumerate(pi_hat.rows):
        rows_l = rows.tolist()
        g = np.zeros_like(rows)
        for t, s in enumerate(states):
            a = actions[t][i]
            p = rows_l[s][a]
            if p <= 0.0:
                raise RuntimeBreach(
                    ZERO_PROBABILITY_ACTION,
                    f"player {i} action {a} at state {s} has zero sampling probability")
            g[s, a] += 1.0 / p
        out.append(totals[i] * g)
    return out


def make_signal(model, game, pi, eps_n=0.0, noise_cfg=None, rng=None, batch=1):
    """One gradient signal for the requested feedback model.

    `rng` is consumed (one stream) by the stochastic and value_based models.
    `batch` > 1 averages that many single-episode estimates; the default of 1
    matches the one-trajectory-per-update protocol.
    """
    if model == "full":
        v = policy_gradient(game, pi).v
        return GradientSignal(vhat=v, model=model)

    if model == "stochastic":
        cfg = noise_cfg or NoiseConfig()
        v = policy_gradient(game, pi).v
        if cfg.scale == 0.0:
            return GradientSignal(vhat=v.copy(), model=model)
        gen = rng.generator()
        rng.advance()
        if cfg.kind == "uniform":
            xi = gen.uniform(-cfg.scale, cfg.scale, size=v.shape)
            sigma = cfg.scale * math.sqrt(v.size / 3.0)
        elif cfg.kind == "gaussian":
            xi = gen.normal(0.0, cfg.scale, size=v.shape)
            sigma = cfg.scale * math.sqrt(v.size)
        else:
            raise ConfigError(BAD_PARAMS, f"unknown noise kind '{cfg.kind}'")
        return GradientSignal(vhat=v + xi, model=model, noise_bound=sigma)

    if model == "value_based":
        if not (0.0 < eps_n <= 1.0):
            raise ConfigError(EPS_OUT_OF_RANGE,
                              f"value_based model needs eps in (0, 1], got {eps_n}")
        acc = None
        for _ in range(max(1, batch)):
            flat = _one_episode_estimate(game, pi, eps_n, rng)
            acc = flat if acc is None else acc + flat
        vhat = acc / max(1, batch)
        return GradientSignal(vhat=vhat, model=model, eps=eps_n,
                              bias_bound=bias_constant(game) * eps_n,
                              noise_bound=mixed_noise_bound(game, eps_n))

    raise ConfigError(BAD_PARAMS, f"unknown model '{model}' (expected one of {MODELS})")


def _one_episode_estimate(game, pi, eps, rng):
    """Mix, sample one episode, and fold the log-trick sum, all in one pass.

    Same draws and arithmetic as sample_episode + reinforce_estimate at the
    mixed policy; fused to keep the per-iteration cost of learning loops low.
    """
    from .simulate import _episode_lists, _tables
    tab = _tables(game)
    gen = rng.generator()
    rng.advance()
    counts = game.action_counts
    S = game.n_states
    keep = 1.0 - eps
    mixed, cum_rows = [], []
    for r, a_count in zip(pi.rows, counts):
        unif = eps / a_count
        rows_m, rows_c = [], []
        for row in r.tolist():
            m = [keep * p + unif for p in row]
            c, run = [], 0.0
            for p in m:
                run += p
                c.append(run)
            rows_m.append(m)
            rows_c.append(c)
        mixed.append(rows_m)
        cum_rows.append(rows_c)
    states, actions, joints = _episode_lists(game, cum_rows, gen)

    totals = [0.0] * game.n_players
    for s, j in zip(states, joints):
        rew = tab.rewards_l[s][j]
        for i in range(game.n_players):
            totals[i] += rew[i]

    vhat = np.zeros(game.flat_dim)
    off = 0
    for i, a_count in enumerate(counts):
        block = [0.0] * (S * a_count)
        rows_l = mixed[i]
        for t, s in enumerate(states):
            a = actions[t][i]
            block[s * a_count + a] += 1.0 / rows_l[s][a]
        Ri = totals[i]
        vhat[off:off + S * a_count] = [Ri * x for x in block]
        off += S * a_count
    return vhat


def decompose_signal(game, pi, signal):
    """Fill the (v(pi), noise, bias) split for an instrumented signal.

    The conditional mean comes from the exact engine: for the value-based
    model it is the closed-form score-estimator mean at the sampling policy
    (see score_estimator_mean), so the recorded noise is exactly zero-mean.
    """
    v_true = policy_gradient(game, pi).v
    if signal.model in ("full", "stochastic"):
        mean = v_true
    else:
        mean = score_estimator_mean(game, mix_policy(pi, signal.eps))
    signal.decomposition = Decomposition(
        v_true=v_true, noise=signal.vhat - mean, bias=mean - v_true)
    return signal.decomposition


@dataclass
class EstimatorStats:
    mean: np.ndarray             # component-wise mean of the raw estimates
    se: np.ndarray               # component-wise standard error of the mean
    exact: np.ndarray            # engine gradient at the sampling policy
    score_mean: np.ndarray       # exact conditional mean of the raw estimator
    tangent_mean: np.ndarray     # block-centered empirical mean
    tangent_se: np.ndarray       # standard error of the centered components
    tangent_exact: np.ndarray    # block-centered engine gradient
    mse_per_player: np.ndarray   # empirical E||vhat_i - v_i||^2
    mse_bound_per_player: np.ndarray
    n_episodes: int


def reinforce_stats(game, pi, n_episodes, rng, eps=0.0):
    """Batched empirical statistics of the estimator at mix(pi, eps).

    Componentwise means are reported both raw (reference: the exact
    conditional mean) and block-centered (reference: the engine gradient,
    whose centered part the estimator is unbiased for).  Error moments are
    measured against the engine gradient at the sampling policy.
    """
    pi_hat = mix_policy(pi, eps)
    batch = sample_batch(game, pi_hat, n_episodes, rng)
    R = batch.episode_rewards(game)                       # (N, n)
    counts = game.action_counts
    S = game.n_states
    shape = (S, counts)

    v_flat = policy_gradient(game, pi_hat).v
    dim = v_flat.size
    sum1 = np.zeros(dim)
    sum2 = np.zeros(dim)
    tsum1 = np.zeros(dim)
    tsum2 = np.zeros(dim)
    mse = np.zeros(game.n_players)
    off = 0
    for i in range(game.n_players):
        block = S * counts[i]
        rows = pi_hat.rows[i]
        probs = rows[batch.s, batch.a[:, i]]
        flat_coord = batch.s * counts[i] + batch.a[:, i]
        G = np.zeros((n_episodes, block))
        np.add.at(G, (batch.ep, flat_coord), 1.0 / probs)
        Vi = G * R[:, i:i + 1]                            # (N, block)
        sum1[off:off + block] = Vi.sum(axis=0)
        sum2[off:off + block] = (Vi ** 2).sum(axis=0)
        centered = Vi - Vi.reshape(n_episodes, S, counts[i]).mean(axis=2).repeat(counts[i], axis=1)
        tsum1[off:off + block] = centered.sum(axis=0)
        tsum2[off:off + block] = (centered ** 2).sum(axis=0)
        err = Vi - v_flat[off:off + block][None, :]
        mse[i] = float((err ** 2).sum() / n_episodes)
        off += block
    bessel = n_episodes / max(1, n_episodes - 1)

    def _mean_se(s1, s2):
        mean = s1 / n_episodes
        var = np.maximum(s2 / n_episodes - mean ** 2, 0.0) * bessel
        return mean, np.sqrt(var / n_episodes)

    mean, se = _mean_se(sum1, sum2)
    tmean, tse = _mean_se(tsum1, tsum2)
    kappa = pi_hat.kappa()
    bound = np.array([24.0 * counts[i] / (kappa[i] * game.zeta_min ** 4)
                      for i in range(game.n_players)])
    return EstimatorStats(mean=mean, se=se, exact=v_flat,
                          score_mean=score_estimator_mean(game, pi_hat),
                          tangent_mean=tmean, tangent_se=tse,
                          tangent_exact=tangent_project(v_flat, shape),
                          mse_per_player=mse, mse_bound_per_player=bound,
                          n_episodes=n_episodes)
