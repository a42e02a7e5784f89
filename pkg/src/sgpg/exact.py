"""Closed-form engine: values, Q-values, advantages, visitation measures,
exact policy gradients, finite-difference oracles, and mismatch bounds.

Everything reduces to |S| x |S| linear solves against the state-level
transition matrix M(pi)[s, s'] = sum_a pi(a|s) P(s'|s, a).  M is strictly
substochastic (row sums <= 1 - zeta < 1), so I - M is always invertible for
a valid game; a singular solve therefore signals an invariant breach, not a
user error.

The value formulas are total functions of the raw policy coordinates: they
stay defined (and smooth) in a neighborhood of the simplex product, which
is what makes central finite differences on raw coordinates well-posed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BAD_PARAMS,
    BOUNDARY_POLICY,
    DIMENSION_MISMATCH,
    SINGULAR_SYSTEM,
    ConfigError,
    RuntimeBreach,
)
from .games import (
    PolicyProfile,
    count_deterministic_profiles,
    deterministic_profiles,
    flatten_blocks,
    policy_from_flat,
)


@dataclass
class ValueReport:
    V: np.ndarray          # (n_players, n_states)
    V_rho: np.ndarray      # (n_players,)
    Q: np.ndarray          # (n_players, n_states, n_joint)
    Qbar: list             # per player (n_states, A_i)
    Adv: np.ndarray        # (n_players, n_states, n_joint)
    AdvBar: list           # per player (n_states, A_i)


@dataclass
class VisitationReport:
    nu: np.ndarray         # (n_states,) unnormalized measure
    Z: float               # sum of nu
    d: np.ndarray          # nu / Z


@dataclass
class GradientBundle:
    v: np.ndarray          # flat (player, state, action)
    per_player: list       # per player (n_states, A_i) views of the same data
    J: np.ndarray | None = None


@dataclass
class MismatchBound:
    c_lower: float
    c_upper: float
    method: str


def _solve(A, b):
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise RuntimeBreach(SINGULAR_SYSTEM, f"singular linear system: {e}") from e


def transition_matrix(game, pi):
    """State-level one-step matrix M(pi); substochastic for valid inputs."""
    joint = pi.joint_table()                           # (S, J)
    return np.einsum("sj,sjt->st", joint, game.transitions)


def mean_rewards(game, pi):
    """rbar_i(s) = sum_a pi(a|s) r_i(s,a), shape (n_players, n_states)."""
    joint = pi.joint_table()
    return np.einsum("sj,isj->is", joint, game.rewards)


def _qbar_from_q(game, pi, Qi, player):
    """Average Q_i(s, .) over the other players' rows -> (S, A_i)."""
    S = game.n_states
    counts = game.action_counts
    T = Qi.reshape((S,) + counts)
    # Contract every player axis except `player`, last axis first so the
    # remaining axis numbers stay valid.
    for j in reversed(range(len(counts))):
        if j == player:
            continue
        T = np.einsum(T, list(range(T.ndim)), pi.rows[j], [0, 1 + j],
                      [k for k in range(T.ndim) if k != 1 + j])
    return T.reshape(S, counts[player])


def value_report(game, pi):
    """Values, Q/advantage tables; V solves (I - M) V_i = rbar_i exactly."""
    M = transition_matrix(game, pi)
    rbar = mean_rewards(game, pi)
    eye = np.eye(game.n_states)
    V = _solve(eye - M, rbar.T).T                      # (n, S)
    # Bellman: Q_i(s,a) = r_i(s,a) + sum_s' P(s'|s,a) V_i(s')
    Q = game.rewards + np.einsum("sjt,it->isj", game.transitions, V)
    Adv = Q - V[:, :, None]
    Qbar, AdvBar = [], []
    for i in range(game.n_players):
        qb = _qbar_from_q(game, pi, Q[i], i)
        Qbar.append(qb)
        AdvBar.append(qb - V[i][:, None])
    return ValueReport(V=V, V_rho=V @ game.initial_dist, Q=Q, Qbar=Qbar,
                       Adv=Adv, AdvBar=AdvBar)


def values_rho(game, pi):
    """Just V_{i, rho}: one solve, no Q tables (fast path for FD/brute force)."""
    M = transition_matrix(game, pi)
    rbar = mean_rewards(game, pi)
    V = _solve(np.eye(game.n_states) - M, rbar.T).T
    return V @ game.initial_dist


def visitation(game, pi):
    """nu = rho + M(pi)^T nu, i.e. nu = (I - M^T)^{-1} rho."""
    M = transition_matrix(game, pi)
    nu = _solve(np.eye(game.n_states) - M.T, game.initial_dist)
    Z = float(nu.sum())
    return VisitationReport(nu=nu, Z=Z, d=nu / Z)


def policy_gradient(game, pi):
    """Exact ensemble gradient: component (i, s, a) equals nu(s) * Qbar_i(s, a)."""
    rep = value_report(game, pi)
    nu = visitation(game, pi).nu
    per_player = [nu[:, None] * rep.Qbar[i] for i in range(game.n_players)]
    v = np.concatenate([g.ravel() for g in per_player])
    return GradientBundle(v=v, per_player=per_player)


def conversion_expectation(game, pi, f):
    """Z * E_{s~d} E_{a~pi} f(s,a) for a state x joint-action table f."""
    f = np.asarray(f, dtype=float).reshape(game.n_states, game.n_joint)
    nu = visitation(game, pi).nu
    joint = pi.joint_table()
    return float(nu @ np.einsum("sj,sj->s", joint, f))


# ---------------------------------------------------------------------------
# Finite-difference oracles.

DEFAULT_FD_STEP = 1e-5


def _perturbed(pi, player, state, action, delta):
    rows = [r.copy() for r in pi.rows]
    rows[player][state, action] += delta
    return PolicyProfile(tuple(rows))


def gradient_fd(game, pi, h=DEFAULT_FD_STEP):
    """Central differences of V_{i, rho} on raw policy coordinates.

    Requires an interior policy with min-probability above h so both
    perturbations stay inside the smooth extension region.
    """
    if not (h > 0):
        raise ConfigError(BOUNDARY_POLICY, f"finite-difference step must be positive, got {h}")
    if np.any(pi.kappa() <= h):
        raise ConfigError(BOUNDARY_POLICY,
                          f"policy min-probability {pi.kappa().min()!r} <= h = {h}")
    out = np.empty(sum(game.n_states * a for a in game.action_counts))
    for i, s, off, a_count in flatten_blocks(game.shape):
        for a in range(a_count):
            up = values_rho(game, _perturbed(pi, i, s, a, +h))[i]
            dn = values_rho(game, _perturbed(pi, i, s, a, -h))[i]
            out[off + a] = (up - dn) / (2.0 * h)
    return out


def jacobian(game, pi, h=DEFAULT_FD_STEP):
    """FD Jacobian J[r, c] ~= d v_r / d pi_c on raw coordinates.

    Interior policies use central differences; deterministic profiles use
    one-sided differences pointing into the feasible cone (forward at
    coordinates sitting at 0, backward at coordinates sitting at 1).
    """
    if not (h > 0):
        raise ConfigError(BAD_PARAMS, f"finite-difference step must be positive, got {h}")
    V = game.flat_dim
    interior = bool(np.all(pi.kappa() > h))
    deterministic = pi.is_deterministic()
    if not interior and not deterministic:
        raise ConfigError(BOUNDARY_POLICY,
                          "jacobian needs an interior policy or a deterministic profile")
    J = np.empty((V, V))
    base = policy_gradient(game, pi).v if deterministic and not interior else None
    for i, s, off, a_count in flatten_blocks(game.shape):
        for a in range(a_count):
            c = off + a
            if interior:
                up = policy_gradient(game, _perturbed(pi, i, s, a, +h)).v
                dn = policy_gradient(game, _perturbed(pi, i, s, a, -h)).v
                J[:, c] = (up - dn) / (2.0 * h)
            else:
                if pi.rows[i][s, a] > 0.5:      # coordinate at 1: step back
                    dn = policy_gradient(game, _perturbed(pi, i, s, a, -h)).v
                    J[:, c] = (base - dn) / h
                else:                           # coordinate at 0: step forward
                    up = policy_gradient(game, _perturbed(pi, i, s, a, +h)).v
                    J[:, c] = (up - base) / h
    return J


# ---------------------------------------------------------------------------
# Mismatch coefficient bounds.

ENUM_PAIR_CAP = 10_000


def mismatch_coefficient(game, method="closed_form", pair_cap=ENUM_PAIR_CAP, seed=0):
    """Bounds on the worst-case visitation ratio max_{pi, pi'} ||nu^pi / nu^pi'||_inf.

    closed_form: C_upper = 1 / (zeta * min_s rho(s)); valid because every
    nu^pi(s) <= Z <= 1/zeta while nu^{pi'}(s) >= rho(s).
    enumerate: C_lower = max ratio over (capped) pairs of deterministic
    profiles -- a reported lower bound, exact on single-state games where
    the measure does not depend on the policy.
    """
    c_upper = 1.0 / (game.zeta_min * float(game.initial_dist.min()))
    if method == "closed_form":
        return MismatchBound(c_lower=1.0, c_upper=c_upper, method=method)
    if method != "enumerate":
        raise ConfigError(BAD_PARAMS, f"unknown mismatch method '{method}'")

    n_profiles = count_deterministic_profiles(game)
    c_lower = 1.0
    if n_profiles * n_profiles <= pair_cap:
        nus = [visitation(game, p).nu for p in deterministic_profiles(game)]
        for nu1 in nus:
            for nu2 in nus:
                c_lower = max(c_lower, float(np.max(nu1 / nu2)))
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 0x415))))
        cache = {}

        def nu_of(key):
            if key not in cache:
                choices = _profile_from_key(game, key)
                cache[key] = visitation(game, choices).nu
            return cache[key]

        for _ in range(pair_cap):
            k1 = _random_profile_key(game, rng)
            k2 = _random_profile_key(game, rng)
            c_lower = max(c_lower, float(np.max(nu_of(k1) / nu_of(k2))))
    c_lower = min(c_lower, c_upper)
    return MismatchBound(c_lower=c_lower, c_upper=c_upper, method=method)


def _random_profile_key(game, rng):
    return tuple(tuple(int(rng.integers(a)) for _ in range(game.n_states))
                 for a in game.action_counts)


def _profile_from_key(game, key):
    from .games import deterministic_policy
    return deterministic_policy(game, [list(c) for c in key])


# ---------------------------------------------------------------------------
# Paper-rate constants reused by tests and by the learner's diagnostics.

def gradient_norm_bound(game, player):
    """sqrt(A_i) / zeta^2."""
    return np.sqrt(game.action_counts[player]) / game.zeta_min ** 2


def lipschitz_bound(game):
    """3 * (sum_i A_i) / zeta^3 for the ensemble gradient field."""
    return 3.0 * sum(game.action_counts) / game.zeta_min ** 3
