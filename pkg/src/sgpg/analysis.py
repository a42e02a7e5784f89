"""Equilibrium classification and run-log analysis.

The brute-force oracle is deliberately independent of the gradient
machinery: a profile is certified by comparing values across unilateral
deterministic deviations only.  That check is sufficient because, with the
opponents frozen, a player faces a single-agent decision process with
random stopping, and such a process always admits an optimal *deterministic*
stationary policy; hence if no deterministic deviation improves a player's
value, no (possibly randomized) policy does either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    INSUFFICIENT_DATA,
    NOT_DETERMINISTIC_TARGET,
    TOO_LARGE,
    ConfigError,
)
from .exact import jacobian, policy_gradient, values_rho
from .games import (
    count_deterministic_profiles,
    deterministic_policy,
    deterministic_profiles,
    flatten_blocks,
    policies_equal,
)
from .geometry import SosCertificate, fos_residual, sos_certificate, vertex_drift_margin

BRUTE_FORCE_LIMIT = 10 ** 6
SOS_NOISE_FLOOR = 1e-9

CLASSIFICATIONS = ("not_nash", "nash", "sos_nash", "strict_nash")


@dataclass
class EquilibriumReport:
    is_nash: bool
    residual: float
    is_deterministic: bool
    strict_gaps: np.ndarray | None   # (n_players, n_states) payoff-field gaps
    sos: SosCertificate
    vertex_margin: float
    classification: str


def classify_equilibrium(game, pi_star, tol=1e-8, n_dirs=512, h=1e-5):
    """Classify a candidate along the chain not_nash / nash / sos_nash / strict_nash.

    strict_nash needs a deterministic profile with strictly positive
    gradient gaps at every (player, state); sos_nash needs the sampled
    quadratic form to be negative.  Stability as such is not separately
    certified (a neighborhood quantifier is not finitely checkable); the
    second-order certificate is the closest verifiable surrogate.
    """
    grad = policy_gradient(game, pi_star)
    residual = fos_residual(game, pi_star, grad=grad.v)
    is_nash = residual <= tol
    deterministic = pi_star.is_deterministic()

    gaps = None
    if deterministic:
        gaps = np.zeros((game.n_players, game.n_states))
        tops = pi_star.argmax_actions()
        for i in range(game.n_players):
            block = grad.per_player[i]
            for s in range(game.n_states):
                a_star = tops[i][s]
                others = np.delete(block[s], a_star)
                gaps[i, s] = float(block[s, a_star] - others.max()) if others.size else math.inf

    J = jacobian(game, pi_star, h=h)
    sos = sos_certificate(J, pi_star, n_dirs=n_dirs)
    margin = vertex_drift_margin(game, pi_star, grad=grad.v)

    if not is_nash:
        classification = "not_nash"
    elif deterministic and gaps is not None and np.all(gaps > 0):
        classification = "strict_nash"
    elif sos.max_quad < -SOS_NOISE_FLOOR:
        classification = "sos_nash"
    else:
        # a certificate within finite-difference noise of zero is
        # inconclusive, not support
        classification = "nash"
    return EquilibriumReport(is_nash=is_nash, residual=residual,
                             is_deterministic=deterministic, strict_gaps=gaps,
                             sos=sos, vertex_margin=margin,
                             classification=classification)


def brute_force_deterministic_nash(game, tol=1e-10):
    """All deterministic profiles stable against deterministic unilateral
    deviations (sufficient for full Nash; see module docstring)."""
    n_profiles = count_deterministic_profiles(game)
    if n_profiles > BRUTE_FORCE_LIMIT:
        raise ConfigError(TOO_LARGE,
                          f"{n_profiles} deterministic profiles exceed the "
                          f"enumeration limit {BRUTE_FORCE_LIMIT}")
    out = []
    import itertools
    per_player = [list(itertools.product(range(a), repeat=game.n_states))
                  for a in game.action_counts]
    for combo in itertools.product(*per_player):
        profile = deterministic_policy(game, combo)
        base = values_rho(game, profile)
        best = True
        for i in range(game.n_players):
            for dev in per_player[i]:
                if dev == combo[i]:
                    continue
                trial = list(combo)
                trial[i] = dev
                if values_rho(game, deterministic_policy(game, trial))[i] > base[i] + tol:
                    best = False
                    break
            if not best:
                break
        if best:
            out.append(profile)
    return out


@dataclass
class RateFit:
    slope: float
    stderr: float
    intercept: float
    n_points: int
    n_runs_used: int
    n_runs_excluded: int

    @property
    def exclusion_fraction(self):
        total = self.n_runs_used + self.n_runs_excluded
        return self.n_runs_excluded / total if total else 0.0


def fit_rate(logs, window, basin_radius=None):
    """Least-squares slope of log(mean dist^2) against log n over a window.

    `logs` is one RunLog or a list; multi-seed input is averaged pointwise
    on the common iteration grid before fitting.  When `basin_radius` is
    given, runs whose distance ever exceeded it are excluded from the mean
    (they left the basin the rate statement conditions on) and counted.
    """
    if not isinstance(logs, (list, tuple)):
        logs = [logs]
    used, excluded = [], 0
    for log in logs:
        if log.dist_sq.size == 0 or np.all(np.isnan(log.dist_sq)):
            raise ConfigError(INSUFFICIENT_DATA, "log has no dist_sq column")
        if basin_radius is not None and log.max_dist() > basin_radius:
            excluded += 1
            continue
        used.append(log)
    if not used:
        raise ConfigError(INSUFFICIENT_DATA, "every run was excluded by the basin filter")
    grid = used[0].n
    for log in used[1:]:
        if not np.array_equal(log.n, grid):
            raise ConfigError(INSUFFICIENT_DATA, "runs have different logging grids")
    mean_curve = np.mean([log.dist_sq for log in used], axis=0)

    n_lo, n_hi = window
    mask = (grid >= n_lo) & (grid <= n_hi) & (mean_curve > 0) & ~np.isnan(mean_curve)
    if mask.sum() < 3:
        raise ConfigError(INSUFFICIENT_DATA,
                          f"only {int(mask.sum())} usable points in window {window}")
    x = np.log(grid[mask].astype(float))
    y = np.log(mean_curve[mask])
    (slope, intercept), cov = np.polyfit(x, y, 1, cov=True)
    return RateFit(slope=float(slope), stderr=float(np.sqrt(cov[0, 0])),
                   intercept=float(intercept), n_points=int(mask.sum()),
                   n_runs_used=len(used), n_runs_excluded=excluded)


def detect_finite_convergence(log, pi_star):
    """Smallest logged n0 with pi_n = pi* exactly for every logged n >= n0.

    Uses the exact-hit markers recorded during the run; the run itself
    checks every iteration, so with unthinned logging this is exact.
    """
    if not pi_star.is_deterministic():
        raise ConfigError(NOT_DETERMINISTIC_TARGET,
                          "finite convergence is defined for deterministic targets")
    hits = log.exact_hit
    if hits.size == 0 or np.any(hits < 0):
        raise ConfigError(INSUFFICIENT_DATA, "log has no exact-hit markers")
    if hits[-1] != 1:
        return None
    misses = np.nonzero(hits == 0)[0]
    first = 0 if misses.size == 0 else misses[-1] + 1
    return int(log.n[first])
