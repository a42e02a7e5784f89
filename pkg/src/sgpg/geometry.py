"""Euclidean geometry of the policy polytope: simplex projection with KKT
certificates, first-order stationarity residuals, and quadratic-form
certificates on tangent directions.

The polytope factors into one simplex per (player, state) block and the
blocks are orthogonal, so the product projection is the blockwise one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DIMENSION_MISMATCH,
    NON_FINITE_INPUT,
    NOT_DETERMINISTIC_TARGET,
    ConfigError,
)
from .games import PolicyProfile, flatten_blocks, policy_from_flat

CERT_TOL = 1e-10


@dataclass
class ProjectionCertificate:
    """Witness that x projects y: y_a = x_a + mu - nu_a, nu >= 0, x.nu = 0."""

    x: np.ndarray
    mu: float
    nu: np.ndarray

    def max_violation(self, y):
        recon = np.max(np.abs(np.asarray(y) - (self.x + self.mu - self.nu)))
        comp = np.max(np.abs(self.x * self.nu))
        neg = max(0.0, float(-self.nu.min()))
        return max(float(recon), float(comp), neg)


@dataclass
class SosCertificate:
    """One-sided second-order certificate at a candidate equilibrium.

    max_quad is the maximum of z^T J z over the tested tangent directions:
    a positive value refutes the negative-definiteness condition, a negative
    value supports it (mu_hat = -max_quad is then the drift estimate).
    """

    max_quad: float
    mu_hat: float | None
    n_directions: int


def project_simplex(y):
    """Euclidean projection of y onto the probability simplex.

    Sort-and-threshold, O(k log k).  Returns (x, certificate); the KKT
    certificate makes the implementation choice checkable after the fact.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ConfigError(DIMENSION_MISMATCH, "expected a non-empty 1-d vector")
    if not np.all(np.isfinite(y)):
        raise ConfigError(NON_FINITE_INPUT, "cannot project non-finite input")
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, y.size + 1)
    rho = int(np.nonzero(u > css / ks)[0][-1])
    tau = css[rho] / (rho + 1.0)
    x = np.maximum(y - tau, 0.0)
    nu = np.where(x > 0.0, 0.0, tau - y)
    return x, ProjectionCertificate(x=x, mu=float(tau), nu=nu)


def _project_block_list(vals):
    """Sort-and-threshold on a Python list; identical arithmetic (and hence
    identical bits) to project_simplex, minus the certificate."""
    u = sorted(vals, reverse=True)
    run = 0.0
    tau = 0.0
    for k, uk in enumerate(u):
        run += uk
        css = run - 1.0
        if uk > css / (k + 1):
            tau = css / (k + 1)
    out = []
    for v in vals:
        w = v - tau
        out.append(w if w > 0.0 else 0.0)
    return out


def project_policy(y, shape, with_certificates=False):
    """Blockwise projection of a flat score vector onto the policy polytope."""
    y = np.asarray(y, dtype=float)
    n_states, counts = shape
    expected = n_states * sum(counts)
    if y.size != expected:
        raise ConfigError(DIMENSION_MISMATCH, f"score length {y.size}, expected {expected}")
    if not np.all(np.isfinite(y)):
        raise ConfigError(NON_FINITE_INPUT, "cannot project non-finite scores")
    if not with_certificates:
        vals = y.tolist()
        rows, off = [], 0
        for a in counts:
            block = [_project_block_list(vals[off + s * a:off + (s + 1) * a])
                     for s in range(n_states)]
            rows.append(np.array(block))
            off += n_states * a
        return PolicyProfile(tuple(rows))
    out = np.empty_like(y)
    certs = []
    for i, s, off, a in flatten_blocks(shape):
        x, cert = project_simplex(y[off:off + a])
        out[off:off + a] = x
        certs.append(((i, s), cert))
    return policy_from_flat(out, shape), certs


def fos_residual(game, pi, grad=None):
    """max_{pi' in Pi} <v(pi), pi' - pi>, computed blockwise in closed form.

    Zero exactly at Nash policies; an eps residual certifies an O(eps)
    approximate Nash.  Ties in the per-block max do not affect the value.
    """
    from .exact import policy_gradient
    v = grad if grad is not None else policy_gradient(game, pi).v
    total = 0.0
    flat_pi = pi.flatten()
    for i, s, off, a in flatten_blocks(game.shape):
        block = v[off:off + a]
        gain = float(block.max() - block @ flat_pi[off:off + a])
        total += max(gain, 0.0)
    return total


def player_linearized_gain(game, pi, player, grad=None):
    """max_{pi_i'} <v_i(pi), pi_i' - pi_i>: player `player`'s blocks only."""
    from .exact import policy_gradient
    v = grad if grad is not None else policy_gradient(game, pi).v
    total = 0.0
    flat_pi = pi.flatten()
    for i, s, off, a in flatten_blocks(game.shape):
        if i != player:
            continue
        block = v[off:off + a]
        total += max(float(block.max() - block @ flat_pi[off:off + a]), 0.0)
    return total


def _tangent_rays(pi_star, shape):
    """Generating rays of the tangent cone at pi_star, one set per block.

    At a vertex row the rays are e_a - e_{a*}; at a non-deterministic row
    both signs of every pairwise difference are feasible.
    """
    n_states, counts = shape
    dim = n_states * sum(counts)
    rays = []
    for i, s, off, a in flatten_blocks(shape):
        row = pi_star.rows[i][s]
        top = int(row.argmax())
        if abs(row[top] - 1.0) <= 1e-12:
            for b in range(a):
                if b == top:
                    continue
                z = np.zeros(dim)
                z[off + b] = 1.0
                z[off + top] = -1.0
                rays.append(z)
        else:
            for b in range(a):
                for c in range(b + 1, a):
                    z = np.zeros(dim)
                    z[off + b] = 1.0
                    z[off + c] = -1.0
                    rays.append(z)
                    rays.append(-z)
    return rays


def sos_certificate(J, pi_star, n_dirs=512, seed=0):
    """Probe z^T J z over tangent directions at pi_star.

    Directions: every normalized per-block vertex difference, plus `n_dirs`
    random nonnegative combinations of those rays (all valid tangent cone
    members).  This is a finite probe, not an exact cone maximization: a
    positive max_quad refutes the condition outright, a negative one
    supports it with margin |max_quad|.
    """
    J = np.asarray(J, dtype=float)
    shape = (pi_star.n_states, pi_star.action_counts)
    dim = pi_star.n_states * sum(pi_star.action_counts)
    if J.shape != (dim, dim):
        raise ConfigError(DIMENSION_MISMATCH, f"Jacobian shape {J.shape}, expected {(dim, dim)}")
    rays = _tangent_rays(pi_star, shape)
    dirs = [z / np.linalg.norm(z) for z in rays]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 0x505))))
    R = np.array(rays)
    for _ in range(n_dirs):
        coef = rng.random(len(rays))
        z = coef @ R
        nz = np.linalg.norm(z)
        if nz > 1e-12:
            dirs.append(z / nz)
    quads = [float(z @ J @ z) for z in dirs]
    max_quad = max(quads)
    mu_hat = -max_quad if max_quad < 0 else None
    return SosCertificate(max_quad=max_quad, mu_hat=mu_hat, n_directions=len(dirs))


def vertex_drift_margin(game, pi_star, grad=None):
    """min over polytope vertices pi != pi* of -<v(pi*), pi - pi*> / ||pi - pi*||.

    Positive exactly when the first-order condition holds strictly at every
    vertex; at a strict equilibrium this is the linear drift constant.
    """
    from .exact import policy_gradient
    from .games import deterministic_profiles, policies_equal
    v = grad if grad is not None else policy_gradient(game, pi_star).v
    base = pi_star.flatten()
    margin = np.inf
    for prof in deterministic_profiles(game):
        if policies_equal(prof, pi_star):
            continue
        diff = prof.flatten() - base
        margin = min(margin, float(-(v @ diff) / np.linalg.norm(diff)))
    return margin


def lazy_basin_scores(pi_star, margin=1.0):
    """Score vector with y = 0 at each pi*-action and -margin elsewhere.

    With margin >= 1 the projection of these scores is exactly pi*, and the
    scores sit `margin` deep inside the cone that projects onto the vertex.
    """
    if not pi_star.is_deterministic():
        raise ConfigError(NOT_DETERMINISTIC_TARGET,
                          "lazy basin initialization needs a deterministic target")
    shape = (pi_star.n_states, pi_star.action_counts)
    y = np.full(pi_star.n_states * sum(pi_star.action_counts), -float(margin))
    flat = pi_star.flatten()
    y[flat > 0.5] = 0.0
    return y
