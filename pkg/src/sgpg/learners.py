"""Projected and lazy policy-gradient loops with step/exploration schedules.

Updates (flat score space, blockwise simplex projection):

    pg:   pi_{n+1} = proj(pi_n + gamma_n vhat_n)
    lpg:  y_{n+1}  = y_n + gamma_n vhat_n;   pi_{n+1} = proj(y_{n+1})

Iterations are 1-indexed so that gamma_n = gamma / (n + m)^p reads off the
schedule directly.  A run is strictly sequential; the multi-seed harness
parallelizes across runs, each with its own counter-based stream.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (
    BAD_PARAMS,
    INADMISSIBLE_SCHEDULE,
    NON_FINITE_SIGNAL,
    ConfigError,
    RuntimeBreach,
)
from .estimators import NoiseConfig, make_signal
from .games import PolicyProfile, flatten_blocks, policies_equal, uniform_policy
from .geometry import fos_residual, lazy_basin_scores, project_policy
from .simulate import RngState, run_stream

CERT_CHECK_TOL = 1e-10


@dataclass
class Schedule:
    """gamma_n = gamma/(n+m)^p and, for value-based runs, eps_n = eps0/(n+m)^r_exp.

    Admissibility is checked at construction.  Step sums must diverge, which
    caps p at 1; the error-decay exponents implied by the model (ell_b for
    the bias, ell_sigma for the noise growth) must satisfy p + ell_b > 1 and
    p - ell_sigma > 1/2, and the value-based model additionally forces
    p > 2/3.  A constant step (p = 0) is allowed only in the dedicated
    geometric mode, which requires exact gradients.
    """

    gamma: float
    m: float = 0.0
    p: float = 1.0
    eps0: float = 0.0
    r_exp: float = 0.0
    model: str = "full"
    mode: str = "standard"     # "standard" | "geometric"

    def __post_init__(self):
        problems = []
        if not (self.gamma > 0):
            problems.append(f"gamma must be positive (got {self.gamma})")
        if self.m < 0:
            problems.append(f"m must be nonnegative (got {self.m})")
        if self.mode == "geometric":
            if self.p != 0:
                problems.append(f"geometric mode uses a constant step: p must be 0 (got {self.p})")
            if self.model != "full":
                problems.append("geometric mode requires exact gradients (model 'full')")
        elif self.mode == "standard":
            if not (0.5 < self.p <= 1.0):
                problems.append(f"need 1/2 < p <= 1 (got {self.p})")
            if self.model == "value_based":
                if not (0.0 < self.eps0 <= 1.0):
                    problems.append(f"need eps0 in (0, 1] (got {self.eps0})")
                if not (self.r_exp > 0):
                    problems.append(f"need r_exp > 0 (got {self.r_exp})")
                if not (self.p > 2.0 / 3.0):
                    problems.append(f"value_based model needs p > 2/3 (got {self.p})")
                if not (self.p + self.ell_b > 1.0):
                    problems.append(
                        f"need p + ell_b > 1 (got {self.p} + {self.ell_b})")
                if not (self.p - self.ell_sigma > 0.5):
                    problems.append(
                        f"need p - ell_sigma > 1/2 (got {self.p} - {self.ell_sigma})")
        else:
            problems.append(f"unknown mode '{self.mode}'")
        if problems:
            raise ConfigError(INADMISSIBLE_SCHEDULE, "; ".join(problems))

    @property
    def ell_b(self):
        """Bias decay exponent declared by the model."""
        return self.r_exp if self.model == "value_based" else math.inf

    @property
    def ell_sigma(self):
        """Noise growth exponent declared by the model."""
        return self.r_exp / 2.0 if self.model == "value_based" else 0.0


def schedule_at(sched, n):
    """(gamma_n, eps_n) for 1-indexed iteration n."""
    if n < 1:
        raise ConfigError(BAD_PARAMS, f"iterations are 1-indexed, got n = {n}")
    if sched.mode == "geometric":
        return sched.gamma, 0.0
    gamma_n = sched.gamma / (n + sched.m) ** sched.p
    eps_n = sched.eps0 / (n + sched.m) ** sched.r_exp if sched.model == "value_based" else 0.0
    return gamma_n, eps_n


@dataclass
class LearnerState:
    n: int
    pi: PolicyProfile
    y: np.ndarray | None = None     # lazy scores, present for lpg only
    rng: RngState | None = None


def _check_signal(vhat):
    if not np.all(np.isfinite(vhat)):
        raise RuntimeBreach(NON_FINITE_SIGNAL, "gradient signal contains non-finite entries")


def pg_step(state, signal, gamma_n, shape=None, check_certs=False):
    _check_signal(signal.vhat)
    shape = shape or (state.pi.n_states, state.pi.action_counts)
    y = state.pi.flatten() + gamma_n * signal.vhat
    pi_next = _project_checked(y, shape, check_certs)
    return LearnerState(n=state.n + 1, pi=pi_next, y=None, rng=state.rng)


def lpg_step(state, signal, gamma_n, shape=None, check_certs=False):
    if state.y is None:
        raise ConfigError(BAD_PARAMS, "lpg_step needs lazy scores in the learner state")
    _check_signal(signal.vhat)
    shape = shape or (state.pi.n_states, state.pi.action_counts)
    y = state.y + gamma_n * signal.vhat
    pi_next = _project_checked(y, shape, check_certs)
    return LearnerState(n=state.n + 1, pi=pi_next, y=y, rng=state.rng)


def _project_checked(y, shape, check_certs):
    if not check_certs:
        return project_policy(y, shape)
    pi, certs = project_policy(y, shape, with_certificates=True)
    for (i, s), cert in certs:
        off = _block_offset(shape, i, s)
        viol = cert.max_violation(y[off:off + shape[1][i]])
        if viol > CERT_CHECK_TOL:
            raise RuntimeBreach(
                "PROJECTION_CERTIFICATE",
                f"projection certificate violated by {viol!r} at block ({i}, {s})")
    return pi


def _block_offset(shape, player, state):
    n_states, counts = shape
    off = sum(n_states * a for a in counts[:player])
    return off + state * counts[player]


def near_init(pi_star, radius):
    """Feasible start at the requested distance from pi_star.

    Moves along the segment toward the uniform profile, which stays in the
    polytope; deterministic and reproducible.
    """
    uni = PolicyProfile(tuple(np.full_like(r, 1.0 / r.shape[1]) for r in pi_star.rows))
    direction = uni.flatten() - pi_star.flatten()
    norm = float(np.linalg.norm(direction))
    if radius > norm:
        raise ConfigError(BAD_PARAMS,
                          f"near-init radius {radius} exceeds distance to uniform {norm!r}")
    flat = pi_star.flatten() + (radius / norm) * direction
    shape = (pi_star.n_states, pi_star.action_counts)
    from .games import policy_from_flat
    return policy_from_flat(flat, shape)


@dataclass
class RunLog:
    """Columnar per-iteration record of one run plus end-of-run metadata."""

    config: dict
    seed: int
    n: np.ndarray
    gamma: np.ndarray
    eps: np.ndarray
    dist_sq: np.ndarray
    energy: np.ndarray
    fos: np.ndarray
    exact_hit: np.ndarray       # 1/0; -1 when no target was supplied
    min_gap: np.ndarray | None  # lpg with target: max over blocks of (y_a - y_{a*})
    n0: int | None
    wall_time: float
    final_pi: PolicyProfile

    CSV_HEADER = "n,gamma_n,eps_n,dist_sq,energy,fos_residual,exact_hit\n"

    def to_csv(self, path):
        def cell(x):
            return "" if (isinstance(x, float) and math.isnan(x)) else repr(x)

        with open(path, "w") as fh:
            fh.write(self.CSV_HEADER)
            for k in range(len(self.n)):
                hit = "" if self.exact_hit[k] < 0 else str(int(self.exact_hit[k]))
                fh.write(",".join([
                    str(int(self.n[k])),
                    repr(float(self.gamma[k])),
                    repr(float(self.eps[k])),
                    cell(float(self.dist_sq[k])),
                    cell(float(self.energy[k])),
                    cell(float(self.fos[k])),
                    hit,
                ]) + "\n")

    def sidecar(self):
        side = {
            "config": self.config,
            "seed": self.seed,
            "n0": self.n0,
            "wall_time_s": self.wall_time,
            "horizon": int(self.n[-1]) if len(self.n) else 0,
        }
        if len(self.n) and not math.isnan(float(self.dist_sq[-1])):
            side["final_dist_sq"] = float(self.dist_sq[-1])
        return side

    def write_sidecar(self, path):
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def max_dist(self):
        vals = self.dist_sq[~np.isnan(self.dist_sq)]
        return float(np.sqrt(vals.max())) if vals.size else math.nan


def run_experiment(game, model, algo, sched, init, horizon, pi_star=None,
                   master_seed=0, run_index=0, noise_cfg=None, log_every=1,
                   fos_every=0, cert_every=100, batch=1, config_echo=None):
    """Run one seed for `horizon` iterations and return its RunLog.

    Logs policy pi_n for n = 1..horizon (updates happen between logged
    iterations, so exactly horizon - 1 update steps are taken).  Exact-hit
    tracking runs at every iteration even when row logging is thinned, so
    the reported n0 is exact.
    """
    if horizon < 1:
        raise ConfigError(BAD_PARAMS, f"horizon must be >= 1, got {horizon}")
    if algo not in ("pg", "lpg"):
        raise ConfigError(BAD_PARAMS, f"unknown algorithm '{algo}'")
    shape = game.shape
    if algo == "pg":
        if not isinstance(init, PolicyProfile):
            raise ConfigError(BAD_PARAMS, "pg needs a feasible policy profile as init")
        pi = init
        y = None
    else:
        if isinstance(init, PolicyProfile):
            y = init.flatten()
        else:
            y = np.asarray(init, dtype=float).copy()
            if not np.all(np.isfinite(y)):
                raise ConfigError(BAD_PARAMS, "lpg init scores must be finite")
        pi = project_policy(y, shape)

    rng = run_stream(master_seed, run_index)
    target_flat = pi_star.flatten() if pi_star is not None else None
    star_mask = (target_flat > 0.5) if target_flat is not None else None

    n_rows = (horizon + log_every - 1) // log_every
    col_n = np.empty(n_rows, dtype=np.int64)
    col_gamma = np.empty(n_rows)
    col_eps = np.empty(n_rows)
    col_dist = np.full(n_rows, np.nan)
    col_energy = np.full(n_rows, np.nan)
    col_fos = np.full(n_rows, np.nan)
    col_hit = np.full(n_rows, -1, dtype=np.int8)
    col_gap = np.full(n_rows, np.nan) if (algo == "lpg" and pi_star is not None) else None

    nonstar_idx = star_of = None
    if star_mask is not None:
        nonstar_idx = np.nonzero(~star_mask)[0]
        star_of = np.empty(len(target_flat), dtype=np.int64)
        for i, s, off, a in flatten_blocks(shape):
            block_star = off + int(np.argmax(star_mask[off:off + a]))
            star_of[off:off + a] = block_star
        star_of = star_of[nonstar_idx]

    streak_start = None
    row = 0
    t0 = time.perf_counter()
    state = LearnerState(n=1, pi=pi, y=y, rng=rng)
    for n in range(1, horizon + 1):
        gamma_n, eps_n = schedule_at(sched, n)
        hit = False
        if pi_star is not None:
            hit = policies_equal(state.pi, pi_star)
            if hit and streak_start is None:
                streak_start = n
            elif not hit:
                streak_start = None
        if (n - 1) % log_every == 0:
            col_n[row] = n
            col_gamma[row] = gamma_n
            col_eps[row] = eps_n
            if pi_star is not None:
                diff = state.pi.flatten() - target_flat
                d2 = float(diff @ diff)
                col_dist[row] = d2
                col_energy[row] = 0.5 * d2
                col_hit[row] = 1 if hit else 0
                if col_gap is not None and nonstar_idx.size:
                    col_gap[row] = float(np.max(state.y[nonstar_idx] - state.y[star_of]))
            if fos_every and n % fos_every == 0:
                col_fos[row] = fos_residual(game, state.pi)
            row += 1
        if n == horizon:
            break
        signal = make_signal(model, game, state.pi, eps_n=eps_n,
                             noise_cfg=noise_cfg, rng=rng, batch=batch)
        check = bool(cert_every) and (n % cert_every == 0)
        if algo == "pg":
            state = pg_step(state, signal, gamma_n, shape, check_certs=check)
        else:
            state = lpg_step(state, signal, gamma_n, shape, check_certs=check)
    wall = time.perf_counter() - t0

    n0 = streak_start if (pi_star is not None and streak_start is not None) else None
    config = dict(config_echo or {})
    config.setdefault("model", model)
    config.setdefault("algo", algo)
    config.setdefault("schedule", {k: v for k, v in asdict(sched).items()})
    config.setdefault("horizon", horizon)
    config.setdefault("log_every", log_every)
    config.setdefault("master_seed", master_seed)
    config.setdefault("run_index", run_index)
    return RunLog(config=config, seed=run_index, n=col_n[:row], gamma=col_gamma[:row],
                  eps=col_eps[:row], dist_sq=col_dist[:row], energy=col_energy[:row],
                  fos=col_fos[:row], exact_hit=col_hit[:row],
                  min_gap=col_gap[:row] if col_gap is not None else None,
                  n0=n0, wall_time=wall, final_pi=state.pi)


def _run_one(args):
    kwargs, run_index = args
    return run_experiment(run_index=run_index, **kwargs)


def run_many(game, model, algo, sched, init, horizon, seeds, master_seed,
             pi_star=None, noise_cfg=None, log_every=1, fos_every=0,
             cert_every=100, batch=1, workers=None, config_echo=None):
    """Run `seeds` independent runs; results ordered by run index.

    Parallelism comes from a process pool capped by `workers` or the
    SGPG_THREADS environment variable; results are merged in seed order, so
    output is identical no matter how the pool schedules the work.
    """
    kwargs = dict(game=game, model=model, algo=algo, sched=sched, init=init,
                  horizon=horizon, pi_star=pi_star, master_seed=master_seed,
                  noise_cfg=noise_cfg, log_every=log_every, fos_every=fos_every,
                  cert_every=cert_every, batch=batch, config_echo=config_echo)
    if workers is None:
        workers = int(os.environ.get("SGPG_THREADS", "0")) or (os.cpu_count() or 1)
    workers = max(1, min(workers, seeds))
    if workers == 1:
        return [run_experiment(run_index=k, **kwargs) for k in range(seeds)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        logs = list(pool.map(_run_one, [(kwargs, k) for k in range(seeds)]))
    return logs
