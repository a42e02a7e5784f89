"""Episode sampling with random stopping, plus Monte-Carlo oracles.

The stopping draw is an explicit Bernoulli(zeta_{s,a}) after every step,
mirroring the episodic protocol directly; the hard length cap of
ceil(200 / zeta) is a tripwire for broken invariants (its probability is
below e^{-200} for a valid game), never a truncation.

Randomness is counter-based: a stream is the pair (seed, stream) fed
through Philox, so any episode or batch can be replayed independently of
execution order.  ``sample_episode`` consumes the stream it is handed and
advances the counter; batch helpers consume one stream per batch.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MAX_LENGTH_EXCEEDED, RuntimeBreach


@dataclass
class RngState:
    """Counter-based RNG handle: same (seed, stream) => same draws."""

    seed: int
    stream: int = 0

    def generator(self):
        return np.random.Generator(
            np.random.Philox(np.random.SeedSequence((int(self.seed), int(self.stream)))))

    def advance(self):
        self.stream += 1

    def spawn(self, offset):
        """Independent handle at a fixed offset; does not advance self."""
        return RngState(self.seed, self.stream + int(offset))


def run_stream(master_seed, run_index, episodes_per_run=1 << 40):
    """Stream handle for one run of a multi-run experiment.

    Runs are spaced ``episodes_per_run`` apart so that episode substreams
    never collide across runs, making sweeps reproducible regardless of
    execution order.
    """
    return RngState(master_seed, int(run_index) * int(episodes_per_run))


@dataclass
class Trajectory:
    states: np.ndarray    # (T,) int
    actions: np.ndarray   # (T, n_players) int
    rewards: np.ndarray   # (T, n_players) float

    @property
    def T(self):
        return len(self.states)

    def total_rewards(self):
        return self.rewards.sum(axis=0)


class _SamplerTables:
    """Cumulative tables reused across many episodes of one game.

    Plain-list copies back the scalar episode loop: for desk-scale games,
    Python floats beat numpy scalar indexing by an order of magnitude.
    """

    def __init__(self, game):
        self.game = game
        self.cum_rho = np.cumsum(game.initial_dist)
        self.zeta = game.stop_probs
        cont = 1.0 - game.stop_probs
        safe = np.where(cont > 0.0, cont, 1.0)
        self.cum_next = np.cumsum(game.transitions / safe[:, :, None], axis=2)
        self.strides = np.ones(game.n_players, dtype=int)
        counts = game.action_counts
        for i in range(game.n_players - 2, -1, -1):
            self.strides[i] = self.strides[i + 1] * counts[i + 1]
        self.max_len = math.ceil(200.0 / game.zeta_min)
        self.cum_rho_l = self.cum_rho.tolist()
        self.zeta_l = self.zeta.tolist()
        self.cum_next_l = self.cum_next.tolist()
        self.rewards_l = np.moveaxis(game.rewards, 0, 2).tolist()   # [s][j] -> per-player
        self.strides_l = self.strides.tolist()


_TABLES = {}


def _tables(game):
    key = id(game)
    hit = _TABLES.get(key)
    if hit is None or hit.game is not game:
        hit = _SamplerTables(game)
        _TABLES[key] = hit
    return hit


def _episode_lists(game, cum_rows, gen):
    """Core episodic protocol on Python scalars.

    `cum_rows[i][s]` are per-player cumulative action probabilities.
    Returns (states, actions, joints) as plain lists; one step consumes the
    player draws, the stopping draw, and (on continuation) the next-state
    draw, in that order.
    """
    tab = _tables(game)
    n = game.n_players
    states, actions, joints = [], [], []
    chunk = 16 * (n + 2)
    buf = gen.random(chunk).tolist()
    pos = 0
    S1 = game.n_states - 1
    counts1 = [a - 1 for a in game.action_counts]
    strides = tab.strides_l
    s = min(bisect.bisect_left(tab.cum_rho_l, buf[pos]), S1)
    pos += 1
    while True:
        if pos + n + 1 >= chunk:
            buf = gen.random(chunk).tolist()
            pos = 0
        j = 0
        a = []
        for i in range(n):
            ai = bisect.bisect_left(cum_rows[i][s], buf[pos + i])
            if ai > counts1[i]:
                ai = counts1[i]
            a.append(ai)
            j += ai * strides[i]
        pos += n
        states.append(s)
        actions.append(a)
        joints.append(j)
        if buf[pos] < tab.zeta_l[s][j]:
            break
        pos += 1
        s = min(bisect.bisect_left(tab.cum_next_l[s][j], buf[pos]), S1)
        pos += 1
        if len(states) >= tab.max_len:
            raise RuntimeBreach(
                MAX_LENGTH_EXCEEDED,
                f"episode exceeded {tab.max_len} steps; stopping invariant is broken")
    return states, actions, joints


def sample_episode(game, pi, rng, _gen=None):
    """Draw one trajectory under `pi` and advance `rng` to the next stream."""
    tab = _tables(game)
    gen = _gen if _gen is not None else rng.generator()
    if _gen is None:
        rng.advance()
    cum_rows = [np.cumsum(r, axis=1).tolist() for r in pi.rows]
    states, actions, joints = _episode_lists(game, cum_rows, gen)
    rewards = [tab.rewards_l[s][j] for s, j in zip(states, joints)]
    return Trajectory(states=np.array(states, dtype=np.int64),
                      actions=np.array(actions, dtype=np.int64),
                      rewards=np.array(rewards))


@dataclass
class BatchSteps:
    """All steps of a batch of episodes, flattened in step-major order."""

    n_episodes: int
    ep: np.ndarray        # (K,) episode index of each step
    s: np.ndarray         # (K,) state
    j: np.ndarray         # (K,) flat joint action
    a: np.ndarray         # (K, n_players) per-player actions
    lengths: np.ndarray   # (n_episodes,)

    def episode_rewards(self, game):
        """(n_episodes, n_players) total rewards."""
        out = np.zeros((self.n_episodes, game.n_players))
        per_step = game.rewards[:, self.s, self.j].T     # (K, n_players)
        np.add.at(out, self.ep, per_step)
        return out

    def functional_sums(self, f):
        """(n_episodes,) per-episode sums of f(s_t, a_t)."""
        f = np.asarray(f, dtype=float)
        out = np.zeros(self.n_episodes)
        np.add.at(out, self.ep, f[self.s, self.j])
        return out

    def occupancy(self, n_states):
        """(n_states,) average per-episode visit counts."""
        out = np.zeros(n_states)
        np.add.at(out, self.s, 1.0)
        return out / self.n_episodes


def sample_batch(game, pi, n_episodes, rng):
    """Sample `n_episodes` episodes in lockstep; consumes one stream."""
    tab = _tables(game)
    gen = rng.generator()
    rng.advance()
    cum_rows = [np.cumsum(r, axis=1) for r in pi.rows]
    n = game.n_players

    s = np.minimum(np.searchsorted(tab.cum_rho, gen.random(n_episodes)),
                   game.n_states - 1).astype(np.int64)
    alive = np.arange(n_episodes)
    ep_chunks, s_chunks, j_chunks, a_chunks = [], [], [], []
    lengths = np.zeros(n_episodes, dtype=np.int64)
    steps = 0
    while alive.size:
        steps += 1
        if steps > tab.max_len:
            raise RuntimeBreach(
                MAX_LENGTH_EXCEEDED,
                f"batch exceeded {tab.max_len} steps; stopping invariant is broken")
        u = gen.random((alive.size, n))
        acts = np.empty((alive.size, n), dtype=np.int64)
        for i in range(n):
            cum = cum_rows[i][s]                     # (m, A_i)
            acts[:, i] = np.minimum((u[:, i:i + 1] > cum).sum(axis=1), cum.shape[1] - 1)
        j = acts @ tab.strides
        ep_chunks.append(alive.copy())
        s_chunks.append(s.copy())
        j_chunks.append(j)
        a_chunks.append(acts)
        lengths[alive] += 1
        stop = gen.random(alive.size) < tab.zeta[s, j]
        cont = ~stop
        if not np.any(cont):
            break
        nxt_cum = tab.cum_next[s[cont], j[cont]]     # (m', S)
        u2 = gen.random(cont.sum())
        s = np.minimum((u2[:, None] > nxt_cum).sum(axis=1), game.n_states - 1)
        alive = alive[cont]
    return BatchSteps(
        n_episodes=n_episodes,
        ep=np.concatenate(ep_chunks),
        s=np.concatenate(s_chunks),
        j=np.concatenate(j_chunks),
        a=np.vstack(a_chunks),
        lengths=lengths)


def mc_functional(game, pi, f, n_episodes, rng):
    """Monte-Carlo mean and standard error of sum_{t<=T} f(s_t, a_t)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    batch = sample_batch(game, pi, n_episodes, rng)
    sums = batch.functional_sums(np.asarray(f, dtype=float).reshape(game.n_states, game.n_joint))
    mean = float(sums.mean())
    if n_episodes == 1:
        return mean, 0.0
    return mean, float(sums.std(ddof=1) / math.sqrt(n_episodes))
