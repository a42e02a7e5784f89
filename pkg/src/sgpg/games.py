"""Tabular stochastic games with per-(state, joint action) random stopping.

A game is the tuple (states, players, per-player rewards, substochastic
transition kernel, stopping probabilities, initial distribution).  Stopping
probabilities are never stored independently: for every (s, a) they are
derived as ``1 - sum_{s'} P(s' | s, a)`` so the identity holds exactly.

All arrays are float64 and are frozen (read-only) after validation, so a
validated ``GameSpec`` can be shared freely across threads.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BAD_PARAMS,
    EMPTY_SUPPORT_INITIAL_DIST,
    NEGATIVE_PROBABILITY,
    PARSE_ERROR,
    REWARD_OUT_OF_RANGE,
    ROW_SUM_MISMATCH,
    UNKNOWN_NAME,
    ZERO_STOP_PROBABILITY,
    ConfigError,
    GameValidationError,
)

# Row sums read from text files may be off by this much; they are cleaned up
# exactly on load.  Internally everything is held to the strict tolerance.
LOAD_TOL = 1e-9
STRICT_TOL = 1e-12

# A transitions row that overshoots probability mass 1 by <= LOAD_TOL is
# rescaled to leave this stopping floor, keeping zeta > 0 (see load_game).
STOP_FLOOR = 1e-9


@dataclass(frozen=True)
class PlayerSpec:
    name: str
    n_actions: int


@dataclass(frozen=True, eq=False)
class GameSpec:
    """A validated game. Construct via :func:`validate_game` or helpers."""

    states: tuple
    players: tuple
    rewards: np.ndarray        # (n_players, n_states, n_joint)
    transitions: np.ndarray    # (n_states, n_joint, n_states)
    stop_probs: np.ndarray     # (n_states, n_joint), derived
    zeta_min: float
    initial_dist: np.ndarray   # (n_states,)

    def __post_init__(self):
        counts = tuple(p.n_actions for p in self.players)
        object.__setattr__(self, "_counts", counts)
        object.__setattr__(self, "_n_joint", int(np.prod(counts)))
        object.__setattr__(self, "_flat_dim", len(self.states) * sum(counts))

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_players(self):
        return len(self.players)

    @property
    def action_counts(self):
        return self._counts

    @property
    def n_joint(self):
        return self._n_joint

    @property
    def shape(self):
        """(n_states, per-player action counts) - enough to index policies."""
        return (len(self.states), self._counts)

    @property
    def flat_dim(self):
        return self._flat_dim

    def joint_index(self, actions):
        """Flat joint-action index, row-major over players in order."""
        idx = 0
        for a, n in zip(actions, self.action_counts):
            idx = idx * n + a
        return idx

    def joint_tuples(self):
        return list(itertools.product(*[range(n) for n in self.action_counts]))


@dataclass(frozen=True, eq=False)
class PolicyProfile:
    """Per-player, per-state probability rows pi_i(. | s).

    ``rows[i]`` has shape (n_states, A_i).  The flat layout used everywhere
    (gradients, lazy scores, projections) is (player, state, action).
    """

    rows: tuple

    @property
    def n_players(self):
        return len(self.rows)

    @property
    def n_states(self):
        return self.rows[0].shape[0]

    @property
    def action_counts(self):
        return tuple(r.shape[1] for r in self.rows)

    def flatten(self):
        return np.concatenate([r.ravel() for r in self.rows])

    def kappa(self):
        """Per-player minimum action probability min_{s,a} pi_i(a|s)."""
        return np.array([r.min() for r in self.rows])

    def joint_table(self):
        """Joint action distribution per state, shape (n_states, n_joint)."""
        out = np.ones((self.n_states, 1))
        for r in self.rows:
            out = (out[:, :, None] * r[:, None, :]).reshape(self.n_states, -1)
        return out

    def is_deterministic(self, tol=STRICT_TOL):
        return all(np.all(np.abs(r.max(axis=1) - 1.0) <= tol) for r in self.rows)

    def argmax_actions(self):
        """Per player, per state index of the most likely action."""
        return [r.argmax(axis=1) for r in self.rows]


def shape_of(policy_or_game):
    if isinstance(policy_or_game, GameSpec):
        return policy_or_game.shape
    return (policy_or_game.n_states, policy_or_game.action_counts)


def flatten_blocks(shape):
    """Yield (player, state, offset, length) for the flat layout of `shape`."""
    n_states, counts = shape
    off = 0
    for i, a in enumerate(counts):
        for s in range(n_states):
            yield i, s, off, a
            off += a


def policy_from_flat(flat, shape):
    n_states, counts = shape
    flat = np.asarray(flat, dtype=float)
    rows, off = [], 0
    for a in counts:
        block = flat[off:off + n_states * a].reshape(n_states, a).copy()
        rows.append(block)
        off += n_states * a
    if off != flat.size:
        raise ConfigError(BAD_PARAMS, f"flat vector length {flat.size}, expected {off}")
    return PolicyProfile(tuple(rows))


def validate_policy(rows, tol=LOAD_TOL):
    """Check simplex rows, renormalize within `tol`, return a PolicyProfile."""
    errors = []
    fixed = []
    for i, r in enumerate(rows):
        r = np.array(r, dtype=float)
        if r.ndim != 2:
            errors.append((BAD_PARAMS, f"player {i}: policy rows must be 2-d"))
            continue
        if np.any(r < 0):
            errors.append((NEGATIVE_PROBABILITY, f"player {i}: negative action probability"))
        sums = r.sum(axis=1)
        bad = np.abs(sums - 1.0) > tol
        if np.any(bad):
            s = int(np.argmax(np.abs(sums - 1.0)))
            errors.append((ROW_SUM_MISMATCH,
                           f"player {i}, state {s}: row sums to {sums[s]!r}"))
        else:
            r = r / sums[:, None]
        fixed.append(r)
    if errors:
        raise GameValidationError(errors)
    for r in fixed:
        r.flags.writeable = False
    return PolicyProfile(tuple(fixed))


def uniform_policy(game):
    return PolicyProfile(tuple(
        np.full((game.n_states, a), 1.0 / a) for a in game.action_counts))


def deterministic_policy(game, choices):
    """`choices[i][s]` is player i's action in state s."""
    rows = []
    for i, a in enumerate(game.action_counts):
        r = np.zeros((game.n_states, a))
        for s in range(game.n_states):
            r[s, choices[i][s]] = 1.0
        rows.append(r)
    return PolicyProfile(tuple(rows))


def deterministic_profiles(game):
    """Iterate all deterministic policy profiles (vertices of the polytope).

    The count is prod_i A_i^{n_states}; callers cap it where needed.
    """
    per_player = [list(itertools.product(range(a), repeat=game.n_states))
                  for a in game.action_counts]
    for combo in itertools.product(*per_player):
        yield deterministic_policy(game, combo)


def count_deterministic_profiles(game):
    n = 1
    for a in game.action_counts:
        n *= a ** game.n_states
    return n


def policies_equal(p1, p2):
    return all(np.array_equal(a, b) for a, b in zip(p1.rows, p2.rows))


def specs_equal(g1, g2):
    return (g1.states == g2.states
            and g1.players == g2.players
            and np.array_equal(g1.rewards, g2.rewards)
            and np.array_equal(g1.transitions, g2.transitions)
            and np.array_equal(g1.stop_probs, g2.stop_probs)
            and g1.zeta_min == g2.zeta_min
            and np.array_equal(g1.initial_dist, g2.initial_dist))


def validate_game(states, players, rewards, transitions, initial_dist):
    """Validate raw arrays and assemble an immutable GameSpec.

    Collects *all* violations before raising, so a bad file reports every
    problem at once.  Stopping probabilities are derived here:
    zeta_{s,a} = 1 - sum_{s'} P(s'|s,a), which must be strictly positive.
    """
    errors = []
    states = tuple(str(s) for s in states)
    players = tuple(
        p if isinstance(p, PlayerSpec) else PlayerSpec(str(p[0]), int(p[1]))
        for p in players)
    S = len(states)
    n = len(players)
    if S < 1:
        errors.append((BAD_PARAMS, "need at least one state"))
    if n < 1:
        errors.append((BAD_PARAMS, "need at least one player"))
    counts = [p.n_actions for p in players]
    if any(a < 1 for a in counts):
        errors.append((BAD_PARAMS, "every player needs at least one action"))
    if errors:
        raise GameValidationError(errors)
    J = int(np.prod(counts))

    rewards = np.array(rewards, dtype=float).reshape(n, S, J)
    transitions = np.array(transitions, dtype=float).reshape(S, J, S)
    initial_dist = np.array(initial_dist, dtype=float).reshape(S)

    if not (np.all(np.isfinite(rewards)) and np.all(np.isfinite(transitions))
            and np.all(np.isfinite(initial_dist))):
        raise GameValidationError([(BAD_PARAMS, "non-finite entries")])

    if np.any(np.abs(rewards) > 1.0 + STRICT_TOL):
        i, s, a = np.unravel_index(int(np.argmax(np.abs(rewards))), rewards.shape)
        errors.append((REWARD_OUT_OF_RANGE,
                       f"r[{players[i].name}][{states[s]}][{a}] = {rewards[i, s, a]!r} outside [-1, 1]"))
    if np.any(transitions < 0):
        errors.append((NEGATIVE_PROBABILITY, "negative transition probability"))
    if np.any(initial_dist < 0):
        errors.append((NEGATIVE_PROBABILITY, "negative initial probability"))

    row_sums = transitions.sum(axis=2)
    if np.any(row_sums > 1.0 + STRICT_TOL):
        s, a = np.unravel_index(int(np.argmax(row_sums)), row_sums.shape)
        errors.append((ZERO_STOP_PROBABILITY,
                       f"transitions from ({states[s]}, joint {a}) sum to {row_sums[s, a]!r} >= 1"))
    elif np.any(row_sums >= 1.0 - STRICT_TOL):
        s, a = np.unravel_index(int(np.argmax(row_sums)), row_sums.shape)
        errors.append((ZERO_STOP_PROBABILITY,
                       f"stop probability at ({states[s]}, joint {a}) is not strictly positive"))

    rho_sum = initial_dist.sum()
    if abs(rho_sum - 1.0) > LOAD_TOL:
        errors.append((ROW_SUM_MISMATCH, f"initial_dist sums to {rho_sum!r}"))
    elif np.any(initial_dist <= 0):
        # Full support is required: it keeps every state reachable in
        # expectation, hence the visitation-ratio bound finite for all
        # policy pairs.
        errors.append((EMPTY_SUPPORT_INITIAL_DIST,
                       "initial_dist must put positive mass on every state"))

    if errors:
        raise GameValidationError(errors)

    initial_dist = initial_dist / rho_sum
    stop_probs = 1.0 - row_sums
    zeta_min = float(stop_probs.min())
    for arr in (rewards, transitions, stop_probs, initial_dist):
        arr.flags.writeable = False
    return GameSpec(states=states, players=players, rewards=rewards,
                    transitions=transitions, stop_probs=stop_probs,
                    zeta_min=zeta_min, initial_dist=initial_dist)


# ---------------------------------------------------------------------------
# Serialization.  A game file is one JSON document; stop_probs are derived,
# never stored.

GAME_FILE_KEYS = ("states", "players", "rewards", "transitions", "initial_dist")


def save_game(game, path):
    doc = {
        "states": list(game.states),
        "players": [{"name": p.name, "actions": p.n_actions} for p in game.players],
        "rewards": game.rewards.tolist(),
        "transitions": game.transitions.tolist(),
        "initial_dist": game.initial_dist.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_game(path):
    """Load and validate a game file.

    Transition rows whose mass overshoots 1 by at most LOAD_TOL (text
    formats lose precision) are rescaled to keep a STOP_FLOOR of stopping
    mass, with a warning; anything worse is an error.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(PARSE_ERROR, f"{path}: line {e.lineno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError(PARSE_ERROR, f"{path}: {e}") from e
    for key in GAME_FILE_KEYS:
        if key not in doc:
            raise ConfigError(PARSE_ERROR, f"{path}: missing field '{key}'")
    try:
        players = [(p["name"], p["actions"]) for p in doc["players"]]
        transitions = np.array(doc["transitions"], dtype=float)
        rewards = np.array(doc["rewards"], dtype=float)
        initial = np.array(doc["initial_dist"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(PARSE_ERROR, f"{path}: malformed field ({e})") from e

    if transitions.ndim == 3:
        sums = transitions.sum(axis=2)
        over = (sums > 1.0) & (sums <= 1.0 + LOAD_TOL)
        if np.any(over):
            warnings.warn(
                f"{path}: {int(over.sum())} transition row(s) overshoot mass 1 "
                f"by <= {LOAD_TOL}; rescaled to a stopping floor of {STOP_FLOOR}")
            transitions = transitions.copy()
            scale = np.where(over, (1.0 - STOP_FLOOR) / sums, 1.0)
            transitions *= scale[:, :, None]
    return validate_game(doc["states"], players, rewards, transitions, initial)


def save_policy(policy, path):
    doc = {"policy": [r.tolist() for r in policy.rows]}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_policy(path, game=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(PARSE_ERROR, f"{path}: line {e.lineno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError(PARSE_ERROR, f"{path}: {e}") from e
    if "policy" not in doc:
        raise ConfigError(PARSE_ERROR, f"{path}: missing field 'policy'")
    try:
        pi = validate_policy([np.array(r, dtype=float) for r in doc["policy"]])
    except (TypeError, ValueError) as e:
        raise ConfigError(PARSE_ERROR, f"{path}: malformed policy ({e})") from e
    if game is not None:
        if pi.n_states != game.n_states or pi.action_counts != game.action_counts:
            raise ConfigError(PARSE_ERROR,
                              f"{path}: policy shape {pi.n_states}x{pi.action_counts} "
                              f"does not match game {game.n_states}x{game.action_counts}")
    return pi


# ---------------------------------------------------------------------------
# Built-in desk-scale instances.  These games are artifacts of this
# repository, constructed for testability; they are not taken from any
# external benchmark.

def single_state_game(zeta, payoffs, names=None):
    """One state, constant stopping probability `zeta`.

    `payoffs[i]` is player i's payoff tensor over joint actions, with one
    axis per player (so action counts are inferred from its shape).
    """
    payoffs = [np.array(u, dtype=float) for u in payoffs]
    counts = payoffs[0].shape
    n = len(payoffs)
    if len(counts) != n or any(u.shape != counts for u in payoffs):
        raise ConfigError(BAD_PARAMS, "payoff tensors must all have one axis per player")
    if not (0 < zeta <= 1):
        raise ConfigError(BAD_PARAMS, f"zeta must be in (0, 1], got {zeta}")
    J = int(np.prod(counts))
    rewards = np.stack([u.reshape(J) for u in payoffs])[:, None, :]
    transitions = np.full((1, J, 1), 1.0 - zeta)
    players = names or [f"p{i+1}" for i in range(n)]
    return validate_game(["s0"], [(nm, a) for nm, a in zip(players, counts)],
                         rewards, transitions, [1.0])


def _coordination_payoffs():
    u = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return [u, u]


def _pennies_payoffs():
    u = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return [u, -u]


def _handoff2():
    # Two states.  From s0 only the joint action (0,0) pays (0.2 each) and
    # hands off to s1 with probability 0.5; everything else pays 0 and stops.
    # At s1 the joint action (1,1) pays +1 and every other joint pays -1;
    # all of s1 stops surely.  The initial distribution leans on s0 but
    # keeps full support.
    counts = (2, 2)
    J = 4
    rewards = np.zeros((2, 2, J))
    transitions = np.zeros((2, J, 2))
    idx00 = 0 * 2 + 0
    idx11 = 1 * 2 + 1
    rewards[:, 0, idx00] = 0.2
    rewards[:, 1, :] = -1.0
    rewards[:, 1, idx11] = 1.0
    transitions[0, idx00, 1] = 0.5
    return validate_game(["s0", "s1"], [("p1", 2), ("p2", 2)],
                         rewards, transitions, [0.9, 0.1])


def random_game(seed, n_states, action_counts, zeta, n_players=None):
    """Seeded random instance: rewards uniform in [-1, 1], transition rows
    Dirichlet(1) rescaled so every stopping probability equals `zeta`,
    uniform initial distribution."""
    action_counts = tuple(int(a) for a in action_counts)
    if n_players is not None and n_players != len(action_counts):
        raise ConfigError(BAD_PARAMS, "n_players inconsistent with action counts")
    if not (0 < zeta <= 1):
        raise ConfigError(BAD_PARAMS, f"zeta must be in (0, 1], got {zeta}")
    if n_states < 1 or any(a < 1 for a in action_counts):
        raise ConfigError(BAD_PARAMS, "sizes must be positive")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), 0xB17))))
    n = len(action_counts)
    J = int(np.prod(action_counts))
    rewards = rng.uniform(-1.0, 1.0, size=(n, n_states, J))
    rows = rng.dirichlet(np.ones(n_states), size=(n_states, J))
    transitions = rows * (1.0 - zeta)
    # Snap each row sum to exactly 1 - zeta so the derived stopping
    # probability is the same float for every (state, action).  The last
    # entry takes the coarse correction; if round-to-even ties make the
    # target unreachable at its granularity, nudge progressively smaller
    # entries, whose finer ulp steps cannot skip the final rounding grid.
    target = 1.0 - zeta
    for s in range(n_states):
        for j in range(J):
            row = transitions[s, j]
            if n_states > 1 and row[-1] < 1e-9:
                k = int(np.argmax(row))
                row[-1], row[k] = row[k], row[-1]
            row[-1] += target - row.sum()
            for idx in [n_states - 1] + list(np.argsort(row[:-1]).tolist()):
                converged = False
                for _ in range(64):
                    diff = row.sum() - target
                    if diff == 0.0:
                        converged = True
                        break
                    row[idx] = np.nextafter(row[idx], -np.inf if diff > 0 else np.inf)
                if converged:
                    break
            if row.sum() != target or np.any(row < 0.0):
                raise ConfigError(BAD_PARAMS,
                                  f"could not normalize transition row ({s}, {j}) exactly")
    initial = np.full(n_states, 1.0 / n_states)
    return validate_game([f"s{k}" for k in range(n_states)],
                         [(f"p{i+1}", a) for i, a in enumerate(action_counts)],
                         rewards, transitions, initial)


BUILTIN_NAMES = ("single_state", "coord2", "pennies2", "handoff2", "random")


def builtin_game(name, **params):
    """Named desk-scale instances used throughout the tests and docs."""
    if name == "coord2":
        _reject_extra(name, params)
        return single_state_game(0.5, _coordination_payoffs())
    if name == "pennies2":
        _reject_extra(name, params)
        return single_state_game(0.5, _pennies_payoffs())
    if name == "handoff2":
        _reject_extra(name, params)
        return _handoff2()
    if name == "single_state":
        try:
            return single_state_game(params.pop("zeta"), params.pop("payoffs"),
                                     names=params.pop("names", None))
        except KeyError as e:
            raise ConfigError(BAD_PARAMS, f"single_state needs {e}") from e
    if name == "random":
        try:
            return random_game(params.pop("seed"), params.pop("n_states"),
                               params.pop("actions"), params.pop("zeta"),
                               n_players=params.pop("n_players", None))
        except KeyError as e:
            raise ConfigError(BAD_PARAMS, f"random needs {e}") from e
    raise ConfigError(UNKNOWN_NAME, f"unknown builtin game '{name}'")


def _reject_extra(name, params):
    if params:
        raise ConfigError(BAD_PARAMS, f"{name} takes no parameters, got {sorted(params)}")
