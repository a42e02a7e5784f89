import json

import numpy as np
import pytest

from sgpg import games
from sgpg.errors import ConfigError, GameValidationError


def test_coord2_builtin():
    g = games.builtin_game("coord2")
    assert g.n_states == 1
    assert g.action_counts == (2, 2)
    assert g.zeta_min == 0.5
    assert np.all(g.stop_probs == 0.5)


def test_pennies2_zero_sum():
    g = games.builtin_game("pennies2")
    assert np.allclose(g.rewards[0] + g.rewards[1], 0.0)


def test_stop_probs_derived_exactly():
    g = games.builtin_game("random", seed=3, n_states=4, actions=(2, 2), zeta=0.3)
    assert np.array_equal(g.stop_probs, 1.0 - g.transitions.sum(axis=2))
    assert np.all(g.stop_probs >= g.zeta_min)


def test_random_game_is_pure_function_of_args():
    g1 = games.builtin_game("random", seed=7, n_states=3, actions=(2, 3), zeta=0.4)
    g2 = games.builtin_game("random", seed=7, n_states=3, actions=(2, 3), zeta=0.4)
    assert games.specs_equal(g1, g2)
    g3 = games.builtin_game("random", seed=8, n_states=3, actions=(2, 3), zeta=0.4)
    assert not games.specs_equal(g1, g3)
    # constant stopping probability across (s, a), equal to zeta up to one
    # float rounding of 1 - (1 - zeta)
    assert np.all(g3.stop_probs == g3.zeta_min)
    assert abs(g3.zeta_min - 0.4) < 1e-15


def test_handoff2_structure():
    g = games.builtin_game("handoff2")
    assert g.n_states == 2
    idx00 = g.joint_index((0, 0))
    idx11 = g.joint_index((1, 1))
    assert g.transitions[0, idx00, 1] == 0.5
    assert g.stop_probs[0, idx00] == 0.5
    # every other joint action stops surely
    for j in range(g.n_joint):
        if j != idx00:
            assert g.stop_probs[0, j] == 1.0
        assert g.stop_probs[1, j] == 1.0
    assert g.rewards[0, 1, idx11] == 1.0
    assert g.rewards[0, 1, idx00] == -1.0
    assert g.rewards[0, 0, idx00] == 0.2
    assert np.all(g.initial_dist > 0)


def test_validate_rejects_zero_stop():
    tr = np.zeros((1, 4, 1))
    tr[0, 2, 0] = 1.0          # this joint action never stops
    with pytest.raises(GameValidationError) as exc:
        games.validate_game(["s0"], [("a", 2), ("b", 2)],
                            np.zeros((2, 1, 4)), tr, [1.0])
    assert any(code == "ZERO_STOP_PROBABILITY" for code, _ in exc.value.errors)


def test_validate_rejects_reward_out_of_range():
    rw = np.zeros((2, 1, 4))
    rw[0, 0, 1] = 1.5
    with pytest.raises(GameValidationError) as exc:
        games.validate_game(["s0"], [("a", 2), ("b", 2)],
                            rw, np.full((1, 4, 1), 0.5), [1.0])
    assert any(code == "REWARD_OUT_OF_RANGE" for code, _ in exc.value.errors)


def test_validate_rejects_partial_support_initial_dist():
    g = games.builtin_game("handoff2")
    with pytest.raises(GameValidationError) as exc:
        games.validate_game(g.states, g.players, g.rewards, g.transitions, [1.0, 0.0])
    assert any(code == "EMPTY_SUPPORT_INITIAL_DIST" for code, _ in exc.value.errors)


def test_validate_collects_all_errors():
    rw = np.full((2, 1, 4), 2.0)
    tr = np.full((1, 4, 1), 1.0)
    with pytest.raises(GameValidationError) as exc:
        games.validate_game(["s0"], [("a", 2), ("b", 2)], rw, tr, [1.0])
    codes = {code for code, _ in exc.value.errors}
    assert "REWARD_OUT_OF_RANGE" in codes and "ZERO_STOP_PROBABILITY" in codes


def test_save_load_round_trip(tmp_path):
    g = games.builtin_game("random", seed=11, n_states=3, actions=(2, 2), zeta=0.25)
    path = tmp_path / "game.json"
    games.save_game(g, path)
    g2 = games.load_game(path)
    assert games.specs_equal(g, g2)
    # a second save is byte-identical
    path2 = tmp_path / "game2.json"
    games.save_game(g2, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_missing_field_names_it(tmp_path):
    path = tmp_path / "bad.json"
    doc = {"states": ["s0"], "players": [{"name": "a", "actions": 2}],
           "rewards": [[[0, 0]]], "initial_dist": [1.0]}
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError) as exc:
        games.load_game(path)
    assert exc.value.code == "PARSE_ERROR"
    assert "transitions" in str(exc.value)


def test_load_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"states": [,]}')
    with pytest.raises(ConfigError) as exc:
        games.load_game(path)
    assert exc.value.code == "PARSE_ERROR"
    assert "line" in str(exc.value)


def test_load_renormalizes_overshooting_row_with_warning(tmp_path):
    g = games.builtin_game("coord2")
    path = tmp_path / "game.json"
    games.save_game(g, path)
    doc = json.loads(path.read_text())
    doc["transitions"][0][0] = [1.0000000001]   # overshoots mass 1 by 1e-10
    path.write_text(json.dumps(doc))
    with pytest.warns(UserWarning, match="rescaled"):
        g2 = games.load_game(path)
    assert g2.stop_probs[0, 0] > 0
    assert abs(g2.transitions[0, 0, 0] - 1.0) < 1e-8


def test_load_rejects_overshoot_beyond_tolerance(tmp_path):
    g = games.builtin_game("coord2")
    path = tmp_path / "game.json"
    games.save_game(g, path)
    doc = json.loads(path.read_text())
    doc["transitions"][0][0] = [1.001]
    path.write_text(json.dumps(doc))
    with pytest.raises(GameValidationError):
        games.load_game(path)


def test_builtin_unknown_name():
    with pytest.raises(ConfigError) as exc:
        games.builtin_game("nosuch")
    assert exc.value.code == "UNKNOWN_NAME"


def test_builtin_bad_params():
    with pytest.raises(ConfigError) as exc:
        games.builtin_game("random", seed=1)
    assert exc.value.code == "BAD_PARAMS"
    with pytest.raises(ConfigError):
        games.builtin_game("coord2", extra=1)


def test_spec_arrays_immutable():
    g = games.builtin_game("coord2")
    with pytest.raises(ValueError):
        g.rewards[0, 0, 0] = 0.0
    with pytest.raises(ValueError):
        g.transitions[0, 0, 0] = 0.9


def test_policy_helpers():
    g = games.builtin_game("handoff2")
    uni = games.uniform_policy(g)
    assert uni.kappa().min() == 0.5
    det = games.deterministic_policy(g, [[0, 1], [1, 0]])
    assert det.is_deterministic()
    assert not uni.is_deterministic()
    flat = det.flatten()
    back = games.policy_from_flat(flat, g.shape)
    assert games.policies_equal(det, back)


def test_validate_policy_renormalizes_and_rejects():
    rows = [np.array([[0.5, 0.5 + 5e-10]]), np.array([[1.0, 0.0]])]
    pi = games.validate_policy(rows)
    assert abs(pi.rows[0][0].sum() - 1.0) < 1e-15
    with pytest.raises(GameValidationError) as exc:
        games.validate_policy([np.array([[0.5, 0.4]]), np.array([[1.0, 0.0]])])
    assert any(code == "ROW_SUM_MISMATCH" for code, _ in exc.value.errors)
    with pytest.raises(GameValidationError):
        games.validate_policy([np.array([[-0.1, 1.1]])])


def test_policy_save_load(tmp_path):
    g = games.builtin_game("coord2")
    pi = games.PolicyProfile((np.array([[0.25, 0.75]]), np.array([[0.6, 0.4]])))
    path = tmp_path / "pi.json"
    games.save_policy(pi, path)
    pi2 = games.load_policy(path, g)
    assert games.policies_equal(pi, pi2)
    with pytest.raises(ConfigError):
        games.load_policy(path, games.builtin_game("handoff2"))


def test_joint_table_is_product_distribution():
    g = games.builtin_game("random", seed=2, n_states=2, actions=(2, 3), zeta=0.5)
    rng = np.random.default_rng(0)
    rows = tuple(np.array([r / r.sum() for r in rng.uniform(0.1, 1, (2, a))])
                 for a in g.action_counts)
    pi = games.PolicyProfile(rows)
    joint = pi.joint_table()
    assert joint.shape == (2, 6)
    assert np.allclose(joint.sum(axis=1), 1.0)
    for s in range(2):
        for a1 in range(2):
            for a2 in range(3):
                j = g.joint_index((a1, a2))
                assert np.isclose(joint[s, j], rows[0][s, a1] * rows[1][s, a2])


def test_deterministic_profile_count():
    g = games.builtin_game("handoff2")
    profs = list(games.deterministic_profiles(g))
    assert len(profs) == games.count_deterministic_profiles(g) == 16
