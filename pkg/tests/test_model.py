import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snmap.errors import DownwardSubordinatorState, InvalidGenerator, NonPhaseTypeJump, TransformPole
from snmap.fixtures import bm1, bounded_variation, mm2, random_defective_spec
from snmap.model import (
    MapSpec,
    PhaseType,
    StateJump,
    env_stats,
    evaluate_F,
    evaluate_F_prime,
    load_spec,
    save_spec,
    spec_from_dict,
    spec_to_dict,
    time_reverse,
    validate_spec,
)


def test_fixtures_accepted():
    for spec in (bm1(), mm2(), bounded_variation()):
        assert validate_spec(spec) is spec
    assert bm1().defective and not bm1(0.0).defective


def test_downward_subordinator_rejected():
    with pytest.raises(DownwardSubordinatorState) as err:
        validate_spec(MapSpec([[0.0]], [-1.0], [0.0], [0.0]))
    assert err.value.state == 0


@pytest.mark.parametrize(
    "Q0",
    [
        [[-1.0, 1.1], [1.0, -1.0]],  # row sum
        [[1.0, -1.0], [1.0, -1.0]],  # negative off-diagonal
        [[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]],  # reducible
    ],
)
def test_bad_generator_rejected(Q0):
    n = len(Q0)
    with pytest.raises(InvalidGenerator):
        validate_spec(MapSpec(Q0, np.ones(n), np.ones(n)))


def test_bad_phase_type_rejected():
    with pytest.raises(NonPhaseTypeJump):
        validate_spec(MapSpec([[0.0]], [0.0], [1.0], [1.0], [StateJump(1.0, PhaseType([1.0], [[1.0]]))]))
    with pytest.raises(NonPhaseTypeJump):
        validate_spec(MapSpec([[0.0]], [0.0], [1.0], [1.0], [StateJump(1.0, PhaseType([0.5], [[-1.0]]))]))


def test_F_examples():
    assert evaluate_F(bm1(), 2.0)[0, 0] == pytest.approx(3.0, abs=1e-14)
    # Q0 - diag(q) with q = (1, 1)
    np.testing.assert_allclose(evaluate_F(mm2(), 0.0), [[-2, 1], [1, -2]], atol=1e-14)
    np.testing.assert_allclose(evaluate_F(mm2((1.0, 2.0)), 0.0), [[-2, 1], [1, -3]], atol=1e-14)
    assert evaluate_F(bm1(0.0), 1.0)[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_F_pole():
    with pytest.raises(TransformPole):
        evaluate_F(bounded_variation(), -2.0)


def test_phase_type_transform_matches_exponential():
    law = PhaseType.exponential(3.0)
    for al in (0.0, 0.5, 2.0):
        assert law.transform(al) == pytest.approx(3.0 / (3.0 + al))
    assert PhaseType.erlang(3, 2.0).mean == pytest.approx(1.5)


def test_F_prime_finite_difference():
    spec = random_defective_spec(4)
    h = 1e-6
    for al in (0.3, 1.1):
        fd = (evaluate_F(spec, al + h) - evaluate_F(spec, al - h)) / (2 * h)
        np.testing.assert_allclose(evaluate_F_prime(spec, al), fd, atol=1e-7)


def test_env_stats_examples():
    st_ = env_stats(mm2((0.0, 0.0)))
    np.testing.assert_allclose(st_.pi, [0.5, 0.5], atol=1e-14)
    assert st_.mu == pytest.approx(-0.5)
    assert st_.pi_G is None
    st_ = env_stats(bm1(0.0))
    assert st_.mu == 0.0 and st_.pi[0] == 1.0
    st_ = env_stats(MapSpec([[-2.0, 2.0], [1.0, -1.0]], [1.0, 1.0], [1.0, 1.0]))
    np.testing.assert_allclose(st_.pi, [1 / 3, 2 / 3], atol=1e-14)
    assert st_.pi_G is not None
    np.testing.assert_allclose(st_.pi_G.sum(), 1.0)


def test_env_stats_mu_includes_jumps():
    spec = bounded_variation()
    # state 0: drift 1 minus jump rate 1 times mean 1/2; state 1: drift -2
    assert env_stats(spec).mu == pytest.approx(0.5 * 0.5 + 0.5 * -2.0)


def test_time_reverse_examples():
    spec = MapSpec([[-2.0, 2.0], [1.0, -1.0]], [1.0, -1.0], [1.0, 1.0], [0.5, 0.5])
    rev = time_reverse(spec)
    pi = np.array([1 / 3, 2 / 3])
    # a two-state chain is reversible, so the conjugated generator is Q0 again
    np.testing.assert_allclose(rev.Q0, spec.Q0, atol=1e-14)
    rng = np.random.default_rng(0)
    for al in rng.uniform(0.0, 3.0, size=10):
        expect = np.diag(1 / pi) @ evaluate_F(spec, al).T @ np.diag(pi)
        np.testing.assert_allclose(evaluate_F(rev, al), expect, atol=1e-12)
    for spec in (bm1(), mm2()):
        np.testing.assert_array_equal(time_reverse(spec).Q0, spec.Q0)


@pytest.mark.parametrize("seed", range(1, 6))
def test_time_reverse_involution_and_identity(seed):
    spec = random_defective_spec(seed)
    back = time_reverse(time_reverse(spec))
    np.testing.assert_allclose(back.Q0, spec.Q0, atol=1e-12)
    assert set(back.switch_jumps) == set(spec.switch_jumps)
    pi = env_stats(spec).pi
    for al in (0.2, 1.3, 0.7 + 0.4j):
        expect = np.diag(1 / pi) @ evaluate_F(spec, al).T @ np.diag(pi)
        np.testing.assert_allclose(evaluate_F(time_reverse(spec), al), expect, atol=1e-12)


def test_json_round_trip(tmp_path):
    spec = random_defective_spec(2)
    path = save_spec(spec, tmp_path / "m.json")
    back = load_spec(path)
    for al in (0.0, 0.9):
        np.testing.assert_array_equal(evaluate_F(back, al), evaluate_F(spec, al))
    assert spec_to_dict(spec_from_dict(json.loads(path.read_text()))) == spec_to_dict(spec)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(1, 10_000), alpha=st.floats(0.0, 10.0))
def test_F_real_alpha_properties(seed, alpha):
    spec = random_defective_spec(seed)
    F = evaluate_F(spec, alpha)
    assert np.isrealobj(F)
    off = F - np.diag(np.diag(F))
    assert off.min() >= 0.0
    np.testing.assert_allclose(evaluate_F(spec, 0.0).sum(axis=1) + spec.kill, 0.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(1, 10_000))
def test_stationary_law(seed):
    spec = random_defective_spec(seed)
    pi = env_stats(spec).pi
    assert np.all(pi >= 0) and pi.sum() == pytest.approx(1.0)
    assert np.max(np.abs(pi @ spec.Q0)) <= 1e-12
