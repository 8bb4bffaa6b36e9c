import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slsim import attacks
from slsim.errors import ConfigError, ShapeError


def test_select_exactly_one_percent():
    labels = np.zeros(5000, dtype=int)
    rows, short = attacks.select_poison_targets(labels, 0, 0.01, 5000, seed=0)
    assert rows.size == 50 and short == 0


def test_select_reports_shortfall_without_eligible_rows():
    rows, short = attacks.select_poison_targets(np.full(100, 3), 0, 0.05, 100, seed=0)
    assert rows.size == 0 and short == 5


def test_select_only_eligible_and_deterministic():
    labels = np.arange(400) % 4
    a, _ = attacks.select_poison_targets(labels, 2, 0.05, 400, seed=5)
    b, _ = attacks.select_poison_targets(labels, 2, 0.05, 400, seed=5)
    assert np.array_equal(a, b) and np.all(labels[a] == 2)


def test_select_accepts_mapping_and_unknown_labels():
    rows, short = attacks.select_poison_targets({1: 0, 3: 0, 4: 2}, 0, 0.5, 6, seed=0)
    assert set(rows.tolist()) <= {1, 3} and rows.size + short == 3


def test_select_rejects_bad_rate():
    with pytest.raises(ConfigError):
        attacks.select_poison_targets(np.zeros(5), 0, 0.0, 5, 0)


def test_villain_examples():
    trig = attacks.TriggerSpec([1, -1, 1, -1], 4.0, attacks.ADDITIVE, [True] * 4)
    np.testing.assert_array_equal(attacks.villain_inject(np.zeros(4), trig), [4, -4, 4, -4])
    x = np.arange(4.0)
    np.testing.assert_array_equal(attacks.villain_inject(x, trig.scaled(0.0)), x)


def test_villain_default_pattern_covers_first_half():
    trig = attacks.villain_trigger(8)
    assert trig.magnitude == 4.0
    np.testing.assert_array_equal(trig.pattern, [1, -1, 1, -1, 0, 0, 0, 0])
    out = attacks.villain_inject(np.ones(8), trig)
    np.testing.assert_array_equal(out[4:], 1.0)


def test_villain_dim_mismatch():
    with pytest.raises(ShapeError):
        attacks.villain_inject(np.zeros(3), attacks.villain_trigger(4))


@pytest.mark.parametrize("d,expected", [(5, [1, -1, 1, -1, 1]), (7, [1, -1, 1, -1, 1, 1, -1])])
def test_fu_tiling(d, expected):
    np.testing.assert_array_equal(attacks.fu_replace(np.zeros(d)), expected)


def test_fu_is_idempotent(rng):
    once = attacks.fu_replace(rng.normal(size=(3, 6)))
    assert np.array_equal(attacks.fu_replace(once), once)


def test_he_replacement():
    trig = attacks.TriggerSpec([1, 1, -1], 2.0, attacks.REPLACEMENT, [True] * 3)
    np.testing.assert_array_equal(attacks.he_replace(np.array([9.0, 9, 9]), trig), [2, 2, -2])
    np.testing.assert_array_equal(attacks.he_replace(np.ones(3), trig.scaled(0)), 0)
    once = attacks.he_replace(np.ones(3), trig)
    assert np.array_equal(attacks.he_replace(once, trig), once)


def test_he_trigger_is_seeded_sign_vector():
    a, b = attacks.he_trigger(16, seed=3), attacks.he_trigger(16, seed=3)
    assert np.array_equal(a.pattern, b.pattern) and set(np.unique(a.pattern)) <= {-1.0, 1.0}


def test_trigger_spec_validation():
    with pytest.raises(ConfigError):
        attacks.TriggerSpec([1, 1], 1.0, attacks.ADDITIVE, [True, False])
    with pytest.raises(ConfigError):
        attacks.TriggerSpec([1], -1.0, attacks.ADDITIVE, [True])


def test_badvfl_uniform_saliency_ties_to_lowest_index():
    out = attacks.badvfl_feature_trigger(np.zeros((2, 4)), np.ones(4), 2, [1], 7.0)
    np.testing.assert_array_equal(out, [[0, 0, 0, 0], [7, 7, 0, 0]])


def test_badvfl_top_saliency_example():
    out = attacks.badvfl_feature_trigger(np.zeros((1, 4)), [0, 5, 1, 3], 2, [0], 1.0)
    np.testing.assert_array_equal(out, [[0, 1, 0, 1]])


def test_badvfl_identity_cases(rng):
    x = rng.normal(size=(3, 4))
    assert np.array_equal(attacks.badvfl_feature_trigger(x, np.ones(4), 0, [0], 1.0), x)
    assert np.array_equal(attacks.badvfl_feature_trigger(x, np.ones(4), 2, [], 1.0), x)


def test_injection_leaves_benign_rows_untouched(rng):
    x = rng.normal(size=(6, 4))
    out = attacks.badvfl_feature_trigger(x, rng.random(4), 2, [1, 4], 9.0)
    assert np.array_equal(out[[0, 2, 3, 5]], x[[0, 2, 3, 5]])


def test_bisection_threshold_oracle():
    oracle = attacks.CountingOracle(lambda lam: lam <= 2.5)
    lam = attacks.adaptive_lambda_search(oracle, 4.0, 0.25)
    assert 2.5 - 0.25 <= lam <= 2.5
    assert oracle.calls <= math.ceil(math.log2(4.0 / 0.25))


def test_bisection_rejecting_everything():
    assert attacks.adaptive_lambda_search(lambda lam: False, 4.0, 0.25) == 0.0


@given(st.floats(0.0, 10.0), st.floats(0.5, 10.0), st.floats(0.01, 1.0))
@settings(max_examples=200, deadline=None)
def test_bisection_monotone_oracle_bound(threshold, lam0, tol):
    oracle = attacks.CountingOracle(lambda lam: lam <= threshold)
    lam = attacks.adaptive_lambda_search(oracle, lam0, tol)
    star = min(threshold, lam0)
    assert star - tol <= lam <= star
    assert oracle.calls <= attacks.max_bisection_calls(lam0, tol)


@pytest.mark.parametrize("lam0,tol", [(0, 0.1), (1, 0), (-1, 0.1)])
def test_bisection_rejects_bad_parameters(lam0, tol):
    with pytest.raises(ConfigError):
        attacks.adaptive_lambda_search(lambda lam: True, lam0, tol)
