"""Compensation scheme tests: coefficient table, filter recursions, state."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcomp import (
    CompensationState,
    ConfigError,
    SchemeSpec,
    compensate,
    filter_update,
    scheme_coefficients,
    shift_deltas,
    transmits_weighted_increment,
)


def state_with(e, d1, d2):
    state = CompensationState.zeros(len(e))
    state.e = np.asarray(e, dtype=np.float64)
    state.delta_1 = np.asarray(d1, dtype=np.float64)
    state.delta_2 = np.asarray(d2, dtype=np.float64)
    return state


# ---------------------------------------------------------------------------
# scheme spec and the coefficient table


def test_scheme_spec_validation():
    with pytest.raises(ConfigError):
        SchemeSpec(kind="triple")
    with pytest.raises(ConfigError):
        SchemeSpec(kind="single", beta=0.0)
    with pytest.raises(ConfigError):
        SchemeSpec(kind="single", beta=1.2)
    SchemeSpec(kind="single", beta=1.0)


def test_coefficient_table_at_alpha_quarter():
    assert scheme_coefficients("none", 0.25) == (1.0, 0.0, 0.0, 0.0)
    assert scheme_coefficients("single", 0.25) == (1.0, 1.0, 1.0, 0.0)
    assert scheme_coefficients("two_step", 0.25) == (0.25, 0.25, 1.75, 0.75)


def test_two_step_coefficients_collapse_to_single_at_alpha_one():
    assert scheme_coefficients("two_step", 1.0) == scheme_coefficients("single", 1.0)


def test_coefficient_table_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        scheme_coefficients("both", 0.5)


def test_weighted_transmission_flag():
    assert transmits_weighted_increment("none")
    assert transmits_weighted_increment("single")
    assert not transmits_weighted_increment("two_step")
    with pytest.raises(ConfigError):
        transmits_weighted_increment("other")


# ---------------------------------------------------------------------------
# filter recursions


def test_none_scheme_clears_the_error_state():
    state = state_with([2.0, -1.0], [1.0, 1.0], [3.0, 3.0])
    e = filter_update(state, beta=0.3, alpha_t=0.5, alpha_t1=0.5, alpha_t2=0.5, kind="none")
    assert not e.any()
    assert not state.e.any()


def test_single_scheme_smooths_the_last_residual():
    state = state_with([1.0, 0.0], [4.0, -2.0], [9.0, 9.0])
    e = filter_update(state, beta=0.25, alpha_t=0.5, alpha_t1=0.5, alpha_t2=0.5, kind="single")
    expected = 0.75 * np.array([1.0, 0.0]) + 0.25 * np.array([4.0, -2.0])
    assert np.array_equal(e, expected)


def test_two_step_scheme_weights_two_residuals():
    e0 = np.array([1.0, -1.0])
    d1 = np.array([2.0, 0.5])
    d2 = np.array([-1.0, 3.0])
    state = state_with(e0, d1, d2)
    a_t, a_t1, a_t2 = 0.25, 0.5, 1.0
    e = filter_update(state, beta=0.4, alpha_t=a_t, alpha_t1=a_t1, alpha_t2=a_t2, kind="two_step")
    w1 = (a_t1 / a_t) * (2.0 - a_t)
    w2 = (a_t2 / a_t) * (1.0 - a_t)
    assert np.array_equal(e, 0.6 * e0 + 0.4 * (w1 * d1 - w2 * d2))


def test_filter_update_validates_inputs():
    state = CompensationState.zeros(2)
    with pytest.raises(ConfigError):
        filter_update(state, beta=1.0, alpha_t=0.0, alpha_t1=1.0, alpha_t2=1.0, kind="single")
    with pytest.raises(ConfigError):
        filter_update(state, beta=1.0, alpha_t=0.5, alpha_t1=0.5, alpha_t2=0.5, kind="nope")


@settings(max_examples=100, deadline=None)
@given(
    beta=st.floats(min_value=0.05, max_value=1.0),
    e=st.lists(st.floats(min_value=-5.0, max_value=5.0), min_size=3, max_size=3),
    d1=st.lists(st.floats(min_value=-5.0, max_value=5.0), min_size=3, max_size=3),
    d2=st.lists(st.floats(min_value=-5.0, max_value=5.0), min_size=3, max_size=3),
)
def test_two_step_filter_equals_single_filter_at_alpha_one(beta, e, d1, d2):
    """With a flat unit schedule the t-2 weight vanishes and the t-1 weight
    is one, so both compensation schemes advance the filter identically."""
    one = filter_update(state_with(e, d1, d2), beta, 1.0, 1.0, 1.0, "single")
    two = filter_update(state_with(e, d1, d2), beta, 1.0, 1.0, 1.0, "two_step")
    assert np.array_equal(one, two)


def test_filter_leaves_residual_buffers_alone():
    state = state_with([0.0, 0.0], [1.0, 2.0], [3.0, 4.0])
    filter_update(state, beta=0.5, alpha_t=0.5, alpha_t1=0.5, alpha_t2=0.5, kind="two_step")
    assert np.array_equal(state.delta_1, [1.0, 2.0])
    assert np.array_equal(state.delta_2, [3.0, 4.0])


# ---------------------------------------------------------------------------
# message compensation and residual aging


def test_compensate_adds_the_error_term():
    out = compensate(np.array([1.0, 2.0]), np.array([0.5, -0.5]))
    assert np.array_equal(out, [1.5, 1.5])
    with pytest.raises(ConfigError):
        compensate(np.zeros(2), np.zeros(3))


def test_shift_deltas_ages_the_buffers():
    state = state_with([0.0], [1.0], [2.0])
    shift_deltas(state, np.array([7.0]))
    assert np.array_equal(state.delta_1, [7.0])
    assert np.array_equal(state.delta_2, [1.0])


def test_zeros_state_shape():
    state = CompensationState.zeros(4)
    for buf in (state.e, state.delta_1, state.delta_2):
        assert buf.shape == (4,)
        assert not buf.any()
