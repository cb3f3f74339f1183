import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from burden_control.model import (Action, ParameterError, PatientParams, adherence_prob, reward,
                                  state_bound, step_dynamics)
from burden_control.patients import PATIENT_1, PATIENT_2, structure_model

from conftest import make_params


class TestStateBound:
    @pytest.mark.parametrize("b, expected", [(0.8, 5.0), (0.9, 10.0), (0.5, 2.0)])
    def test_examples(self, b, expected):
        assert state_bound(b=b) == pytest.approx(expected, abs=1e-12)
        assert make_params(b=b, x0=0.0).x_bar == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("b", [0.0, 1.0, 1.5, -0.1])
    def test_rejects_bad_b(self, b):
        with pytest.raises(ParameterError):
            state_bound(b=b)


class TestStepDynamics:
    def test_high_adhered(self):
        assert step_dynamics(0.5, Action.HIGH, 1, make_params()) == pytest.approx(1.4)

    def test_low_not_adhered_decays_only(self):
        assert step_dynamics(1.0, Action.LOW, 0, make_params()) == pytest.approx(0.8)

    def test_fixed_point(self):
        assert step_dynamics(5.0, Action.HIGH, 1, make_params()) == pytest.approx(5.0)

    @pytest.mark.parametrize("x", [-0.01, 5.01])
    def test_rejects_out_of_bounds(self, x):
        with pytest.raises(ValueError):
            step_dynamics(x, Action.LOW, 1, make_params())

    @given(frac=st.floats(0, 1), a=st.sampled_from(list(Action)), d=st.integers(0, 1),
           b=st.floats(0.05, 0.98), c=st.floats(0, 1))
    def test_bounded(self, frac, a, d, b, c):
        p = make_params(b=b, c_low=c, x0=0.0)
        nxt = step_dynamics(frac * p.x_bar, a, d, p)
        assert 0.0 <= nxt <= p.x_bar

    @given(x=st.floats(1e-6, 5.0), a=st.sampled_from(list(Action)))
    def test_decay_without_adherence(self, x, a):
        assert step_dynamics(x, a, 0, make_params()) < x


class TestAdherence:
    def test_zero_state(self):
        for a in Action:
            assert adherence_prob(0.0, a, make_params()) == 1.0

    def test_examples(self):
        p = make_params(lambda_low=0.5, lambda_high=1.0)
        assert adherence_prob(1.0, Action.HIGH, p) == pytest.approx(0.36788, abs=1e-5)
        assert adherence_prob(2.0, Action.LOW, p) == pytest.approx(0.36788, abs=1e-5)

    @given(x1=st.floats(0, 5), x2=st.floats(0, 5))
    def test_strictly_decreasing_in_x(self, x1, x2):
        p = make_params()
        if x1 + 1e-9 < x2:
            assert adherence_prob(x1, Action.HIGH, p) > adherence_prob(x2, Action.HIGH, p)

    @given(x=st.floats(1e-3, 5), l1=st.floats(0.05, 2), l2=st.floats(0.05, 2))
    def test_decreasing_in_lambda(self, x, l1, l2):
        lo, hi = sorted((l1, l2))
        p = make_params(lambda_low=lo, lambda_high=hi)
        assert adherence_prob(x, Action.LOW, p) >= adherence_prob(x, Action.HIGH, p)
        if hi > lo:
            assert adherence_prob(x, Action.LOW, p) > adherence_prob(x, Action.HIGH, p)

    def test_equals_one_only_at_zero(self):
        assert adherence_prob(1e-9, Action.HIGH, make_params()) < 1.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            adherence_prob(-1.0, Action.LOW, make_params())


class TestReward:
    def test_examples(self):
        p = make_params()
        assert reward(Action.HIGH, 1, p) == 1.0
        assert reward(Action.LOW, 1, p) == 0.5
        assert reward(Action.HIGH, 0, p) == 0.0
        assert reward(Action.LOW, 0, p) == 0.0


class TestParams:
    @pytest.mark.parametrize("field, value", [
        ("c_low", 1.2), ("c_low", -0.1), ("lambda_low", 1.5), ("lambda_low", 0.0),
        ("gamma_low", 2.0), ("b", 1.0), ("b", 0.0), ("alpha", 1.0), ("x0", 5.5), ("x0", -1.0),
        ("c_high", 2.0), ("alpha", math.nan),
    ])
    def test_invariants(self, field, value):
        with pytest.raises(ParameterError):
            make_params(**{field: value})

    def test_bound_tolerance(self):
        make_params(x0=5.0 + 1e-13)

    def test_reference_patients(self):
        assert PATIENT_1.tuple == (0.4, 1.0, 0.8) and PATIENT_1.c_low == 0.7
        assert PATIENT_2.tuple == (0.2, 1.0, 0.8) and PATIENT_2.c_low == 0.1
        assert PATIENT_1.x0 == PATIENT_2.x0 == pytest.approx(0.5 * PATIENT_1.x_bar)
        assert (PATIENT_1.gamma_low, PATIENT_2.gamma_low) == (0.5, 0.4)
        assert structure_model(0.2).tuple == (0.7, 0.8, 0.9)

    def test_frozen(self):
        with pytest.raises(Exception):
            PATIENT_1.b = 0.5

    def test_action_parse(self):
        assert Action.parse("l") is Action.LOW
        assert Action.parse("High") is Action.HIGH
        assert Action.parse(1) is Action.HIGH
        assert Action.LOW.other is Action.HIGH
        with pytest.raises(ValueError):
            Action.parse("medium")
