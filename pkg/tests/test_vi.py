import csv
import math

import numpy as np
import pytest

from burden_control.model import Action, PatientParams
from burden_control.patients import PATIENT_1, PATIENT_2, structure_model
from burden_control.vi import (GridSpec, NotConverged, PolicyTable, Structure, ValueFunction,
                               bellman_backup, classify_policy, finite_horizon_oracle,
                               q_functions, value_iteration)

from conftest import make_params


def grid_for(p, n=3000, **kw):
    return GridSpec.for_params(p, n_points=n, **kw)


class TestGridSpec:
    def test_nodes_inclusive(self):
        g = GridSpec(5.0, 11)
        assert g.nodes[0] == 0.0 and g.nodes[-1] == 5.0 and g.step == pytest.approx(0.5)

    @pytest.mark.parametrize("kw", [dict(n_points=1), dict(tolerance=0.0), dict(max_iterations=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GridSpec(5.0, **kw)


class TestBellmanBackup:
    def test_no_reward_stays_zero(self):
        p = make_params(gamma_low=1e-300, gamma_high=1e-300)
        g = grid_for(p, 200)
        out = bellman_backup(ValueFunction(g, np.zeros(200)), p)
        assert np.max(np.abs(out.values)) < 1e-290

    def test_one_step_at_zero(self):
        g = grid_for(PATIENT_1, 500)
        out = bellman_backup(ValueFunction(g, np.zeros(500)), PATIENT_1)
        assert out.values[0] == pytest.approx(1.0)

    def test_contraction(self, rng):
        g = grid_for(PATIENT_1, 400)
        for _ in range(20):
            v1, v2 = rng.normal(size=400) * 5, rng.normal(size=400) * 5
            d_out = np.max(np.abs(bellman_backup(ValueFunction(g, v1), PATIENT_1).values
                                  - bellman_backup(ValueFunction(g, v2), PATIENT_1).values))
            assert d_out <= PATIENT_1.alpha * np.max(np.abs(v1 - v2)) + 1e-12

    def test_matches_pointwise_formula(self, rng):
        p = PATIENT_2
        g = grid_for(p, 300)
        v = ValueFunction(g, rng.uniform(0, 10, 300))
        ql, qh = q_functions(v, p)
        for i in rng.integers(0, 300, 25):
            x = g.nodes[i]
            for a, q in ((Action.LOW, ql), (Action.HIGH, qh)):
                pr = math.exp(-p.lam(a) * x)
                expect = pr * (p.gamma(a) + p.alpha * v(min(p.b * x + p.cost(a), g.x_max))) \
                    + (1 - pr) * p.alpha * v(p.b * x)
                assert q[i] == pytest.approx(expect, rel=1e-12, abs=1e-12)

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bellman_backup(ValueFunction(GridSpec(4.0, 10), np.zeros(10)), PATIENT_1)


class TestValueIteration:
    def test_degenerate_always_high(self):
        p = make_params(c_low=1.0, lambda_low=1.0, lambda_high=1.0, gamma_low=0.5)
        _, pol = value_iteration(p, grid_for(p, 500))
        assert classify_policy(pol).classification is Structure.ALWAYS_HIGH

    @pytest.mark.parametrize("c_low, kind", [
        (0.1, Structure.ALWAYS_LOW), (0.2, Structure.DOUBLE_THRESHOLD),
        (0.3, Structure.SINGLE_THRESHOLD)])
    def test_structure_model(self, c_low, kind):
        p = structure_model(c_low)
        _, pol = value_iteration(p, grid_for(p))
        st = classify_policy(pol)
        assert st.classification is kind
        if kind is Structure.SINGLE_THRESHOLD:
            assert st.first_action is Action.HIGH
        if kind is Structure.DOUBLE_THRESHOLD:
            assert st.first_action is Action.LOW and st.thresholds[0] < st.thresholds[1]

    def test_patients_single_threshold(self):
        th = []
        for p in (PATIENT_1, PATIENT_2):
            _, pol = value_iteration(p, grid_for(p))
            st = classify_policy(pol)
            assert st.classification is Structure.SINGLE_THRESHOLD
            th.append(st.thresholds[0])
        assert th[1] < th[0]

    def test_q_consistency_and_ties(self):
        _, pol = value_iteration(PATIENT_1, grid_for(PATIENT_1, 800))
        low = pol.actions == 0
        assert np.all(pol.q_low[low] >= pol.q_high[low])
        assert np.all(pol.q_high[~low] > pol.q_low[~low])

    def test_exact_ties_go_low(self):
        p = make_params(c_low=1.0, lambda_low=1.0, lambda_high=1.0, gamma_low=1.0)
        _, pol = value_iteration(p, grid_for(p, 300))
        assert np.all(pol.actions == 0)
        assert pol.action_at(1.234) is Action.LOW

    def test_residuals_contract(self):
        v, _ = value_iteration(PATIENT_1, grid_for(PATIENT_1))
        r = v.residuals
        assert r[-1] < 1e-3 and len(r) <= 400
        assert all(b <= 0.95 * a + 1e-9 for a, b in zip(r[1:], r[2:]))

    def test_warm_start_agrees(self):
        g = grid_for(PATIENT_1, 1000)
        v, pol = value_iteration(PATIENT_1, g)
        v2, pol2 = value_iteration(PATIENT_1, g, v_init=v.values)
        assert v2.iterations <= 2
        assert np.max(np.abs(v2.values - v.values)) < 2e-2

    def test_not_converged(self):
        p = PATIENT_1
        with pytest.raises(NotConverged) as info:
            value_iteration(p, grid_for(p, 100, max_iterations=5))
        assert info.value.iterations == 5 and info.value.residual > 1e-3

    def test_bad_init_shape(self):
        with pytest.raises(ValueError):
            value_iteration(PATIENT_1, grid_for(PATIENT_1, 100), v_init=np.zeros(5))

    def test_monotone_iterates_from_zero(self):
        g = grid_for(PATIENT_2, 300)
        v = ValueFunction(g, np.zeros(300))
        for _ in range(30):
            nxt = bellman_backup(v, PATIENT_2)
            assert np.all(nxt.values >= v.values - 1e-12)
            v = nxt

    def test_csv_export(self, tmp_path):
        val, pol = value_iteration(PATIENT_1, grid_for(PATIENT_1, 50))
        path = tmp_path / "policy.csv"
        pol.to_csv(path, val)
        rows = list(csv.DictReader(open(path)))
        assert list(rows[0]) == ["x", "v", "q_low", "q_high", "action"] and len(rows) == 50
        assert float(rows[0]["v"]) == pytest.approx(val.values[0])


class TestClassify:
    def table(self, acts):
        acts = np.array(acts, dtype=np.int8)
        g = GridSpec(float(len(acts) - 1), len(acts))
        return PolicyTable(g, acts, np.zeros(len(acts)), np.zeros(len(acts)))

    def test_all_low(self):
        st = classify_policy(self.table([0] * 6))
        assert st.classification is Structure.ALWAYS_LOW and st.thresholds == ()

    def test_single(self):
        st = classify_policy(self.table([1, 1, 1, 0, 0]))
        assert st.classification is Structure.SINGLE_THRESHOLD and st.thresholds == (2.5,)

    def test_double_and_other(self):
        assert classify_policy(self.table([0, 1, 1, 0])).classification is Structure.DOUBLE_THRESHOLD
        assert classify_policy(self.table([0, 1, 0, 1])).classification is Structure.OTHER
        assert classify_policy(self.table([1, 1])).classification is Structure.ALWAYS_HIGH


class TestFiniteHorizonOracle:
    def test_one_step_zero_state(self):
        assert finite_horizon_oracle(PATIENT_1, 0.0, 1) == (pytest.approx(1.0), Action.HIGH)

    @pytest.mark.parametrize("x", [0.0, 0.7, 3.3, 9.9])
    def test_one_step_closed_form(self, x):
        p = structure_model(0.1)
        value, _ = finite_horizon_oracle(p, x, 1)
        assert value == pytest.approx(max(0.5 * math.exp(-0.7 * x), math.exp(-0.8 * x)))

    def test_cap(self):
        with pytest.raises(ValueError):
            finite_horizon_oracle(PATIENT_1, 1.0, 13)
        with pytest.raises(ValueError):
            finite_horizon_oracle(PATIENT_1, 1.0, 0)

    def test_matches_truncated_vi(self):
        p = PATIENT_1
        g = grid_for(p)
        v = ValueFunction(g, np.zeros(g.n_points))
        for _ in range(6):
            v = bellman_backup(v, p)
        for x in np.linspace(0.1, 4.9, 6):
            assert v(x) == pytest.approx(finite_horizon_oracle(p, x, 6)[0], abs=1e-3)
