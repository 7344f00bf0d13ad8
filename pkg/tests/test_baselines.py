import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from palevim.baselines import (BaselineConfig, local_shapley, marginal_permutation_vim, marginal_shapley_vims,
                               oracle_linear3, permutation_loss_increase)
from palevim.core import Dataset
from palevim.models import ScenarioSpec, generate_scenario, make_builtin, python_model


def exact_shapley(f, X):
    """Enumerate every feature ordering and every donor row."""
    n, d = X.shape
    phi = np.zeros((n, d))
    perms = list(itertools.permutations(range(d)))
    for i in range(n):
        for j in range(d):
            total = 0.0
            for order in perms:
                before = set(order[:order.index(j)])
                for w in range(n):
                    with_j = np.array([X[i, m] if (m in before or m == j) else X[w, m] for m in range(d)])
                    without = np.array([X[i, m] if m in before else X[w, m] for m in range(d)])
                    total += f(with_j[None])[0] - f(without[None])[0]
            phi[i, j] = total / (len(perms) * n)
    return phi


TOY = np.array([[0.2, 1.0, -0.5], [1.5, -0.3, 0.4], [-0.7, 0.8, 1.2], [0.9, 0.1, -1.1]])


class TestPermutation:
    def test_two_row_swap(self):
        d = Dataset.from_array([[0.0], [1.0]], response=[0.0, 1.0])
        m = python_model(lambda X: X[:, 0], ["x1"])
        base = m.eval_batch(d.matrix())
        assert permutation_loss_increase(m, d, 0, [1, 0], base) == 1.0

    def test_requires_response(self):
        d = Dataset.from_array(TOY)
        with pytest.raises(ValueError, match="permutation VIM requires a response column"):
            marginal_permutation_vim(make_builtin("linear", [1, 1, 1]), d, 0)

    def test_unused_predictor(self):
        s = ScenarioSpec("gauss3", 5000, seed=3, rho=0.5, beta=(1.0, 0.0, 0.5), sigma=0.1)
        d = generate_scenario(s)
        v = marginal_permutation_vim(s.truth(), d, 1, BaselineConfig(N=10))
        assert abs(v) <= 0.01 * np.var(d.response)

    def test_budget_and_determinism(self):
        d = generate_scenario(ScenarioSpec("gauss3", 300, seed=1, rho=0.3, sigma=0.1))
        m = make_builtin("linear", [1, 1, 0.5])
        cfg = BaselineConfig(N=7, seed=11)
        v1 = marginal_permutation_vim(m, d, 0, cfg)
        assert m.eval_counter <= (cfg.N + 1) * d.n
        assert marginal_permutation_vim(m, d, 0, cfg) == v1
        assert marginal_permutation_vim(m, d, 0, BaselineConfig(N=7, seed=12)) != v1

    def test_linear_target(self):
        d = generate_scenario(ScenarioSpec("gauss3", 20000, seed=0, rho=0.9, sigma=0.1))
        m = make_builtin("linear", [1, 1, 0.5])
        assert marginal_permutation_vim(m, d, 2, BaselineConfig(N=20)) == pytest.approx(0.5, rel=0.1)


class TestShapley:
    def test_sampling_matches_enumeration(self):
        beta = np.array([1.0, -2.0, 0.5])
        m = python_model(lambda X: X @ beta, ["x1", "x2", "x3"])
        exact = exact_shapley(lambda X: X @ beta, TOY)
        d = Dataset.from_array(TOY)
        cfg = BaselineConfig(M=10000, seed=4)
        approx = np.column_stack([local_shapley(m, d, j, cfg) for j in range(3)])
        np.testing.assert_allclose(approx, exact, atol=0.02 * np.abs(exact).max())
        np.testing.assert_allclose(marginal_shapley_vims(m, d, cfg), (exact ** 2).mean(axis=0), rtol=0.02)

    def test_enumeration_linear_closed_form(self):
        # for a linear model the exact marginal value is beta_j (x_ij - mean_j)
        beta = np.array([1.0, -2.0, 0.5])
        exact = exact_shapley(lambda X: X @ beta, TOY)
        np.testing.assert_allclose(exact, beta * (TOY - TOY.mean(axis=0)), atol=1e-12)

    def test_constant_model(self):
        d = Dataset.from_array(TOY)
        m = python_model(lambda X: np.full(len(X), 2.0), ["x1", "x2", "x3"])
        assert np.all(marginal_shapley_vims(m, d, BaselineConfig(M=5)) == 0)

    def test_budget(self):
        d = generate_scenario(ScenarioSpec("iid_uniform", 37, seed=1, d=3))
        m = make_builtin("linear", [1, 1, 1])
        marginal_shapley_vims(m, d, BaselineConfig(M=13), predictors=[1])
        assert m.eval_counter == 2 * 13 * 37

    def test_local_accuracy(self):
        d = generate_scenario(ScenarioSpec("iid_uniform", 40, seed=2, d=3))
        beta = np.array([2.0, -1.0, 0.5])
        m = python_model(lambda X: X @ beta, ["x1", "x2", "x3"])
        phi = np.column_stack([local_shapley(m, d, j, BaselineConfig(M=10000, seed=1)) for j in range(3)])
        f = d.matrix() @ beta
        np.testing.assert_allclose(phi.sum(axis=1), f - f.mean(), atol=0.02 * np.ptp(f))

    def test_linear_gauss(self):
        d = generate_scenario(ScenarioSpec("gauss3", 2000, seed=0, rho=0.9))
        v = marginal_shapley_vims(make_builtin("linear", [1, 1, 0.5]), d, BaselineConfig(M=50))
        np.testing.assert_allclose(np.sqrt(v), [1, 1, 0.5], rtol=0.1)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BaselineConfig(N=0)
        with pytest.raises(ValueError):
            BaselineConfig(M=0)


class TestOracle:
    def test_substitution(self):
        o = oracle_linear3((1, 1, 0.5), 0.9)
        assert o.GS_T[0] == pytest.approx(0.19)
        assert o.GS_M[0] == pytest.approx(3.61)
        assert o.ALE[0] == 1 and o.SHM[0] == 1 and o.MP[0] == 2
        assert o.CP[0] == pytest.approx(0.38)
        assert o.CP[2] == o.MP[2] == 0.5

    def test_absent_correlated_predictor(self):
        o = oracle_linear3((1, 0, 0.5), 0.9)
        assert o.SHC[1] == pytest.approx(0.9 ** 2 / 4)
        assert o.SHC[1] == pytest.approx(0.2025)
        assert o.SHC[0] == pytest.approx(1 - 3 * 0.81 / 4)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
    def test_independence_collapse(self, b1, b2, b3):
        o = oracle_linear3((b1, b2, b3), 0.0)
        sq = [b1 ** 2, b2 ** 2, b3 ** 2]
        for name in ("GS_T", "GS_M", "SHC", "SHM", "ALE"):
            np.testing.assert_allclose(getattr(o, name), sq, atol=1e-12)
        np.testing.assert_allclose(o.MP, np.multiply(2, sq), atol=1e-12)
        np.testing.assert_allclose(o.CP, np.multiply(2, sq), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.99, 0.99))
    def test_symmetry_and_ordering(self, b1, b2, b3, rho):
        o, s = oracle_linear3((b1, b2, b3), rho), oracle_linear3((b2, b1, b3), rho)
        for name in o.FIELDS:
            a, b = getattr(o, name), getattr(s, name)
            assert a[0] == pytest.approx(b[1], abs=1e-12) and a[1] == pytest.approx(b[0], abs=1e-12)
        for j in (0, 1):
            assert o.CP[j] <= o.MP[j] + 1e-12
        assert o.CP[2] == o.MP[2]
        assert all(v >= -1e-12 and math.isfinite(v) for name in o.FIELDS for v in getattr(o, name))
        assert o.GS_T[0] <= b1 ** 2 + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.99, 0.99))
    def test_conditional_shapley_second_moment(self, b1, b2, rho):
        # phi_1 = a x1 - b x2 with unit variances and corr rho has E[phi_1^2] = a^2 + b^2 - 2ab rho
        a, b = b1 + rho * b2 / 2, rho * b1 / 2
        assert oracle_linear3((b1, b2, 0), rho).SHC[0] == pytest.approx(a * a + b * b - 2 * a * b * rho, abs=1e-9)

    def test_rho_bounds(self):
        with pytest.raises(ValueError):
            oracle_linear3((1, 1, 1), 1.0)
        with pytest.raises(ValueError):
            oracle_linear3((1, 1), 0.5)
