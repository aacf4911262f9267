import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from rbergomi.asgq import (
    BudgetExhaustedError,
    adaptive_construct,
    asgq_price,
    delta_operator,
    is_downward_closed,
    level_to_nodes,
    tensor_quadrature,
)
from rbergomi.experiments import PARAMETER_SETS
from rbergomi.mathcore import black_scholes_call, gauss_hermite_rule
from rbergomi.paths import SmoothedIntegrand

SET1 = PARAMETER_SETS[1].params
SET2 = PARAMETER_SETS[2].params


class TestLevelToNodes:
    def test_both_hierarchies_start_at_one(self):
        assert level_to_nodes("linear", 1) == 1
        assert level_to_nodes("geometric", 1) == 1

    def test_linear(self):
        assert [level_to_nodes("linear", k) for k in (2, 3, 4)] == [5, 9, 13]

    def test_geometric(self):
        assert [level_to_nodes("geometric", k) for k in (2, 3, 4)] == [3, 5, 9]

    def test_strictly_increasing(self):
        for kind in ("linear", "geometric"):
            counts = [level_to_nodes(kind, k) for k in range(1, 9)]
            assert all(a < b for a, b in zip(counts, counts[1:]))

    def test_rejects_bad_level(self):
        with pytest.raises(ValueError):
            level_to_nodes("linear", 0)
        with pytest.raises(ValueError):
            level_to_nodes("cubic", 1)


class TestTensorQuadrature:
    def test_constant_is_exact(self):
        f = lambda pts: np.ones(pts.shape[0])
        assert tensor_quadrature(f, (2, 3), "geometric") == pytest.approx(1.0, rel=1e-14)

    def test_product_of_squares(self):
        f = lambda pts: np.prod(pts**2, axis=1)
        got = tensor_quadrature(f, (2, 2, 2), "geometric")
        assert got == pytest.approx(1.0, rel=1e-12)

    def test_exponential_payoff_closed_form(self):
        # E[exp(a z1 + b z2)] = exp((a^2+b^2)/2)
        a, b = 0.3, 0.4
        f = lambda pts: np.exp(a * pts[:, 0] + b * pts[:, 1])
        got = tensor_quadrature(f, (4, 4), "linear")
        assert got == pytest.approx(math.exp((a**2 + b**2) / 2), abs=1e-8)


class TestDeltaOperator:
    def test_root_is_point_value(self):
        f = lambda pts: 2.0 + pts[:, 0] * 0
        assert delta_operator(f, (1, 1, 1), "geometric") == pytest.approx(2.0)

    def test_two_dim_matches_manual_expansion(self):
        f = lambda pts: np.exp(0.2 * pts[:, 0] - 0.3 * pts[:, 1])
        cache = {}
        got = delta_operator(f, (2, 2), "geometric", cache)
        q = lambda b: tensor_quadrature(f, b, "geometric")
        want = q((2, 2)) - q((1, 2)) - q((2, 1)) + q((1, 1))
        assert got == pytest.approx(want, rel=1e-12)

    def test_separable_factorization_oracle(self):
        # for f = g(x1) h(x2) the surplus factors into univariate differences
        g = lambda x: np.exp(0.4 * x)
        h = lambda x: 1.0 / (1.0 + 0.25 * x**2)

        def univariate_delta(fn, level):
            rule_hi = gauss_hermite_rule(level_to_nodes("geometric", level))
            q_hi = float(np.dot(rule_hi.weights, fn(rule_hi.nodes)))
            if level == 1:
                return q_hi
            rule_lo = gauss_hermite_rule(level_to_nodes("geometric", level - 1))
            return q_hi - float(np.dot(rule_lo.weights, fn(rule_lo.nodes)))

        f = lambda pts: g(pts[:, 0]) * h(pts[:, 1])
        for beta in [(2, 3), (1, 2), (3, 1)]:
            want = univariate_delta(g, beta[0]) * univariate_delta(h, beta[1])
            got = delta_operator(f, beta, "geometric")
            assert got == pytest.approx(want, rel=1e-10)


class TestAdaptiveConstruct:
    def test_linear_integrand_vanishes(self):
        f = lambda pts: pts @ np.array([0.5, -1.0, 2.0])
        state = adaptive_construct(f, 3, "geometric", tol=1e-8)
        assert abs(state.estimate) < 1e-12
        for surplus in state.frontier.values():
            assert abs(surplus) < 1e-12

    def test_separable_quartic_matches_full_tensor(self):
        f = lambda pts: (pts[:, 0] ** 4 + 1.0) * (pts[:, 1] ** 4 + 1.0)
        state = adaptive_construct(f, 2, "geometric", tol=1e-10)
        want = tensor_quadrature(f, (3, 3), "geometric")
        assert state.estimate == pytest.approx(want, rel=1e-10)

    def test_telescoping_identity_small_boxes(self):
        f = lambda pts: np.exp(0.3 * pts[:, 0] - 0.2 * pts[:, 1]
                               + 0.1 * pts[:, 2] * pts[:, 3])
        cache = {}
        level_cap = 3
        total = 0.0
        for beta in itertools.product(range(1, level_cap + 1), repeat=4):
            total += delta_operator(f, beta, "geometric", cache)
        corner = tensor_quadrature(f, (level_cap,) * 4, "geometric")
        assert total == pytest.approx(corner, abs=1e-12 * max(1.0, abs(corner)))

    def test_downward_closure_maintained(self):
        engine = SmoothedIntegrand(SET2, 2, use_bridge=True)
        state = adaptive_construct(engine, 4, "geometric", tol=1e-4)
        assert is_downward_closed(state.accepted)

    def test_estimate_equals_sum_of_accepted_surpluses(self):
        engine = SmoothedIntegrand(SET2, 2, use_bridge=True)
        state = adaptive_construct(engine, 4, "geometric", tol=1e-4)
        total = math.fsum(state.surpluses[b] for b in state.accepted)
        assert state.estimate == pytest.approx(total, rel=1e-12)

    def test_budget_exhaustion_reported(self):
        engine = SmoothedIntegrand(SET2, 4, use_bridge=True)
        state = adaptive_construct(engine, 8, "geometric", tol=1e-12, max_work=200)
        assert not state.converged
        assert state.error_margin > 0

    def test_cache_matches_recomputation(self):
        f = lambda pts: np.exp(0.25 * pts.sum(axis=1))
        cache = {}
        delta_operator(f, (2, 2), "geometric", cache)
        for beta, value in cache.items():
            assert value == pytest.approx(
                tensor_quadrature(f, beta, "geometric"), abs=1e-13
            )


class TestDifferenceDecay:
    """Surplus decay patterns on the Set 2 integrand at 4 steps."""

    @pytest.fixture(scope="class")
    def engine(self):
        return SmoothedIntegrand(SET2, 4, use_bridge=True)

    @pytest.mark.parametrize("dim", [0, 4])  # one increment dim, one kernel dim
    def test_first_differences_decay(self, engine, dim):
        cache = {}
        ones = [1] * 8
        vals = []
        for k in (1, 2, 3):
            beta = list(ones)
            beta[dim] = 1 + k
            vals.append(abs(delta_operator(engine, tuple(beta), "geometric", cache)))
        assert vals[1] < vals[0]
        assert vals[2] < vals[1]

    def test_mixed_differences_dominated_by_first(self, engine):
        cache = {}
        ones = [1] * 8
        for k in (1, 2):
            first = list(ones)
            first[0] = 1 + k
            mixed = list(first)
            mixed[1] = 1 + k
            d_first = abs(delta_operator(engine, tuple(first), "geometric", cache))
            d_mixed = abs(delta_operator(engine, tuple(mixed), "geometric", cache))
            assert d_mixed <= d_first


class TestAsgqPrice:
    def test_eta_zero_collapses_to_black_scholes(self):
        flat = replace(SET1, eta=0.0)
        est = asgq_price(flat, 2, hierarchy="geometric", tol=1e-4)
        want = black_scholes_call(flat.spot, flat.strike, flat.xi0 * flat.maturity)
        assert abs(est.value - want) < 1e-3

    def test_budget_exhaustion_raises(self):
        with pytest.raises(BudgetExhaustedError):
            asgq_price(SET2, 4, tol=1e-12, max_work=100)

    def test_smoke_set2(self):
        est = asgq_price(SET2, 2, hierarchy="geometric", tol=1e-2)
        ref = PARAMETER_SETS[2].reference_price
        assert abs(est.value - ref) / ref < 0.05
        assert est.stat_error >= 0.0
        assert est.work > 0
