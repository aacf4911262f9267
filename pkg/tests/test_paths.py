import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.stats import kstest

from rbergomi.estimators import mc_estimate, plain_mc_oracle
from rbergomi.experiments import PARAMETER_SETS
from rbergomi.mathcore import black_scholes_call, cholesky_factor, gauss_hermite_rule
from rbergomi.paths import (
    ExactSmoothedIntegrand,
    GaussianInput,
    ModelParams,
    SmoothedIntegrand,
    colorize_hybrid_input,
    conditional_payoff,
    conditional_payoff_args,
    correlation_function_C,
    exact_covariance_matrix,
    hybrid_step_covariance,
    hybrid_weights,
    kernel_eval,
    simulate_fbm_exact,
    simulate_fbm_hybrid,
    variance_path,
)

SET1 = PARAMETER_SETS[1].params


def make_params(**kwargs):
    base = dict(hurst=0.07, eta=1.9, rho=-0.9, xi0=0.235**2,
                spot=1.0, strike=1.0, maturity=1.0)
    base.update(kwargs)
    return ModelParams(**base)


class TestModelParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            make_params(hurst=0.5)
        with pytest.raises(ValueError):
            make_params(hurst=0.0)
        with pytest.raises(ValueError):
            make_params(rho=0.1)
        with pytest.raises(ValueError):
            make_params(rho=-1.0)
        with pytest.raises(ValueError):
            make_params(xi0=0.0)
        with pytest.raises(ValueError):
            make_params(maturity=-1.0)


class TestKernel:
    def test_unit_lag_quarter_hurst(self):
        assert kernel_eval(0.25, 1.0) == pytest.approx(math.sqrt(0.5), abs=1e-15)

    def test_direct_arithmetic_cross_check(self):
        # independent evaluation through logs
        want = math.exp(0.5 * math.log(0.14) + (0.07 - 0.5) * math.log(0.25))
        assert kernel_eval(0.07, 0.25) == pytest.approx(want, rel=1e-14)

    def test_monotone_decreasing_in_lag(self):
        lags = np.linspace(0.01, 3.0, 50)
        vals = kernel_eval(0.07, lags)
        assert np.all(np.diff(vals) < 0)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            kernel_eval(0.07, 0.0)
        with pytest.raises(ValueError):
            kernel_eval(0.07, -1.0)
        with pytest.raises(ValueError):
            kernel_eval(0.6, 1.0)


class TestHybridWeights:
    def test_b2_closed_form(self):
        h = 0.07
        want = ((2**0.57 - 1.0) / 0.57) ** (1.0 / (h - 0.5))
        assert hybrid_weights(h, 2)[0] == pytest.approx(want, rel=1e-14)

    @pytest.mark.parametrize("k", [2, 3, 7])
    def test_b_k_minimizes_l2_kernel_error(self, k):
        # the optimal constant for the power kernel over [k-1, k] is its
        # mean, recovered here by numerical optimization of the L2 error
        h = 0.07
        g = h - 0.5

        def l2_error(b):
            val, _ = quad(lambda x: (x**g - b**g) ** 2, k - 1, k, limit=200)
            return val

        res = minimize_scalar(l2_error, bounds=(k - 1, k), method="bounded",
                              options={"xatol": 1e-12})
        assert hybrid_weights(h, k)[-1] == pytest.approx(res.x, abs=1e-6)

    def test_interval_membership(self):
        for h in (0.02, 0.07, 0.3):
            b = hybrid_weights(h, 64)
            k = np.arange(2, 65)
            assert np.all(b > k - 1)
            assert np.all(b < k)
            assert np.all(np.diff(b) > 0)

    def test_asymptotic_ratio(self):
        b = hybrid_weights(0.07, 10**4)
        assert abs(b[-1] / 10**4 - 1.0) < 1e-3


class TestStepCovariance:
    def test_unit_step_closed_form(self):
        cov = hybrid_step_covariance(0.07, 1.0)
        want = np.array([[1.0, 1 / 0.57], [1 / 0.57, 1 / 0.14]])
        assert cov == pytest.approx(want, rel=1e-14)

    @pytest.mark.parametrize("h,dt", [(0.07, 1.0), (0.02, 0.25), (0.3, 0.01)])
    def test_entries_against_quadrature_oracle(self, h, dt):
        cov = hybrid_step_covariance(h, dt)
        var2, _ = quad(lambda u: u ** (2 * h - 1), 0, dt, points=[0], limit=400)
        c12, _ = quad(lambda u: u ** (h - 0.5), 0, dt, points=[0], limit=400)
        assert cov[1, 1] == pytest.approx(var2, rel=1e-8)
        assert cov[0, 1] == pytest.approx(c12, rel=1e-8)
        assert cov[0, 0] == pytest.approx(dt, rel=1e-15)

    def test_spd_cauchy_schwarz(self):
        for h in (0.02, 0.07, 0.25, 0.45):
            for dt in (1.0, 0.1, 1 / 64):
                cov = hybrid_step_covariance(h, dt)
                assert np.linalg.det(cov) > 0
                assert cov[0, 1] ** 2 < cov[0, 0] * cov[1, 1]

    def test_variance_identity(self):
        for h, dt in ((0.07, 0.5), (0.02, 0.125)):
            cov = hybrid_step_covariance(h, dt)
            assert cov[1, 1] * 2 * h == pytest.approx(dt ** (2 * h), rel=1e-14)


class TestColorize:
    def test_zero_maps_to_zero(self):
        raw = GaussianInput(np.zeros(4), np.zeros(4))
        out = colorize_hybrid_input(0.07, 0.25, raw)
        assert not out.w1.any() and not out.w2.any()

    def test_transform_determinant(self):
        h, dt = 0.07, 0.25
        cov = hybrid_step_covariance(h, dt)
        l11 = math.sqrt(dt)
        e1 = colorize_hybrid_input(h, dt, GaussianInput(np.ones(1), np.zeros(1)))
        e2 = colorize_hybrid_input(h, dt, GaussianInput(np.zeros(1), np.ones(1)))
        det = e1.w1[0] * e2.w2[0] - e2.w1[0] * e1.w2[0]
        assert det == pytest.approx(math.sqrt(np.linalg.det(cov)), rel=1e-12)
        assert e1.w1[0] == pytest.approx(l11, rel=1e-14)

    def test_empirical_covariance_mc_oracle(self):
        h, dt, m = 0.07, 0.25, 10**6
        rng = np.random.default_rng(3)
        raw = GaussianInput(rng.standard_normal(m), rng.standard_normal(m))
        out = colorize_hybrid_input(h, dt, raw)
        cov = hybrid_step_covariance(h, dt)
        pairs = np.stack([out.w1, out.w2])
        emp = np.cov(pairs)
        # std error of each sample-covariance entry (bivariate normal)
        for i in range(2):
            for j in range(2):
                se = math.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / m)
                assert abs(emp[i, j] - cov[i, j]) < 3 * se


def hybrid_fbm_double_loop(params, correlated):
    """Naive O(N^2) reference evaluation of the hybrid recursion."""
    n = len(correlated)
    dt = params.maturity / n
    h = params.hurst
    b = hybrid_weights(h, n) if n >= 2 else np.array([])
    out = np.zeros(n)
    for i in range(1, n + 1):
        acc = correlated.w2[i - 1]
        for k in range(2, i + 1):
            acc += (b[k - 2] * dt) ** (h - 0.5) * correlated.w1[i - k]
        out[i - 1] = math.sqrt(2 * h) * acc
    return out


class TestHybridFbm:
    def test_zero_input_zero_path(self):
        path = simulate_fbm_hybrid(SET1, GaussianInput(np.zeros(8), np.zeros(8)))
        assert not path.any()

    def test_single_step_is_scaled_w2(self):
        raw = GaussianInput(np.array([0.3]), np.array([1.7]))
        corr = colorize_hybrid_input(SET1.hurst, 1.0, raw)
        path = simulate_fbm_hybrid(SET1, corr)
        assert path[0] == pytest.approx(math.sqrt(2 * SET1.hurst) * corr.w2[0], rel=1e-14)

    @pytest.mark.parametrize("n", [2, 5, 16, 64])
    def test_convolution_matches_double_loop(self, n):
        rng = np.random.default_rng(n)
        raw = GaussianInput(rng.standard_normal(n), rng.standard_normal(n))
        corr = colorize_hybrid_input(SET1.hurst, SET1.maturity / n, raw)
        fast = simulate_fbm_hybrid(SET1, corr)
        slow = hybrid_fbm_double_loop(SET1, corr)
        assert np.max(np.abs(fast - slow)) < 1e-10 * max(1.0, np.max(np.abs(slow)))

    def test_terminal_variance_mc_oracle(self):
        # Var[W^H_T] = T^{2H}; hybrid matches within MC noise at N=16
        n, m = 16, 10**6
        dt = SET1.maturity / n
        rng = np.random.default_rng(11)
        engine = SmoothedIntegrand(SET1, n)
        dw1 = engine.increments(rng.standard_normal((m, n)))
        w2 = (engine._l21 / engine.sqrt_dt) * dw1 + engine._l22 * rng.standard_normal((m, n))
        from rbergomi.paths import _convolve_batch

        conv = _convolve_batch(engine._kernel, dw1)[:, :n]
        wbar_t = math.sqrt(2 * SET1.hurst) * (w2[:, -1] + conv[:, -1])
        sample_var = wbar_t.var()
        target = SET1.maturity ** (2 * SET1.hurst)
        se = target * math.sqrt(2.0 / m)
        assert abs(sample_var - target) < 3 * se


class TestCorrelationFunction:
    def test_value_at_one_is_exact(self):
        for h in (0.02, 0.07, 0.3, 0.45):
            assert correlation_function_C(h, 1.0) == 1.0

    def test_decays_to_zero(self):
        assert correlation_function_C(0.07, 1e6) < 1e-2

    def test_decreasing_in_x(self):
        vals = [correlation_function_C(0.07, x) for x in (1.0, 1.5, 2.0, 4.0, 10.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_against_high_precision_oracle(self):
        import mpmath

        mpmath.mp.dps = 30
        h = mpmath.mpf("0.07")
        g = mpmath.mpf("0.5") - h
        # split at the singular endpoint for a clean high-precision quadrature
        val = 2 * h * mpmath.quad(
            lambda s: (1 - s) ** (-g) * (2 - s) ** (-g), [0, mpmath.mpf(1)]
        )
        assert correlation_function_C(0.07, 2.0) == pytest.approx(float(val), abs=1e-9)


class TestExactCovariance:
    def test_fbm_diagonal_is_power_law(self):
        cov = exact_covariance_matrix(SET1, 4)
        t = SET1.maturity * np.arange(1, 5) / 4
        assert np.diag(cov[4:, 4:]) == pytest.approx(t ** (2 * SET1.hurst), rel=1e-12)

    def test_single_step_closed_form(self):
        cov = exact_covariance_matrix(SET1, 1)
        h = SET1.hurst
        want = np.array([[1.0, math.sqrt(2 * h) / (h + 0.5)],
                         [math.sqrt(2 * h) / (h + 0.5), 1.0]])
        assert cov == pytest.approx(want, rel=1e-12)

    def test_cross_block_against_quadrature_oracle(self):
        # Cov(W^H_t, W^1_s) = int_0^min(s,t) sqrt(2H) (t-u)^{H-1/2} du
        h = SET1.hurst
        n = 4
        cov = exact_covariance_matrix(SET1, n)
        t_grid = SET1.maturity * np.arange(1, n + 1) / n
        for i, t in enumerate(t_grid):
            for j, s in enumerate(t_grid):
                upper = min(s, t)
                want, _ = quad(
                    lambda u: math.sqrt(2 * h) * (t - u) ** (h - 0.5),
                    0.0, upper, points=[t] if t <= upper else None, limit=400,
                )
                assert cov[n + i, j] == pytest.approx(want, abs=1e-8)

    def test_brownian_block(self):
        cov = exact_covariance_matrix(SET1, 3)
        t = SET1.maturity * np.arange(1, 4) / 3
        assert cov[:3, :3] == pytest.approx(np.minimum.outer(t, t), rel=1e-14)

    def test_empirical_covariance_mc_oracle(self):
        n, m = 4, 10**5
        cov = exact_covariance_matrix(SET1, n)
        factor = cholesky_factor(cov)
        rng = np.random.default_rng(17)
        z = rng.standard_normal((m, 2 * n))
        x = z @ factor.entries.T
        emp = np.cov(x.T)
        for i in range(2 * n):
            for j in range(2 * n):
                se = math.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / m)
                assert abs(emp[i, j] - cov[i, j]) < 3 * se


class TestExactScheme:
    def test_zero_input_zero_paths(self):
        factor = cholesky_factor(exact_covariance_matrix(SET1, 4))
        w1, fbm = simulate_fbm_exact(factor, np.zeros(8))
        assert not w1.any() and not fbm.any()

    def test_dimension_mismatch(self):
        factor = cholesky_factor(exact_covariance_matrix(SET1, 4))
        with pytest.raises(ValueError):
            simulate_fbm_exact(factor, np.zeros(6))

    def test_brownian_increments_distribution(self):
        n, m = 4, 2000
        factor = cholesky_factor(exact_covariance_matrix(SET1, n))
        rng = np.random.default_rng(23)
        incs = []
        for _ in range(m):
            w1, _ = simulate_fbm_exact(factor, rng.standard_normal(2 * n))
            incs.extend(np.diff(w1, prepend=0.0))
        dt = SET1.maturity / n
        stat = kstest(np.asarray(incs) / math.sqrt(dt), "norm")
        assert stat.pvalue > 0.01


class TestVariancePath:
    def test_zero_eta_is_flat(self):
        p = make_params(eta=0.0)
        v = variance_path(p, np.linspace(-1, 1, 8))
        assert v == pytest.approx(np.full(8, p.xi0), rel=1e-15)

    def test_zero_fbm_input(self):
        v = variance_path(SET1, np.zeros(4))
        t = SET1.maturity * np.arange(1, 5) / 4
        want = SET1.xi0 * np.exp(-0.5 * SET1.eta**2 * t ** (2 * SET1.hurst))
        assert v == pytest.approx(want, rel=1e-14)

    def test_martingale_property_mc_oracle(self):
        # E[v_T] = xi0 under the exact scheme
        n, m = 4, 10**6
        factor = cholesky_factor(exact_covariance_matrix(SET1, n))
        rng = np.random.default_rng(29)
        z = rng.standard_normal((m, 2 * n))
        fbm = z @ factor.entries.T[:, n:]
        v = variance_path(SET1, fbm)
        v_t = v[:, -1]
        se = v_t.std() / math.sqrt(m)
        assert abs(v_t.mean() - SET1.xi0) < 3 * se

    def test_nonfinite_raises(self):
        with pytest.raises(FloatingPointError):
            variance_path(SET1, np.array([1e5, 1e6]))


class TestConditionalPayoff:
    def test_eta_zero_collapses_to_black_scholes(self):
        # with deterministic variance the expectation over the terminal
        # Brownian value recovers BS(S0, K, xi0 T) exactly (Gaussian mixture)
        p = make_params(eta=0.0)
        rule = gauss_hermite_rule(201)
        n = 1
        vals = []
        for z in rule.nodes:
            w1_path = np.array([z * math.sqrt(p.maturity)])
            v = variance_path(p, np.zeros(n))
            vals.append(conditional_payoff(p, w1_path, v))
        got = float(np.dot(rule.weights, vals))
        want = black_scholes_call(p.spot, p.strike, p.xi0 * p.maturity)
        assert got == pytest.approx(want, abs=1e-10)

    def test_rho_zero_effective_spot_is_spot(self):
        p = make_params(rho=0.0)
        args = conditional_payoff_args(p, np.array([0.5, -0.2]), np.array([0.05, 0.06]))
        assert args.effective_spot == p.spot

    def test_set1_zero_input_deterministic_value(self):
        # independent plain-python evaluation of the discretized formulas
        n = 4
        p = SET1
        dt = p.maturity / n
        v = [p.xi0 * math.exp(-0.5 * p.eta**2 * ((i + 1) * dt) ** (2 * p.hurst))
             for i in range(n)]
        v_left = [p.xi0] + v[:-1]
        i2 = sum(v_left) * dt
        eff_spot = p.spot * math.exp(-0.5 * p.rho**2 * i2)
        want = black_scholes_call(eff_spot, p.strike, (1 - p.rho**2) * i2)
        got = conditional_payoff(p, np.zeros(n), variance_path(p, np.zeros(n)))
        assert got == pytest.approx(want, rel=1e-14)

    def test_engine_matches_op_composition(self):
        # batch engine == colorize -> hybrid fbm -> variance -> payoff
        n = 8
        p = SET1
        rng = np.random.default_rng(31)
        z = rng.standard_normal((5, 2 * n))
        engine = SmoothedIntegrand(p, n)
        batch = engine(z)
        dt = p.maturity / n
        for row, want in zip(z, batch):
            raw = GaussianInput(row[:n], row[n:])
            corr = colorize_hybrid_input(p.hurst, dt, raw)
            fbm = simulate_fbm_hybrid(p, corr)
            v = variance_path(p, fbm)
            w1_path = np.cumsum(corr.w1)
            assert conditional_payoff(p, w1_path, v) == pytest.approx(want, rel=1e-12)

    def test_exact_engine_matches_op_composition(self):
        n = 4
        p = SET1
        rng = np.random.default_rng(37)
        z = rng.standard_normal((5, 2 * n))
        engine = ExactSmoothedIntegrand(p, n)
        batch = engine(z)
        factor = cholesky_factor(exact_covariance_matrix(p, n))
        for row, want in zip(z, batch):
            w1, fbm = simulate_fbm_exact(factor, row)
            v = variance_path(p, fbm)
            assert conditional_payoff(p, w1, v) == pytest.approx(want, rel=1e-12)


class TestSchemeCrossValidation:
    @pytest.mark.parametrize("set_id", [1, 2, 3, 4])
    @pytest.mark.parametrize("n", [4, 8])
    def test_hybrid_and_exact_agree(self, set_id, n):
        p = PARAMETER_SETS[set_id].params
        h = mc_estimate(p, n, 10**5, seed=41 + set_id, scheme="hybrid")
        e = mc_estimate(p, n, 10**5, seed=87 + set_id, scheme="exact")
        combined = math.hypot(h.stat_error, e.stat_error)
        assert abs(h.value - e.value) < 3 * combined

    def test_conditional_vs_plain_two_factor(self):
        p = SET1
        cond = mc_estimate(p, 8, 10**5, seed=53)
        plain = plain_mc_oracle(p, 8, 10**5, seed=59)
        combined = math.hypot(cond.stat_error, plain.stat_error)
        assert abs(cond.value - plain.value) < 3 * combined
        # conditioning strictly reduces variance; stat errors share the M
        assert cond.stat_error < plain.stat_error

    @pytest.mark.parametrize("set_id", [1, 2, 3, 4])
    def test_variance_reduction_on_all_sets(self, set_id):
        p = PARAMETER_SETS[set_id].params
        cond = mc_estimate(p, 8, 2 * 10**4, seed=61)
        plain = plain_mc_oracle(p, 8, 2 * 10**4, seed=67)
        assert (plain.stat_error / cond.stat_error) ** 2 > 1.0
