import json
import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from posipred.constants import (
    BOTH,
    ConstantEstimate,
    K2SearchConfig,
    McConfig,
    ShiftedCdfSums,
    _solve_mean_equation,
    default_draws,
    draw_shared_sphere,
    k1,
    k2,
    k3,
    k4,
    k5,
    k6,
    k_naive,
)
from posipred.design import (
    canonicalize,
    count_not_subset,
    enumerate_universe,
    full_model,
    model_from_indices,
)
from posipred.numerics import INFINITE, fsharp_cdf, fsharp_table


def k4_quadrature_oracle(d, r, c_empty, alpha):
    """Independent route: integrate the clipped union bound numerically."""
    gdist = stats.chi(d) if math.isinf(r) else None
    bdist = stats.beta(0.5, (d - 1) / 2.0)

    def gpdf(g):
        if gdist is not None:
            return gdist.pdf(g)
        # density of G with G^2/d following F(d, r)
        return stats.f.pdf(g * g / d, d, r) * 2.0 * g / d

    hi = gdist.ppf(1 - 1e-13) if gdist is not None \
        else math.sqrt(d * stats.f.ppf(1 - 1e-13, d, r))

    def cdf(t):
        def integrand(g):
            u = (t / g) ** 2
            tail = bdist.sf(u) if u < 1.0 else 0.0
            return (1.0 - min(1.0, c_empty * tail)) * gpdf(g)

        val, _ = integrate.quad(integrand, 0.0, hi, limit=400)
        return val

    return optimize.brentq(lambda t: cdf(t) - (1 - alpha), 1e-6,
                           8.0 * math.sqrt(d) * (1 if math.isinf(r) else 4), xtol=1e-9)


def lemma_fixture():
    """p = d = 2 design with columns at angles 0 and 2*pi/3 and the matched x0."""
    ang = 2.0 * math.pi / 3.0
    X = np.array([[1.0, math.cos(ang)], [0.0, math.sin(ang)]])
    x0 = np.array([math.cos(2 * ang), math.sin(2 * ang)]) @ X
    return X, x0


class TestNaive:
    def test_known_variance(self):
        assert k_naive(INFINITE, 0.05).value == pytest.approx(
            float(stats.norm.ppf(0.975)), abs=1e-7)

    def test_cauchy(self):
        assert k_naive(1, 0.5).value == pytest.approx(1.0, abs=1e-8)

    def test_alpha_near_one(self):
        assert k_naive(10, 0.999).value == pytest.approx(0.0, abs=2e-3)


class TestScheffe:
    def test_reduces_to_absolute_normal(self):
        assert k5(1, INFINITE, 0.05).value == pytest.approx(1.959964, abs=1e-5)

    def test_chi_two_closed_form(self):
        assert k5(2, INFINITE, 0.05).value == pytest.approx(
            math.sqrt(2.0 * math.log(20.0)), abs=1e-8)

    def test_growth_to_sqrt_p(self):
        ratios = [k5(p, INFINITE, 0.05).value / math.sqrt(p) for p in (50, 100, 200)]
        assert ratios[0] > ratios[1] > ratios[2] > 1.0


class TestRuleOfThumb:
    def test_scaling_and_flag(self):
        base = k5(7, INFINITE, 0.1)
        rot = k6(7, INFINITE, 0.1)
        assert rot.value == pytest.approx(0.866 * base.value, abs=1e-12)
        assert "rule-of-thumb" in rot.flags
        assert "rule-of-thumb" in json.loads(json.dumps(rot.to_json_dict()))["flags"]

    def test_reference_value(self):
        assert k6(1, INFINITE, 0.05).value == pytest.approx(0.866 * 1.9599640, abs=1e-5)


class TestK4:
    def test_dimension_one_collapse(self):
        est = k4(1, INFINITE, 0.05, c_empty=3)
        assert est.value == pytest.approx(1.959964, abs=1e-6)

    def test_lower_below_upper(self):
        for d, r, ce in [(2, INFINITE, 3), (5, 7, 31), (10, INFINITE, 1023)]:
            est = k4(d, r, 0.05, c_empty=ce, variant=BOTH)
            assert est.value <= est.value_upper

    def test_brackets_quadrature_oracle(self):
        for d, r, ce in [(2, INFINITE, 3), (5, INFINITE, 31), (4, 9, 15)]:
            est = k4(d, r, 0.05, c_empty=ce, variant=BOTH)
            oracle = k4_quadrature_oracle(d, r, ce, 0.05)
            assert est.value - 1e-6 <= oracle <= est.value_upper + 1e-6

    def test_below_scheffe(self):
        for d, r, ce in [(3, INFINITE, 7), (6, 11, 63)]:
            assert k4(d, r, 0.05, c_empty=ce).value <= k5(d, r, 0.05).value + 1e-6
            assert k4(d, r, 0.05, c_empty=ce, variant="upper").value <= \
                k5(d, r, 0.05).value + 1e-6

    def test_power_set_30_regression_value(self):
        # Frozen after confirmation by the quadrature oracle (5.72557); the
        # step-function bounds must bracket it tightly.
        est = k4(30, INFINITE, 0.05, c_empty=2 ** 30 - 1, variant=BOTH)
        assert est.value == pytest.approx(5.725529, abs=2e-4)
        assert est.value_upper - est.value < 2e-4

    def test_minimal_universe_grid_endpoint(self):
        # c_empty = 1 sends the last grid node to zero; it must be skipped.
        est = k4(3, INFINITE, 0.05, c_empty=1, variant=BOTH)
        assert 0 < est.value <= est.value_upper


class TestK1:
    def test_zero_query_point(self):
        canon = canonicalize(np.eye(3))
        u = enumerate_universe(3, None, np.eye(3))
        est = k1(canon, np.zeros(3), u, INFINITE, 0.05,
                 McConfig(seed=1, draws=100))
        assert est.value == 0.0

    def test_orthogonal_basis_vector(self):
        X = np.eye(6)
        canon = canonicalize(X)
        u = enumerate_universe(6, None, X)
        x0 = np.zeros(6)
        x0[2] = 1.0
        est = k1(canon, x0, u, INFINITE, 0.05, McConfig(seed=11, draws=40_000),
                 with_stderr=False)
        assert est.value == pytest.approx(1.96, abs=0.05)

    def test_lemma_design_matches_union_bound(self):
        X, x0 = lemma_fixture()
        canon = canonicalize(X)
        u = enumerate_universe(2, None, X)
        est = k1(canon, x0, u, INFINITE, 0.05, McConfig(seed=21, draws=100_000))
        bound = k4(2, INFINITE, 0.05, c_empty=3, variant=BOTH)
        assert abs(est.value - bound.midpoint()) <= 4.0 * est.mc_stderr

    def test_seed_determinism_and_thread_invariance(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((12, 4))
        x0 = rng.standard_normal(4)
        canon = canonicalize(X)
        u = enumerate_universe(4, None, X)
        cfg = McConfig(seed=33, draws=20_000)
        a = k1(canon, x0, u, INFINITE, 0.05, cfg)
        b = k1(canon, x0, u, INFINITE, 0.05, cfg)
        c = k1(canon, x0, u, INFINITE, 0.05, cfg, threads=4)
        assert a.value == b.value == c.value
        assert a.mc_stderr == b.mc_stderr == c.mc_stderr

    def test_binned_solver_matches_exact_cdf_mean(self):
        rng = np.random.default_rng(12)
        c = rng.uniform(0.01, 1.0, size=5000)
        table = fsharp_table(4, INFINITE)
        sums = ShiftedCdfSums(table, c)
        root = _solve_mean_equation(sums, None, float(c.size), 0.05)
        sum_at, total = sums.prepare(None)
        assert total == c.size
        exact = np.array([fsharp_cdf(4, INFINITE, root / ci) for ci in c])
        assert sum_at(root) / c.size == pytest.approx(float(exact.mean()), abs=5e-8)
        assert float(exact.mean()) == pytest.approx(0.95, abs=1e-6)

    def test_requires_seed_when_drawing(self):
        canon = canonicalize(np.eye(2))
        u = enumerate_universe(2, None, np.eye(2))
        with pytest.raises(ValueError):
            k1(canon, np.ones(2), u, INFINITE, 0.05, McConfig(seed=None, draws=100))


class TestK3:
    @pytest.fixture(scope="class")
    def setup(self):
        rng = np.random.default_rng(44)
        X = rng.standard_normal((14, 5))
        x0 = rng.standard_normal(5)
        canon = canonicalize(X)
        u = enumerate_universe(5, None, X)
        v = draw_shared_sphere(canon.d, 30_000, 99)
        return X, x0, canon, u, v

    def test_empty_model_equals_k4_exactly(self, setup):
        _, x0, canon, u, v = setup
        cfg = McConfig(seed=99, draws=30_000, variant=BOTH)
        a = k3(canon, x0, 0, u, INFINITE, 0.05, cfg, v_sample=v)
        b = k4(canon.d, INFINITE, 0.05, count_not_subset(0, u), variant=BOTH)
        assert (a.value, a.value_upper) == (b.value, b.value_upper)

    def test_full_model_equals_k1_exactly(self, setup):
        _, x0, canon, u, v = setup
        cfg = McConfig(seed=99, draws=30_000)
        a = k3(canon, x0, full_model(5), u, INFINITE, 0.05, cfg, v_sample=v)
        b = k1(canon, x0, u, INFINITE, 0.05, cfg, v_sample=v)
        assert a.value == b.value

    def test_singleton_equals_k4(self, setup):
        _, x0, canon, u, v = setup
        cfg = McConfig(seed=99, draws=30_000, variant=BOTH)
        m = model_from_indices([2], 5)
        a = k3(canon, x0, m, u, INFINITE, 0.05, cfg, v_sample=v, with_stderr=False)
        b = k4(canon.d, INFINITE, 0.05, count_not_subset(m, u) + 1, variant=BOTH)
        assert (a.value, a.value_upper) == (b.value, b.value_upper)

    def test_dimension_one_collapse(self):
        X = np.array([[1.0], [2.0], [0.5]])
        canon = canonicalize(X)
        u = enumerate_universe(1, None, X)
        cfg = McConfig(seed=1, draws=100)
        est = k3(canon, np.asarray([2.0]), full_model(1), u, INFINITE, 0.05, cfg)
        # Full model delegates to k1; the empty model solves the quantile.
        est_e = k3(canon, np.asarray([2.0]), 0, u, INFINITE, 0.05, cfg)
        assert est_e.value == pytest.approx(1.959964, abs=1e-6)
        assert est.value == pytest.approx(1.959964, abs=0.02)

    def test_general_model_chain_and_bounds(self, setup):
        _, x0, canon, u, v = setup
        cfg = McConfig(seed=99, draws=30_000, variant=BOTH)
        m = model_from_indices([1, 3], 5)
        est = k3(canon, x0, m, u, INFINITE, 0.05, cfg, v_sample=v)
        assert est.value <= est.value_upper
        e1 = k1(canon, x0, u, INFINITE, 0.05, McConfig(seed=99, draws=30_000),
                v_sample=v)
        e4 = k4(canon.d, INFINITE, 0.05, count_not_subset(0, u))
        eps = 3.0 * (e1.mc_stderr + est.mc_stderr)
        assert e1.value <= est.value + eps
        assert est.value <= e4.value + 3.0 * est.mc_stderr
        assert e4.value <= k5(canon.d, INFINITE, 0.05).value + 1e-6

    def test_nested_monotonicity(self, setup):
        _, x0, canon, u, v = setup
        cfg = McConfig(seed=99, draws=30_000)
        small = model_from_indices([1, 3], 5)
        big = model_from_indices([1, 3, 4], 5)
        a = k3(canon, x0, small, u, INFINITE, 0.05, cfg, v_sample=v)
        b = k3(canon, x0, big, u, INFINITE, 0.05, cfg, v_sample=v)
        assert b.value <= a.value + 3.0 * (a.mc_stderr + b.mc_stderr)

    def test_vanishing_functional_general_path(self, setup):
        # x0 zero on the active coordinates: the Monte Carlo part vanishes and
        # the equation reduces to the clipped union bound alone.
        _, _, canon, u, v = setup
        x0 = np.zeros(5)
        x0[4] = 1.0
        m = model_from_indices([1, 3], 5)
        cfg = McConfig(seed=99, draws=30_000)
        est = k3(canon, x0, m, u, INFINITE, 0.05, cfg, v_sample=v, with_stderr=False)
        assert est.value > 0

    def test_model_must_be_in_universe(self, setup):
        _, x0, canon, u, _ = setup
        capped = enumerate_universe(5, 2, np.eye(5))
        with pytest.raises(ValueError):
            k3(canon, x0, full_model(5), capped, INFINITE, 0.05,
               McConfig(seed=1, draws=10))


class TestK2:
    def test_full_model_equals_k1(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((15, 4))
        x0 = rng.standard_normal(4)
        canon = canonicalize(X)
        u = enumerate_universe(4, None, X)
        cfg = K2SearchConfig(seed=3, stage1_candidates=10, stage1_draws=100,
                             stage2_candidates=5, stage2_draws=500,
                             stage3_draws=5000)
        a = k2(canon, x0, full_model(4), u, INFINITE, 0.05, cfg)
        b = k1(canon, x0, u, INFINITE, 0.05, McConfig(seed=3, draws=5000))
        assert a.value == b.value
        assert "stochastic-lower-bound" in a.flags

    def test_dominates_pointwise_value(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((15, 4))
        x0 = rng.standard_normal(4)
        canon = canonicalize(X)
        u = enumerate_universe(4, None, X)
        m = model_from_indices([1, 2], 4)
        cfg = K2SearchConfig(seed=5, stage1_candidates=200, stage1_draws=300,
                             stage2_candidates=20, stage2_draws=2000,
                             stage3_draws=10_000)
        sup = k2(canon, x0[[0, 1]], m, u, INFINITE, 0.05, cfg)
        point = k1(canon, x0, u, INFINITE, 0.05, McConfig(seed=5, draws=10_000))
        assert sup.value >= point.value - 3.0 * (sup.mc_stderr + point.mc_stderr)

    def test_singular_covariance_flag(self):
        # Two observations cannot identify a 3-column free block.
        X = np.array([[1.0, 0.3, -0.2, 0.5], [0.1, 1.0, 0.4, -0.3]])
        canon = canonicalize(X)
        u = enumerate_universe(4, 1, X)
        m = model_from_indices([1], 4)
        cfg = K2SearchConfig(seed=6, stage1_candidates=20, stage1_draws=100,
                             stage2_candidates=5, stage2_draws=200,
                             stage3_draws=500)
        est = k2(canon, np.asarray([0.7]), m, u, INFINITE, 0.05, cfg)
        assert "covariance-regularized" in est.flags

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            K2SearchConfig(seed=1, stage1_candidates=5, stage2_candidates=10)


class TestOrderingChainShared:
    def test_small_instance_chain(self):
        rng = np.random.default_rng(2718)
        for trial in range(3):
            p = int(rng.integers(3, 6))
            n = p + 8
            X = rng.standard_normal((n, p))
            x0 = rng.standard_normal(p)
            r = INFINITE if trial % 2 == 0 else n - p
            canon = canonicalize(X)
            u = enumerate_universe(p, None, X)
            v = draw_shared_sphere(canon.d, 20_000, 50 + trial)
            cfg = McConfig(seed=50 + trial, draws=20_000)
            naive = k_naive(r, 0.05).value
            e1 = k1(canon, x0, u, r, 0.05, cfg, v_sample=v)
            m = int(rng.integers(1, (1 << p) - 1))
            e3 = k3(canon, x0, m, u, r, 0.05, cfg, v_sample=v)
            e4 = k4(canon.d, r, 0.05, count_not_subset(0, u)).value
            e5v = k5(canon.d, r, 0.05).value
            eps1 = 3.0 * e1.mc_stderr
            eps3 = 3.0 * (e1.mc_stderr + (e3.mc_stderr or 0.0))
            assert naive <= e1.value + eps1
            assert e1.value <= e3.value + eps3
            assert e3.value <= e4 + 3.0 * (e3.mc_stderr or 0.0) + 1e-6
            assert e4 <= e5v + 1e-6


class TestWorstCaseGrowth:
    def test_all_ones_query_grows(self):
        # Frozen against a brute-force oracle of the max statistic over the
        # 2^12 universe (subset prefix maximization, 2e5 replications):
        # the 95% point is 3.666; the basis-vector value is the two-sided
        # normal quantile 1.960, a separation factor of about 1.87.
        X = np.eye(12)
        canon = canonicalize(X)
        u = enumerate_universe(12, None, X)
        cfg = McConfig(seed=5, draws=30_000)
        ones = k1(canon, np.ones(12), u, INFINITE, 0.05, cfg, with_stderr=False,
                  threads=2)
        e1 = k1(canon, np.eye(12)[0], u, INFINITE, 0.05, cfg, with_stderr=False,
                threads=2)
        assert ones.value == pytest.approx(3.666, abs=0.04)
        assert ones.value >= 1.7 * e1.value


class TestEstimateContainer:
    def test_serialization_shape(self):
        est = ConstantEstimate(kind="K4", value=2.0, value_upper=2.1,
                               config=McConfig(seed=None, draws=None, grid=500,
                                               variant=BOTH),
                               model=model_from_indices([2, 3], 4))
        payload = est.to_json_dict()
        assert payload["kind"] == "K4"
        assert payload["J"] == 500
        assert payload["model"] == [2, 3]
        assert payload["I"] is None

    def test_invariants(self):
        with pytest.raises(ValueError):
            ConstantEstimate(kind="K1", value=-1.0)
        with pytest.raises(ValueError):
            ConstantEstimate(kind="K4", value=2.0, value_upper=1.0)

    def test_default_draws_rule(self):
        assert default_draws(12) == 100_000
        assert default_draws(13) == 1_000
