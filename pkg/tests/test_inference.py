import numpy as np
import pytest

from posipred.constants import ConstantEstimate
from posipred.design import full_model, model_from_indices, restricted_ols
from posipred.inference import (
    DESIGN_DEPENDENT,
    DESIGN_INDEPENDENT,
    PredictionInterval,
    TargetSpec,
    beta_target_n,
    beta_target_star,
    build_interval,
    covers,
)


class TestDesignDependentTarget:
    def test_full_model_recovers_beta(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((12, 4))
        beta = rng.standard_normal(4)
        out = beta_target_n(X, X @ beta, full_model(4))
        assert np.allclose(out, beta, atol=1e-10)

    def test_empty_model(self):
        out = beta_target_n(np.eye(3), np.ones(3), 0)
        assert out.size == 0

    def test_omitted_variable_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            X = rng.standard_normal((15, 5))
            beta = rng.standard_normal(5)
            m = model_from_indices([1, 4], 5)
            cols, comp = [0, 3], [1, 2, 4]
            target = beta_target_n(X, X @ beta, m)
            xm = X[:, cols]
            adj = np.linalg.solve(xm.T @ xm, xm.T @ X[:, comp] @ beta[comp])
            assert np.allclose(target, beta[cols] + adj, atol=1e-8)


class TestDesignIndependentTarget:
    def test_full_model(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 4))
        sigma = a @ a.T + np.eye(4)
        beta = rng.standard_normal(4)
        assert np.allclose(beta_target_star(sigma, beta, full_model(4)), beta)

    def test_empty_model(self):
        assert beta_target_star(np.eye(3), np.ones(3), 0).size == 0

    def test_diagonal_second_moments(self):
        beta = np.array([1.0, -2.0, 3.0])
        out = beta_target_star(np.diag([2.0, 3.0, 4.0]), beta,
                               model_from_indices([1, 3], 3))
        assert np.allclose(out, beta[[0, 2]])

    def test_singular_block_raises(self):
        sigma = np.ones((2, 2))
        with pytest.raises(ValueError):
            beta_target_star(sigma, np.ones(2), model_from_indices([1, 2], 2))

    def test_matches_design_dependent_when_moments_agree(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            X = rng.standard_normal((20, 4))
            sigma = X.T @ X / 20
            beta = rng.standard_normal(4)
            m = model_from_indices([2, 3], 4)
            a = beta_target_n(X, X @ beta, m)
            b = beta_target_star(sigma, beta, m)
            assert np.allclose(a, b, atol=1e-8)


class TestTargetSpec:
    def test_design_independent_needs_inputs(self):
        with pytest.raises(ValueError):
            TargetSpec(kind=DESIGN_INDEPENDENT, beta=np.ones(2))

    def test_positive_definite_required(self):
        with pytest.raises(ValueError):
            TargetSpec(kind=DESIGN_INDEPENDENT, beta=np.ones(2),
                       sigma_mat=np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_symmetry_required(self):
        with pytest.raises(ValueError):
            TargetSpec(kind=DESIGN_INDEPENDENT, beta=np.ones(2),
                       sigma_mat=np.array([[1.0, 0.5], [0.1, 1.0]]))

    def test_design_dependent_minimal(self):
        spec = TargetSpec(kind=DESIGN_DEPENDENT)
        assert spec.kind == DESIGN_DEPENDENT


def _k(value, kind="K1"):
    return ConstantEstimate(kind=kind, value=value)


class TestBuildInterval:
    def test_empty_model_degenerates(self):
        iv = build_interval(np.ones(3), 0, np.zeros(0), _k(2.0), 0.0, 1.0)
        assert iv.center == 0.0 and iv.half_width == 0.0
        assert covers(iv, 0.0)

    def test_zero_constant_point_interval(self):
        iv = build_interval(np.ones(2), model_from_indices([1], 2),
                            np.asarray([1.5]), _k(0.0), 0.7, 1.2)
        assert iv.half_width == 0.0
        assert iv.center == pytest.approx(1.5)

    def test_arithmetic_example(self):
        x0 = np.zeros(3)
        x0[0] = 1.0
        iv = build_interval(x0, model_from_indices([1], 3), np.asarray([2.5]),
                            _k(2.0), 0.4, 1.0)
        assert iv.center == pytest.approx(2.5)
        assert iv.half_width == pytest.approx(0.8)
        assert covers(iv, 1.7) and covers(iv, 3.3)
        assert not covers(iv, 1.6999) and not covers(iv, 3.3001)

    def test_center_uses_active_coordinates(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((10, 4))
        y = rng.standard_normal(10)
        m = model_from_indices([2, 4], 4)
        beta = restricted_ols(X, y, m)
        x0 = rng.standard_normal(4)
        iv = build_interval(x0, m, beta, _k(1.0), 0.5, 2.0)
        assert iv.center == pytest.approx(float(x0[[1, 3]] @ beta))
        assert iv.half_width == pytest.approx(1.0)

    def test_json_payload(self):
        iv = build_interval(np.ones(2), model_from_indices([2], 2),
                            np.asarray([3.0]), _k(1.5, kind="K5"), 1.0, 1.0)
        payload = iv.to_json_dict()
        assert payload["model"] == [2]
        assert payload["constant_kind"] == "K5"


class TestCovers:
    def test_degenerate_zero(self):
        iv = PredictionInterval(center=0.0, half_width=0.0, model=0,
                                constant_kind="NAIVE")
        assert covers(iv, 0.0)
        assert not covers(iv, 1e-12)

    def test_boundary_inclusive(self):
        iv = PredictionInterval(center=1.0, half_width=0.5,
                                model=model_from_indices([1], 1),
                                constant_kind="K1")
        assert covers(iv, 1.5)
        assert not covers(iv, 1.6)

    def test_empty_model_invariant(self):
        with pytest.raises(ValueError):
            PredictionInterval(center=1.0, half_width=0.0, model=0,
                               constant_kind="K1")
