import numpy as np
import pytest

from posipred.design import (
    CanonicalDesign,
    DegenerateDesignError,
    DesignProblem,
    ModelUniverse,
    RankDeficiencyError,
    UniverseSizeError,
    canonicalize,
    count_not_subset,
    enumerate_universe,
    full_model,
    load_design_csv,
    load_universe_file,
    load_x0_csv,
    make_universe,
    model_from_indices,
    model_indices,
    model_size,
    restricted_ols,
    s_vector,
)
from posipred.numerics import INFINITE


def random_design(rng, n, p):
    return rng.standard_normal((n, p))


class TestModelBitmask:
    def test_roundtrip(self):
        m = model_from_indices([3, 1], 5)
        assert model_indices(m) == (1, 3)
        assert model_size(m) == 2

    def test_bounds(self):
        with pytest.raises(ValueError):
            model_from_indices([0], 3)
        with pytest.raises(ValueError):
            model_from_indices([4], 3)

    def test_full(self):
        assert model_indices(full_model(4)) == (1, 2, 3, 4)


class TestDesignProblem:
    def test_validation(self):
        X = np.eye(3)
        DesignProblem(X=X, x0=np.ones(3), alpha=0.05, r=INFINITE)
        with pytest.raises(ValueError):
            DesignProblem(X=X, x0=np.ones(2), alpha=0.05, r=INFINITE)
        with pytest.raises(ValueError):
            DesignProblem(X=X, x0=np.ones(3), alpha=1.5, r=INFINITE)
        bad = X.copy()
        bad[:, 1] = 0.0
        with pytest.raises(ValueError):
            DesignProblem(X=bad, x0=np.ones(3), alpha=0.05, r=INFINITE)


class TestCanonicalize:
    def test_orthonormal_columns(self):
        rng = np.random.default_rng(0)
        q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        canon = canonicalize(q)
        assert canon.d == 3
        # Transformed design is orthogonal with unit columns.
        assert np.allclose(canon.Xt.T @ canon.Xt, np.eye(3), atol=1e-10)

    def test_single_column(self):
        canon = canonicalize(np.array([[1.0], [1.0]]))
        assert canon.d == 1
        assert abs(abs(canon.Xt[0, 0]) - np.sqrt(2.0)) < 1e-12

    def test_wide_design_uses_identity_basis(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((3, 6))
        canon = canonicalize(X)
        assert canon.d == 3
        assert np.array_equal(canon.Q, np.eye(3))
        assert np.array_equal(canon.Xt, X)

    def test_invariants_random(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            X = random_design(rng, 12, 5)
            canon = canonicalize(X)
            assert np.max(np.abs(canon.Q.T @ canon.Q - np.eye(canon.d))) < 1e-10
            assert np.max(np.abs(canon.Q @ canon.Xt - X)) < 1e-8

    def test_rank_deficient_column_duplicated(self):
        rng = np.random.default_rng(3)
        X = random_design(rng, 10, 3)
        X = np.column_stack([X, X[:, 0]])
        assert canonicalize(X).d == 3

    def test_zero_column_rejected(self):
        X = np.eye(3)
        X[:, 2] = 0.0
        with pytest.raises(ValueError):
            canonicalize(X)

    def test_ambiguous_rank_raises(self):
        eps = np.finfo(float).eps
        thr = 2 * eps  # max(n, p) * eps * s_max with s_max = 1, n = p = 2
        X = np.diag([1.0, 1.2 * thr])
        with pytest.raises(DegenerateDesignError):
            canonicalize(X)


class TestUniverse:
    def test_power_set_p2(self):
        X = np.eye(2)
        u = enumerate_universe(2, None, X)
        assert len(u) == 4
        assert 0 in u.models

    def test_size_capped(self):
        X = np.eye(3)
        u = enumerate_universe(3, 1, X)
        assert sorted(u.models) == [0, 1, 2, 4]

    def test_power_set_p10_counts(self):
        X = np.eye(10)
        u = enumerate_universe(10, None, X)
        assert len(u) == 1024
        assert count_not_subset(0, u) == 1023

    def test_budget_error(self):
        X = np.eye(23)
        with pytest.raises(UniverseSizeError):
            enumerate_universe(23, None, X)

    def test_generated_path_drops_rank_deficient(self):
        X = np.column_stack([np.ones(4), np.ones(4), np.arange(4.0)])
        with pytest.warns(UserWarning):
            u = enumerate_universe(3, None, X)
        # {1,2} and {1,2,3} are rank deficient.
        assert u.dropped_rank_deficient == 2
        assert len(u) == 6

    def test_user_path_rejects_rank_deficient(self):
        X = np.column_stack([np.ones(4), np.ones(4)])
        with pytest.raises(RankDeficiencyError):
            make_universe([0, 1, 2, 3], 2, X)

    def test_empty_model_required(self):
        X = np.eye(2)
        with pytest.raises(ValueError):
            make_universe([1, 2, 3], 2, X)

    def test_union_must_cover_all_columns(self):
        X = np.eye(3)
        with pytest.raises(ValueError):
            make_universe([0, 1, 2, 3], 3, X)

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            ModelUniverse(models=(0, 1, 1, 2, 3), p=2)

    def test_count_not_subset(self):
        X = np.eye(2)
        u = enumerate_universe(2, None, X)
        assert count_not_subset(full_model(2), u) == 0
        assert count_not_subset(0, u) == 3
        assert count_not_subset(model_from_indices([1], 2), u) == 2
        capped = enumerate_universe(2, 1, X)
        with pytest.raises(ValueError):
            count_not_subset(full_model(2), capped)


class TestSVector:
    def test_empty_model(self):
        canon = canonicalize(np.eye(3))
        sb = s_vector(canon, np.ones(3), 0)
        assert sb.norm == 0.0
        assert np.all(sb.s_bar == 0.0)

    def test_inactive_query_coordinate(self):
        rng = np.random.default_rng(4)
        canon = canonicalize(random_design(rng, 9, 4))
        e3 = np.zeros(4)
        e3[2] = 1.0
        sb = s_vector(canon, e3, model_from_indices([1, 2], 4))
        assert sb.norm == 0.0

    def test_orthonormal_full_model(self):
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.standard_normal((7, 3)))
        canon = canonicalize(q)
        e1 = np.zeros(3)
        e1[0] = 1.0
        sb = s_vector(canon, e1, full_model(3))
        assert sb.norm == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(sb.s_tilde, canon.Xt[:, 0], atol=1e-10)

    def test_norm_matches_original_coordinates(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            X = random_design(rng, 11, 4)
            x0 = rng.standard_normal(4)
            canon = canonicalize(X)
            m = model_from_indices([1, 3], 4)
            cols = [0, 2]
            s_orig = np.linalg.solve(X[:, cols].T @ X[:, cols], x0[cols]) @ X[:, cols].T
            assert s_vector(canon, x0, m).norm == pytest.approx(
                float(np.linalg.norm(s_orig)), abs=1e-8)

    def test_nested_norm_monotone(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = int(rng.integers(2, 6))
            X = random_design(rng, p + 6, p)
            x0 = rng.standard_normal(p)
            canon = canonicalize(X)
            small = int(rng.integers(1, 1 << p))
            extra = int(rng.integers(0, 1 << p))
            big = small | extra
            n_small = s_vector(canon, x0, small).norm
            n_big = s_vector(canon, x0, big).norm
            assert n_small <= n_big + 1e-10

    def test_functional_identity_in_canonical_coordinates(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            X = random_design(rng, 10, 3)
            x0 = rng.standard_normal(3)
            mu = rng.standard_normal(10)
            y = mu + rng.standard_normal(10)
            canon = canonicalize(X)
            m = model_from_indices([1, 2], 3)
            cols = [0, 1]
            s_orig = np.linalg.solve(X[:, cols].T @ X[:, cols], x0[cols]) @ X[:, cols].T
            lhs = s_vector(canon, x0, m).s_tilde @ (canon.Q.T @ (y - mu))
            assert lhs == pytest.approx(float(s_orig @ (y - mu)), abs=1e-8)


class TestRestrictedOls:
    def test_empty_model(self):
        beta = restricted_ols(np.eye(3), np.ones(3), 0)
        assert beta.size == 0
        assert float(np.zeros(0) @ beta) == 0.0

    def test_exact_fit(self):
        rng = np.random.default_rng(9)
        X = random_design(rng, 8, 3)
        gamma = np.array([1.5, -2.0])
        m = model_from_indices([1, 3], 3)
        y = X[:, [0, 2]] @ gamma
        assert np.allclose(restricted_ols(X, y, m), gamma, atol=1e-10)

    def test_orthonormal_gram(self):
        rng = np.random.default_rng(10)
        q, _ = np.linalg.qr(rng.standard_normal((9, 4)))
        y = rng.standard_normal(9)
        m = model_from_indices([2, 4], 4)
        assert np.allclose(restricted_ols(q, y, m), q[:, [1, 3]].T @ y, atol=1e-10)

    def test_rank_deficient_uses_pseudoinverse(self):
        X = np.column_stack([np.ones(5), np.ones(5)])
        y = np.arange(5.0)
        beta = restricted_ols(X, y, full_model(2))
        expected = np.linalg.pinv(X) @ y
        assert np.allclose(beta, expected, atol=1e-10)


class TestFileFormats:
    def test_design_roundtrip(self, tmp_path):
        X = np.arange(12.0).reshape(4, 3) + 0.25
        path = tmp_path / "X.csv"
        np.savetxt(path, X, delimiter=",", fmt="%.17g")
        assert np.array_equal(load_design_csv(path), X)

    def test_x0_single_row(self, tmp_path):
        path = tmp_path / "x0.csv"
        path.write_text("1.5,2.5,3.5\n")
        assert np.array_equal(load_x0_csv(path), np.array([1.5, 2.5, 3.5]))
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\n3,4\n")
        with pytest.raises(ValueError):
            load_x0_csv(bad)

    def test_header_skip(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("a,b\n1,2\n3,4\n")
        assert load_design_csv(path, header=True).shape == (2, 2)

    def test_universe_file(self, tmp_path):
        path = tmp_path / "u.txt"
        path.write_text("\n1\n2\n1,2\n")
        u = load_universe_file(path, 2, np.eye(2))
        assert sorted(u.models) == [0, 1, 2, 3]

    def test_universe_file_strict_rank(self, tmp_path):
        path = tmp_path / "u.txt"
        path.write_text("\n1\n2\n1,2\n")
        X = np.column_stack([np.ones(4), np.ones(4)])
        with pytest.raises(RankDeficiencyError):
            load_universe_file(path, 2, X)
