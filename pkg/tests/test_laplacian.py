import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_eigenlearn.core import FEATURES, SAMPLES, normalize_dataset
from metric_eigenlearn.errors import NegativeWeight, NonConvergence, NotGeneric
from metric_eigenlearn.laplacian import (
    LaplacianGroundMap,
    assemble_perron_matrix,
    basis_laplacian,
    composed_map_matrix,
    genericity_check,
    lowertri_index,
    lowertri_pairs,
    lowertri_size,
    lowertri_vector,
    perron_matrix,
    power_iteration,
    reconstruct_ground_matrix,
    solve_laplacian,
)

from oracles import random_psd


def _data(seed=0, m=4, n=6):
    return normalize_dataset(np.random.default_rng(seed).random((m, n)) + 0.05)


class TestIndexing:
    def test_sizes(self):
        assert [lowertri_size(m) for m in (1, 2, 3, 5)] == [0, 1, 3, 10]

    def test_index_matches_pairs(self):
        p, q = lowertri_pairs(6)
        assert [lowertri_index(int(a), int(b)) for a, b in zip(p, q)] == list(range(15))

    def test_bad_pair(self):
        with pytest.raises(ValueError):
            lowertri_index(1, 1)

    def test_vector_round_trip(self):
        v = np.arange(1.0, 7.0)
        A = reconstruct_ground_matrix(v, 4)
        assert np.array_equal(-lowertri_vector(A), v)


class TestMap:
    def test_zero_input(self):
        data = _data()
        assert np.array_equal(LaplacianGroundMap().apply(np.zeros((4, 4)), data), np.zeros((6, 6)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_row_sums_and_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        data = normalize_dataset(rng.random((3, 5)) + 0.05)
        L = LaplacianGroundMap().apply(random_psd(rng, 3), data)
        assert np.array_equal(L, L.T)
        assert np.max(np.abs(L.sum(axis=1))) <= 1e-12 * np.max(np.abs(L))
        assert np.all(L[~np.eye(5, dtype=bool)] <= 0)

    def test_two_samples(self):
        data = normalize_dataset(np.array([[1.0, 3.0], [2.0, 2.0]]))
        L = LaplacianGroundMap().apply(np.eye(2), data)
        w = (1.0 - 3.0) ** 2 + (2.0 - 2.0) ** 2
        assert np.array_equal(L, w * np.array([[1.0, -1.0], [-1.0, 1.0]]))

    def test_linear(self):
        rng = np.random.default_rng(1)
        data = _data()
        F = LaplacianGroundMap()
        A1, A2 = random_psd(rng, 4), random_psd(rng, 4)
        assert np.allclose(F.apply(2 * A1 + 3 * A2, data), 2 * F.apply(A1, data) + 3 * F.apply(A2, data),
                           rtol=1e-12, atol=1e-12)

    def test_negative_weight(self):
        with pytest.raises(NegativeWeight):
            LaplacianGroundMap().apply(np.diag([1.0, -1.0, 1.0, 1.0]), _data())

    def test_lipschitz_bound(self):
        rng = np.random.default_rng(2)
        data = _data()
        F = LaplacianGroundMap()
        for _ in range(10):
            A = random_psd(rng, 4)
            assert np.max(np.abs(F.apply(A, data))) <= F.lipschitz_constant(data) * np.max(np.abs(A)) * (1 + 1e-12)

    def test_basis_laplacian(self):
        E = basis_laplacian(3, 2, 0)
        assert np.array_equal(E, [[1, 0, -1], [0, 0, 0], [-1, 0, 1]])


class TestPerron:
    def test_closed_form_matches_composition(self):
        data = _data(seed=3, m=5, n=7)
        H = perron_matrix(data)
        assert np.allclose(H, composed_map_matrix(data), rtol=1e-10, atol=0)
        assert np.min(H) > 0

    def test_m2_is_scalar(self):
        data = _data(m=2, n=5)
        sys = assemble_perron_matrix(data)
        assert sys.size == 1 and sys.strict_positivity

    def test_identical_feature_rows_not_generic(self):
        X = np.random.default_rng(4).random((3, 5)) + 0.05
        X[2] = X[1]
        data = normalize_dataset(X, dedup=False)
        v = genericity_check(data)
        assert not v and v.kind == "P1"
        with pytest.raises(NotGeneric):
            solve_laplacian(data)

    def test_shifted_samples_not_generic(self):
        X = np.random.default_rng(5).random((3, 5)) + 0.05
        X[:, 3] = X[:, 0] + 0.25
        v = genericity_check(normalize_dataset(X))
        assert not v and v.kind == "P2" and v.witness == (3, 0)

    def test_generic_random(self):
        v = genericity_check(_data())
        assert v and np.isfinite(v.log_p1) and np.isfinite(v.log_p2)


class TestPowerIteration:
    def test_constant_matrix(self):
        res = power_iteration(2.0 * np.ones((4, 4)))
        assert res.eigenvalue == pytest.approx(8.0)
        assert np.allclose(res.eigenvector, 1.0)

    def test_two_by_two(self):
        res = power_iteration(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert res.eigenvalue == pytest.approx(3.0, rel=1e-12)
        assert np.allclose(res.eigenvector, [1.0, 1.0])

    def test_nonconvergence(self):
        with pytest.raises(NonConvergence):
            power_iteration(np.array([[1.0, 0.5], [0.5, 1.001]]), tol=1e-30, max_iters=5)

    def test_rate_follows_gap(self):
        rng = np.random.default_rng(6)
        H = rng.random((6, 6)) + 0.1
        lam = np.sort(np.abs(np.linalg.eigvals(H)))[::-1]
        res = power_iteration(H, tol=1e-13)
        h = np.array(res.history)
        mid = h[2: max(3, len(h) - 2)]
        factor = np.exp(np.mean(np.log(mid[1:] / mid[:-1])))
        ratio = lam[1] / lam[0]
        assert ratio / 2 <= factor <= ratio * 2


class TestSolve:
    def test_fixed_point(self):
        data = _data(seed=7, m=4, n=6)
        res = solve_laplacian(data, split=0.3)
        F, G = LaplacianGroundMap(SAMPLES), LaplacianGroundMap(FEATURES)
        assert np.allclose(res.B, F.apply(res.A, data) / res.lambda_f, rtol=0, atol=1e-12 * np.max(np.abs(res.B)))
        assert np.allclose(res.A, G.apply(res.B, data) / res.lambda_g, rtol=0, atol=1e-10)
        assert res.lambda_f * res.lambda_g == pytest.approx(res.eigenvalue)
        assert res.eigen_residual < 1e-10
        assert res.metric.ok

    def test_m2_reconstruction(self):
        data = _data(seed=8, m=2, n=4)
        res = solve_laplacian(data)
        assert np.array_equal(res.A, np.array([[1.0, -1.0], [-1.0, 1.0]]))

    def test_bad_split(self):
        with pytest.raises(ValueError):
            solve_laplacian(_data(), split=1.0)
