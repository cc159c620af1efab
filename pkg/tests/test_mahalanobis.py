import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_eigenlearn.core import FEATURES, SAMPLES, is_psd, normalize_dataset, scaled_identity_reference
from metric_eigenlearn.errors import (
    DimensionMismatch,
    LaplacianNeedsPositiveReference,
    NegativeQuadraticForm,
)
from metric_eigenlearn.mahalanobis import (
    KernelGroundMap,
    RadialKernel,
    mahalanobis_distance,
    pairwise_squared_mahalanobis,
    project_psd,
    reference_min_eigenvalue,
)

from oracles import random_psd


def _data(seed=0, m=4, n=6):
    return normalize_dataset(np.random.default_rng(seed).random((m, n)) + 0.05)


class TestDistance:
    def test_identity_is_euclidean(self):
        x, y = np.array([1.0, 2.0, 3.0]), np.array([0.0, 4.0, -1.0])
        assert mahalanobis_distance(np.eye(3), x, y) == pytest.approx(np.linalg.norm(x - y), rel=1e-15)

    def test_diagonal(self):
        assert mahalanobis_distance(np.diag([4.0, 1.0]), [1.0, 1.0], [0.0, 0.0]) == pytest.approx(math.sqrt(5))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mahalanobis_distance(np.eye(2), [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])

    def test_indefinite_raises(self):
        with pytest.raises(NegativeQuadraticForm):
            mahalanobis_distance(np.diag([1.0, -1.0]), [0.0, 1.0], [0.0, 0.0])

    def test_pairwise_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(1)
        V = rng.random((7, 3))
        Q = pairwise_squared_mahalanobis(random_psd(rng, 3), V)
        assert np.array_equal(Q, Q.T)
        assert np.all(np.diag(Q) == 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_pairwise_matches_loop(self, seed):
        rng = np.random.default_rng(seed)
        A = random_psd(rng, 3, rank=2)
        V = rng.standard_normal((5, 3))
        Q = pairwise_squared_mahalanobis(A, V)
        for i in range(5):
            for j in range(5):
                d = V[i] - V[j]
                assert Q[i, j] == pytest.approx(max(d @ A @ d, 0.0), rel=1e-9, abs=1e-12)

    def test_project_psd(self):
        A = np.diag([1.0, -1e-14])
        P = project_psd(A)
        assert np.linalg.eigvalsh(P)[0] >= 0
        with pytest.raises(NegativeQuadraticForm):
            project_psd(np.diag([1.0, -0.5]))


class TestKernels:
    def test_values_at_zero(self):
        for k in (RadialKernel.gaussian(0.3), RadialKernel.inverse_multiquadric(2.0), RadialKernel.laplacian(1.5)):
            assert k(0.0) == 1.0

    def test_gaussian_value(self):
        assert RadialKernel.gaussian(1.0)(2.0) == pytest.approx(math.exp(-2.0))

    def test_imq_value(self):
        assert RadialKernel.inverse_multiquadric(0.5)(2.0) == pytest.approx(1 / math.sqrt(2.0))

    def test_scalar_lipschitz(self):
        assert RadialKernel.gaussian(1.0).scalar_lipschitz() == 0.5
        assert RadialKernel.inverse_multiquadric(3.0).scalar_lipschitz() == 4.5
        with pytest.raises(LaplacianNeedsPositiveReference):
            RadialKernel.laplacian(1.0).scalar_lipschitz(0.0)
        assert RadialKernel.laplacian(2.0).scalar_lipschitz(4.0) == pytest.approx(1 / 8)

    @pytest.mark.parametrize("kernel", [RadialKernel.gaussian(0.7), RadialKernel.inverse_multiquadric(1.3),
                                        RadialKernel.laplacian(0.4)])
    def test_scalar_lipschitz_bounds_difference_quotients(self, kernel):
        q = 0.05
        L = kernel.scalar_lipschitz(q)
        t = np.linspace(q, 10.0, 4001)
        f = kernel.of_squared(t)
        assert np.max(np.abs(np.diff(f)) / np.diff(t)) <= L * (1 + 1e-9)

    def test_bad_param(self):
        with pytest.raises(ValueError):
            RadialKernel.gaussian(0.0)

    @pytest.mark.parametrize("kernel", [RadialKernel.gaussian(0.5), RadialKernel.inverse_multiquadric(2.0),
                                        RadialKernel.laplacian(1.0)])
    def test_gram_psd(self, kernel):
        rng = np.random.default_rng(2)
        P = rng.standard_normal((12, 3))
        D2 = ((P[:, None] - P[None]) ** 2).sum(-1)
        assert np.linalg.eigvalsh(kernel.of_squared(D2))[0] > -1e-10


class TestKernelGroundMap:
    def test_zero_input_gives_ones_plus_reference(self):
        data = _data()
        R = scaled_identity_reference(data.n, 0.1)
        F = KernelGroundMap(RadialKernel.gaussian(1.0), SAMPLES, R)
        out = F.apply(np.zeros((data.m, data.m)), data)
        assert np.allclose(out, np.ones((data.n, data.n)) + 0.1 * np.eye(data.n), rtol=0, atol=0)

    def test_two_point_value(self):
        data = normalize_dataset(np.array([[1.0, 0.0], [0.0, 1.0]]) + np.array([[1.0, 1.0], [1.0, 1.0]]))
        F = KernelGroundMap(RadialKernel.gaussian(1.0), SAMPLES)
        out = F.apply(np.eye(2), data)
        # raw samples (2, 1) and (1, 2): squared distance 2
        assert out[0, 1] == pytest.approx(math.exp(-1.0))
        assert out[0, 0] == 1.0

    def test_shapes_per_side(self):
        data = _data(m=3, n=5)
        k = RadialKernel.gaussian(1.0)
        assert KernelGroundMap(k, SAMPLES).apply(np.eye(3), data).shape == (5, 5)
        assert KernelGroundMap(k, FEATURES).apply(np.eye(5), data).shape == (3, 3)
        with pytest.raises(DimensionMismatch):
            KernelGroundMap(k, SAMPLES).apply(np.eye(5), data)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_image_eigenvalues_above_reference(self, seed):
        rng = np.random.default_rng(seed)
        data = normalize_dataset(rng.random((3, 6)) + 0.05)
        R = scaled_identity_reference(data.n, 0.05)
        F = KernelGroundMap(RadialKernel.inverse_multiquadric(1.0), SAMPLES, R)
        out = F.apply(random_psd(rng, 3), data)
        assert np.linalg.eigvalsh(out)[0] >= reference_min_eigenvalue(R) - 1e-8
        assert is_psd(out)

    def test_norm_lower_bound(self):
        data = _data()
        R = scaled_identity_reference(data.n, 0.3)
        F = KernelGroundMap(RadialKernel.gaussian(0.2), SAMPLES, R)
        rng = np.random.default_rng(3)
        for _ in range(5):
            assert np.max(np.abs(F.apply(random_psd(rng, data.m), data))) >= F.norm_lower_bound(data) - 1e-15
        assert F.norm_lower_bound(data) == pytest.approx(1.3)

    def test_budget_r(self):
        # raw samples (0, 1) and (1, 2) with an extra constant feature: l1 gap 2
        data = normalize_dataset(np.array([[0.0, 1.0], [1.0, 2.0], [1.0, 1.0]]))
        b = KernelGroundMap(RadialKernel.gaussian(1.0), SAMPLES).lipschitz_budget(data)
        assert b.r == 4.0
        assert b.L_map == 2.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_budget_bounds_observed_ratio(self, seed):
        rng = np.random.default_rng(seed)
        data = normalize_dataset(rng.random((3, 5)) + 0.05)
        F = KernelGroundMap(RadialKernel.gaussian(0.3), SAMPLES)
        A1, A2 = random_psd(rng, 3), random_psd(rng, 3)
        num = np.max(np.abs(F.apply(A1, data) - F.apply(A2, data)))
        assert num <= F.lipschitz_constant(data) * np.max(np.abs(A1 - A2)) * (1 + 1e-9)

    def test_laplacian_kernel_needs_floor(self):
        data = _data()
        F = KernelGroundMap(RadialKernel.laplacian(1.0), SAMPLES)
        assert F.lipschitz_constant(data) is None
        assert F.lipschitz_constant(data, input_floor=0.5) > 0

    def test_clamp_negative(self):
        data = _data()
        A = np.diag([1.0, -1.0, 1.0, 1.0])
        with pytest.raises(NegativeQuadraticForm):
            KernelGroundMap(RadialKernel.gaussian(1.0), SAMPLES).apply(A, data)
        out = KernelGroundMap(RadialKernel.gaussian(1.0), SAMPLES, clamp_negative=True).apply(A, data)
        assert np.all(out <= 1.0)

    def test_entries_match_full(self):
        rng = np.random.default_rng(4)
        data = _data()
        F = KernelGroundMap(RadialKernel.gaussian(0.5), SAMPLES, scaled_identity_reference(data.n, 0.01))
        A = random_psd(rng, data.m)
        full = F.apply(A, data)
        rows, cols = np.meshgrid(np.arange(data.n), np.arange(data.n), indexing="ij")
        part = F.apply_entries(A, data, rows.ravel(), cols.ravel()).reshape(data.n, data.n)
        assert np.array_equal(part, full)
