import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_eigenlearn.core import SAMPLES, normalize_dataset
from metric_eigenlearn.errors import DegenerateClusters, DimensionMismatch, SingleClass
from metric_eigenlearn.evaluation import (
    LabeledDistances,
    asw,
    dunn_index,
    euclidean_baseline,
    silhouette_samples,
)
from metric_eigenlearn.mahalanobis import pairwise_squared_mahalanobis

from oracles import asw_loop, dunn_loop, silhouette_loop


def _line(points):
    p = np.asarray(points, dtype=float)
    return np.abs(p[:, None] - p[None, :])


class TestSilhouette:
    def test_well_separated(self):
        D = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]], dtype=float)
        assert asw(D, [0, 0, 1, 1]) == 1.0

    def test_swapped_labels_negative(self):
        D = _line([0.0, 0.1, 5.0, 5.1])
        assert asw(D, [0, 1, 0, 1]) < 0

    def test_singleton_scores_zero(self):
        D = _line([0.0, 1.0, 1.5])
        s = silhouette_samples(D, [0, 1, 1])
        assert s[0] == 0.0

    def test_single_class(self):
        with pytest.raises(SingleClass):
            asw(_line([0.0, 1.0]), [3, 3])

    def test_label_mismatch(self):
        with pytest.raises(DimensionMismatch):
            asw(_line([0.0, 1.0, 2.0]), [0, 1])

    def test_labeled_container(self):
        ld = LabeledDistances(_line([0.0, 1.0, 5.0]), ["a", "a", "b"])
        assert ld.class_sizes == {"a": 2, "b": 1}
        assert asw(ld) == asw(ld.D, ld.labels)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 4))
    def test_matches_loop_oracle(self, seed, k):
        rng = np.random.default_rng(seed)
        P = rng.random((12, 2))
        D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
        labels = np.arange(12) % k
        rng.shuffle(labels)
        assert np.allclose(silhouette_samples(D, labels), silhouette_loop(D, labels), rtol=0, atol=1e-14)
        assert asw(D, labels) == pytest.approx(asw_loop(D, labels), abs=1e-14)
        assert -1.0 <= asw(D, labels) <= 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        D = _line(rng.random(9))
        labels = [0, 0, 0, 1, 1, 1, 2, 2, 2]
        assert asw(c * D, labels) == pytest.approx(asw(D, labels), abs=1e-12)


class TestDunn:
    def test_half(self):
        # within-class spread 2, gap 1
        D = _line([0.0, 2.0, 3.0, 5.0])
        assert dunn_index(D, [0, 0, 1, 1]) == 0.5

    def test_degenerate(self):
        D = np.array([[0, 0, 1], [0, 0, 1], [1, 1, 0]], dtype=float)
        with pytest.warns(DegenerateClusters):
            assert dunn_index(D, [0, 0, 1]) == math.inf

    def test_single_class(self):
        with pytest.raises(SingleClass):
            dunn_index(_line([0.0, 1.0]), [0, 0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        D = _line(rng.random(10))
        labels = [0, 1] * 5
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert dunn_index(D, labels) == dunn_loop(D, labels)


class TestBaseline:
    def test_three_four_five(self):
        # samples are columns: (0, 0) and (3, 4)
        data = normalize_dataset(np.array([[1.0, 4.0], [1.0, 5.0]]), dedup=False)
        D = euclidean_baseline(data)
        assert D[0, 1] == 5.0 and D[1, 0] == 5.0 and D[0, 0] == 0.0

    def test_equals_identity_mahalanobis(self):
        rng = np.random.default_rng(3)
        data = normalize_dataset(rng.random((4, 7)) + 0.05)
        D = euclidean_baseline(data)
        M = np.sqrt(pairwise_squared_mahalanobis(np.eye(4), data.vectors(SAMPLES, normalized=False)))
        assert np.allclose(D, M, rtol=1e-14, atol=0)

    def test_feature_side(self):
        data = normalize_dataset(np.random.default_rng(4).random((3, 5)) + 0.05)
        assert euclidean_baseline(data, "features").shape == (3, 3)
