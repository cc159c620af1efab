import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_eigenlearn.data import (
    Shape,
    SyntheticSpec,
    generate_synthetic,
    histogram_profile,
    load_csv,
    read_matrix_csv,
    synthetic_matrix,
    torus_reduce,
    write_matrix_csv,
)
from metric_eigenlearn.core import normalize_dataset
from metric_eigenlearn.errors import NegativeEntries, ParseError


class TestTorus:
    @pytest.mark.parametrize("x,expected", [(0.75, -0.25), (-0.75, 0.25), (0.2, 0.2), (3.1, 0.1),
                                            (0.5, 0.5), (-0.5, -0.5)])
    def test_reduce(self, x, expected):
        assert torus_reduce(x) == pytest.approx(expected, abs=1e-15)

    @settings(max_examples=100)
    @given(st.floats(-50, 50))
    def test_range_and_period(self, x):
        r = torus_reduce(x)
        assert -0.5 <= r <= 0.5
        assert torus_reduce(x + 1.0) == pytest.approx(r, abs=1e-12) or abs(abs(r) - 0.5) < 1e-12


class TestSynthetic:
    def test_circulant_when_square(self):
        X = synthetic_matrix(SyntheticSpec(8, 8, "h1", peak_width=20.0))
        assert np.allclose(np.roll(np.roll(X, 1, axis=0), 1, axis=1), X, rtol=0, atol=1e-15)

    def test_peak_band(self):
        n, m = 40, 32
        X = synthetic_matrix(SyntheticSpec(n, m))
        for i in range(n):
            assert int(np.argmax(X[i])) == (round((i + 1) * m / n) - 1) % m

    def test_profile_peaks(self):
        assert histogram_profile(0.0, "h1") == 1.0
        assert histogram_profile(-1.0 / 3.0, "h3") == pytest.approx(0.5, rel=1e-6)
        assert histogram_profile(0.5, "h2") == pytest.approx(0.5, rel=1e-6)
        assert histogram_profile(0.25, "h1") < 1e-10

    def test_dataset_orientation(self):
        spec = SyntheticSpec(6, 4, Shape.H2, peak_width=10.0)
        d = generate_synthetic(spec)
        assert (d.m, d.n) == (4, 6)
        assert np.array_equal(d.raw, synthetic_matrix(spec).T)

    def test_shape_parsing(self):
        assert SyntheticSpec(3, 3, "H3").shape is Shape.H3
        with pytest.raises(ValueError):
            SyntheticSpec(3, 3, "h9")
        with pytest.raises(ValueError):
            SyntheticSpec(1, 3)
        with pytest.raises(ValueError):
            SyntheticSpec(3, 3, peak_width=0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(-20, 20))
    def test_power_of_two_scaling_is_exact(self, k):
        X = synthetic_matrix(SyntheticSpec(6, 5, peak_width=5.0))
        a, b = normalize_dataset(X), normalize_dataset(math.ldexp(1.0, k) * X)
        assert np.array_equal(a.col_normalized, b.col_normalized)
        assert np.array_equal(a.row_normalized, b.row_normalized)


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        M = np.random.default_rng(0).standard_normal((5, 4)) * 1e3
        p = tmp_path / "m.csv"
        write_matrix_csv(p, M)
        assert np.array_equal(read_matrix_csv(p), M)

    def test_header(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("a,b\n1,2\n3,4\n")
        assert np.array_equal(read_matrix_csv(p), [[1.0, 2.0], [3.0, 4.0]])

    def test_bad_token_location(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3,x\n")
        with pytest.raises(ParseError) as info:
            read_matrix_csv(p)
        assert (info.value.row, info.value.column, info.value.token) == (2, 2, "x")

    def test_ragged(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(ParseError) as info:
            read_matrix_csv(p)
        assert info.value.row == 2

    def test_non_finite(self, tmp_path):
        p = tmp_path / "n.csv"
        p.write_text("1,nan\n3,4\n")
        with pytest.raises(ParseError):
            read_matrix_csv(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("\n")
        with pytest.raises(ParseError):
            read_matrix_csv(p)

    def test_negative_needs_transform(self, tmp_path):
        p = tmp_path / "neg.csv"
        p.write_text("-1,0\n2,1\n")
        with pytest.raises(NegativeEntries):
            load_csv(p)
        d = load_csv(p, exp_transform=True)
        assert d.raw[0, 0] == math.exp(-1.0)

    def test_transpose(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1,2,3\n4,5,7\n")
        assert load_csv(p, transpose=True).raw.shape == (3, 2)
