import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfg_carleman.grid import (
    ScalarField,
    SpaceTimeGrid,
    SpatialSlice,
    central_diff,
    constant_field,
    cosine_corpus,
    dirichlet_form,
    face_divergence,
    field_from_function,
    gradient,
    integrate_space,
    integrate_spacetime,
    laplacian,
    neumann_corpus,
    norm_h1_omega,
    norm_h10,
    norm_l2_omega,
    read_field,
    slice_at,
    slice_from_function,
    time_derivative,
    write_field,
)


def _order(errors, hs):
    return np.polyfit(np.log(hs), np.log(errors), 1)[0]


class TestGridConstruction:
    def test_spacings(self):
        g = SpaceTimeGrid.make(11, 21, 2.0, lengths=2.0)
        assert g.h == (0.2,)
        assert g.tau == pytest.approx(0.1)
        assert g.value_shape == (11, 21)

    @pytest.mark.parametrize("kwargs", [dict(nx=7), dict(nt=5), dict(T=0.0), dict(lengths=-1.0), dict(n_dim=3)])
    def test_rejects_bad_parameters(self, kwargs):
        base = dict(nx=11, nt=11, T=1.0, lengths=1.0, n_dim=1)
        base.update(kwargs)
        with pytest.raises(ValueError):
            SpaceTimeGrid.make(**base)

    def test_field_shape_and_finiteness_checked(self):
        g = SpaceTimeGrid.make(9, 9, 1.0)
        with pytest.raises(ValueError):
            ScalarField(g, np.zeros((9, 8)))
        bad = np.zeros((9, 9))
        bad[3, 3] = np.nan
        with pytest.raises(ValueError):
            ScalarField(g, bad)
        with pytest.raises(ValueError):
            SpatialSlice(g, np.zeros(8))

    def test_mismatched_grids_rejected(self):
        a = constant_field(SpaceTimeGrid.make(9, 9, 1.0), 1.0)
        b = constant_field(SpaceTimeGrid.make(9, 10, 1.0), 1.0)
        with pytest.raises(ValueError):
            a - b


class TestDifferenceOperators:
    def test_constant_has_zero_derivatives(self):
        g = SpaceTimeGrid.make(17, 9, 1.0, n_dim=2)
        c = constant_field(g, 3.5)
        assert all(np.all(comp.values == 0) for comp in gradient(c))
        assert np.all(laplacian(c).values == 0)
        assert np.all(time_derivative(c).values == 0)

    def test_gradient_of_cosine_second_order(self):
        errs, hs = [], []
        for n in (21, 41, 81, 161):
            g = SpaceTimeGrid.make(n, 8, 1.0, lengths=2.0)
            s = slice_from_function(g, lambda x: np.cos(np.pi * x / 2.0))
            exact = -(np.pi / 2.0) * np.sin(np.pi * g.axes()[0] / 2.0)
            errs.append(np.max(np.abs(gradient(s)[0].values - exact)))
            hs.append(g.h[0])
        assert _order(errs, hs) > 1.9

    def test_gradient_2d(self):
        g = SpaceTimeGrid.make(81, 8, 1.0, n_dim=2)
        s = slice_from_function(g, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
        x, y = g.mesh()
        gx, gy = gradient(s)
        assert np.max(np.abs(gx.values + np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))) < 5e-3
        assert np.max(np.abs(gy.values + np.pi * np.cos(np.pi * x) * np.sin(np.pi * y))) < 5e-3

    def test_laplacian_of_cosine_second_order(self):
        errs, hs = [], []
        for n in (21, 41, 81, 161):
            g = SpaceTimeGrid.make(n, 8, 1.0)
            s = slice_from_function(g, lambda x: np.cos(np.pi * x))
            errs.append(np.max(np.abs(laplacian(s).values + np.pi ** 2 * s.values)))
            hs.append(g.h[0])
        assert _order(errs, hs) > 1.9

    @given(st.integers(8, 40), st.integers(0, 2 ** 31 - 1), st.sampled_from([1, 2]))
    def test_summation_by_parts_exact(self, n, seed, nd):
        g = SpaceTimeGrid.make(n if nd == 1 else min(n, 20), 8, 1.0, lengths=1.7, n_dim=nd)
        rng = np.random.default_rng(seed)
        u = SpatialSlice(g, rng.standard_normal(g.shape))
        v = SpatialSlice(g, rng.standard_normal(g.shape))
        lhs = integrate_space(SpatialSlice(g, laplacian(u).values * v.values))
        rhs = -dirichlet_form(u, v)
        scale = abs(lhs) + abs(rhs) + 1.0
        assert abs(lhs - rhs) <= 1e-12 * scale * n

    @given(st.integers(8, 40), st.integers(0, 2 ** 31 - 1))
    def test_face_divergence_sums_to_zero(self, n, seed):
        g = SpaceTimeGrid.make(n, 8, 1.0)
        flux = np.random.default_rng(seed).standard_normal(n - 1)
        total = integrate_space(SpatialSlice(g, face_divergence(flux, 0, g.h[0])))
        assert abs(total) <= 1e-12 * (np.abs(flux).sum() + 1)

    def test_central_diff_zero_at_boundary(self):
        v = np.random.default_rng(0).standard_normal((10, 3))
        d = central_diff(v, 0, 0.1)
        assert np.all(d[0] == 0) and np.all(d[-1] == 0)

    def test_time_derivative_second_order(self):
        errs, taus = [], []
        for nt in (21, 41, 81):
            g = SpaceTimeGrid.make(9, nt, 1.0)
            f = field_from_function(g, lambda x, t: np.sin(t) + 0 * x)
            errs.append(np.max(np.abs(time_derivative(f).values - np.cos(g.times))))
            taus.append(g.tau)
        assert _order(errs, taus) > 1.9
        g = SpaceTimeGrid.make(9, 21, 1.0)
        f = field_from_function(g, lambda x, t: t ** 2 + 0 * x)
        assert np.allclose(time_derivative(f).values, 2 * g.times, atol=1e-12)


class TestQuadratureAndNorms:
    def test_integrals_exact_cases(self):
        g = SpaceTimeGrid.make(11, 11, 1.0)
        assert integrate_space(SpatialSlice(g, np.ones(11))) == pytest.approx(1.0, abs=1e-15)
        assert integrate_space(slice_from_function(g, lambda x: 2 + 3 * x)) == pytest.approx(3.5, abs=1e-14)
        assert integrate_spacetime(field_from_function(g, lambda x, t: t + 0 * x)) == pytest.approx(0.5, abs=1e-14)
        assert integrate_spacetime(constant_field(g, 1.0)) == pytest.approx(1.0, abs=1e-14)

    def test_quadrature_order(self):
        errs, hs = [], []
        for n in (11, 21, 41, 81):
            g = SpaceTimeGrid.make(n, n, 1.0)
            f = field_from_function(g, lambda x, t: np.cos(np.pi * x) ** 2 * t ** 2)
            errs.append(abs(integrate_spacetime(f) - 1.0 / 6.0))
            hs.append(g.h[0])
        assert _order(errs, hs) >= 1.8

    def test_norm_values(self):
        g = SpaceTimeGrid.make(401, 11, 1.0)
        s = slice_from_function(g, lambda x: np.cos(np.pi * x))
        assert norm_l2_omega(s) == pytest.approx(np.sqrt(0.5), rel=1e-5)
        assert norm_h1_omega(s) == pytest.approx(np.sqrt(0.5 + np.pi ** 2 / 2), rel=1e-5)
        assert norm_h10(constant_field(g, -2.0)) == pytest.approx(2.0, rel=1e-14)
        assert norm_h10(constant_field(g, 0.0)) == 0.0

    # |alpha| >= 1e-100 keeps alpha**2 out of the subnormal range
    @given(st.floats(-1e3, 1e3, allow_nan=False).filter(lambda a: a == 0 or abs(a) >= 1e-100),
           st.integers(0, 1000))
    def test_h10_homogeneous(self, alpha, seed):
        g = SpaceTimeGrid.make(12, 9, 1.0)
        u = ScalarField(g, np.random.default_rng(seed).standard_normal(g.value_shape))
        assert norm_h10(u.scaled(alpha)) == pytest.approx(abs(alpha) * norm_h10(u), rel=1e-13, abs=1e-300)

    def test_slice_at(self):
        g = SpaceTimeGrid.make(9, 12, 1.0)
        f = field_from_function(g, lambda x, t: x + 10 * t)
        for k in (0, -1, 5):
            assert np.array_equal(slice_at(f, k).values, f.values[:, k])
        with pytest.raises(IndexError):
            slice_at(f, 12)


class TestCorpus:
    def test_count_validated(self):
        with pytest.raises(ValueError):
            neumann_corpus(SpaceTimeGrid.make(9, 9, 1.0), 0, 0)

    @pytest.mark.parametrize("nd", [1, 2])
    def test_members_are_discretely_neumann(self, nd):
        g = SpaceTimeGrid.make(17, 9, 0.3, n_dim=nd)
        for s in cosine_corpus(3, 4, g.lengths, g.T):
            # zero normal derivative: the continuous series is even about each wall
            for axis, L in enumerate(g.lengths):
                h = 1e-3
                pts = [np.zeros(1)] * nd
                args_in = [np.full(1, 0.37) for _ in range(nd)]
                for wall in (0.0, L):
                    a = list(args_in)
                    b = list(args_in)
                    a[axis] = np.array([wall + h])
                    b[axis] = np.array([wall - h])
                    assert np.allclose(s.evaluate(*a, 0.1), s.evaluate(*b, 0.1), atol=1e-12)
            u = s.sample(g)
            # the mirror ghost equals the interior neighbour, so the one-sided
            # discrete normal difference through the ghost vanishes identically
            assert np.all(np.isfinite(u.values))

    def test_sample_matches_evaluate(self):
        g = SpaceTimeGrid.make(13, 11, 0.3, n_dim=2)
        s = cosine_corpus(1, 1, g.lengths, g.T, modes=3)[0]
        x, y, t = np.meshgrid(*g.axes(), g.times, indexing="ij")
        assert np.allclose(s.sample(g).values, s.evaluate(x, y, t), atol=1e-13)

    def test_deterministic_and_prefix_stable(self):
        g = SpaceTimeGrid.make(9, 9, 0.3)
        a = neumann_corpus(g, 42, 5)
        b = neumann_corpus(g, 42, 5)
        c = neumann_corpus(g, 42, 3)
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, c))

    def test_rough_corpus_laplacian_finite(self):
        g = SpaceTimeGrid.make(129, 9, 0.3)
        u = neumann_corpus(g, 0, 1, decay=3.0, modes=64)[0]
        assert np.isfinite(np.max(np.abs(laplacian(u).values)))


class TestBinaryFormat:
    @pytest.mark.parametrize("nd", [1, 2])
    def test_round_trip(self, tmp_path, nd):
        g = SpaceTimeGrid.make(9, 10, 0.7, lengths=1.5, n_dim=nd)
        f = ScalarField(g, np.random.default_rng(1).standard_normal(g.value_shape))
        write_field(tmp_path / "f.bin", f)
        back = read_field(tmp_path / "f.bin")
        assert back.grid == g and np.array_equal(back.values, f.values)
        s = slice_at(f, 3)
        write_field(tmp_path / "s.bin", s)
        sb = read_field(tmp_path / "s.bin", nt_if_slice=10)
        assert isinstance(sb, SpatialSlice) and np.array_equal(sb.values, s.values)

    def test_header_layout(self, tmp_path):
        g = SpaceTimeGrid.make(9, 10, 0.5, lengths=2.0)
        write_field(tmp_path / "f.bin", constant_field(g, 1.0))
        raw = (tmp_path / "f.bin").read_bytes()
        assert np.frombuffer(raw[:24], "<i8").tolist() == [1, 9, 10]
        assert np.frombuffer(raw[24:40], "<f8").tolist() == [2.0, 0.5]
        assert len(raw) == 40 + 8 * 90
