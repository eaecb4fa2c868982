import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_problem
from mfg_carleman.forward_solver import SolverConfig, solve_mfgs
from mfg_carleman.grid import (
    ScalarField,
    SpaceTimeGrid,
    SpatialSlice,
    constant_field,
    field_from_function,
    integrate_space,
    neumann_corpus,
    write_field,
)
from mfg_carleman.mfg_model import (
    ElasticitySpec,
    InteractionSpec,
    KernelSpec,
    MfgProblem,
    bellman_residual,
    drift_flux_divergence,
    fokker_planck_residual,
    hypothesis_membership,
    interaction_eval,
    residual_difference_check,
    slice_from_spec,
    taylor_difference_bound,
)
from mfg_carleman.stability_lab import PerturbationSpec

NO_DRIFT = ElasticitySpec("constant", 0.0, 0.0)
NO_G = InteractionSpec("zero")


def _order(errs, hs):
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


class TestCoefficientCatalog:
    @pytest.mark.parametrize("kind", ["linear", "saturating"])
    @given(y=st.floats(-20, 20), z=st.floats(-20, 20), g1=st.floats(-3, 3), g2=st.floats(-3, 3))
    def test_partials_bounded_by_N1(self, kind, y, z, g1, g2):
        G = InteractionSpec(kind, g1, g2)
        eps = 1e-6
        gy = (G(y + eps, z) - G(y - eps, z)) / (2 * eps)
        gz = (G(y, z + eps) - G(y, z - eps)) / (2 * eps)
        assert abs(gy) <= G.N1 + 1e-6 and abs(gz) <= G.N1 + 1e-6
        py, pz = G.partials(y, z)
        assert abs(py) <= abs(g1) and abs(pz) <= abs(g2)

    def test_unknown_kinds_rejected(self):
        with pytest.raises(ValueError):
            InteractionSpec("quadratic")
        with pytest.raises(ValueError):
            KernelSpec("laplace")
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 1.0, 0.0)
        with pytest.raises(ValueError):
            ElasticitySpec("rough")

    def test_kernel_sup(self):
        pts = np.linspace(0, 1, 11)[:, None]
        K = KernelSpec("gaussian", -2.0, 0.3)
        assert np.max(np.abs(K(pts, pts))) == pytest.approx(K.sup)
        assert KernelSpec("zero").sup == 0

    def test_elasticity_c1_norm_bounds_samples(self):
        kap = ElasticitySpec("smooth", 0.5, 0.2)
        x = np.linspace(0, 2.0, 2001)
        vals = kap(x, lengths=(2.0,))
        slope = np.max(np.abs(np.gradient(vals, x)))
        assert np.max(np.abs(vals)) + slope <= kap.c1_norm((2.0,)) + 1e-9
        assert ElasticitySpec("constant", -0.7).c1_norm((1.0,)) == 0.7


class TestProblem:
    def test_preconditions(self, small_grid):
        g = small_grid
        one = SpatialSlice(g, np.ones(g.shape))
        with pytest.raises(ValueError):
            MfgProblem(g, 0.0, one, one)
        with pytest.raises(ValueError):
            MfgProblem(g, 0.1, one, SpatialSlice(g, 2 * np.ones(g.shape)))
        with pytest.raises(ValueError):
            MfgProblem.build(g, 0.1, one, SpatialSlice(g, np.cos(np.pi * g.mesh()[0])))
        prob = MfgProblem.build(g, 0.1, one, SpatialSlice(g, 3 * np.ones(g.shape)))
        assert integrate_space(prob.p_0) == pytest.approx(1.0, abs=1e-14)

    def test_bounds(self, small_grid):
        prob = make_problem(small_grid, interaction=InteractionSpec("linear", 0.3, -0.5), N3=2.0, N4=4.0)
        assert prob.N1 == 0.5
        assert prob.N == max(prob.N1, prob.N2, 2.0, 4.0)
        assert not prob.decoupled
        assert make_problem(small_grid, elasticity=NO_DRIFT, interaction=NO_G).decoupled

    def test_slice_from_spec(self, tmp_path, small_grid):
        g = small_grid
        x = g.mesh()[0]
        assert np.array_equal(slice_from_spec(2.5, g).values, np.full(g.shape, 2.5))
        assert np.allclose(slice_from_spec("1 + 0.5*cos(pi*x/L)", g).values, 1 + 0.5 * np.cos(np.pi * x))
        for bad in ["__import__('os')", "x.real", "open('f')", "'a'", "zz + 1"]:
            with pytest.raises((ValueError, SyntaxError)):
                slice_from_spec(bad, g)
        s = SpatialSlice(g, np.cos(2 * np.pi * x))
        write_field(tmp_path / "d.bin", s)
        assert np.array_equal(slice_from_spec("file:d.bin", g, base_dir=tmp_path).values, s.values)
        with pytest.raises(ValueError):
            slice_from_spec(f"file:{tmp_path / 'd.bin'}", SpaceTimeGrid.make(21, 9, 0.3))


class TestInteraction:
    def test_zero_variant(self, small_grid):
        prob = make_problem(small_grid, interaction=NO_G)
        assert np.all(interaction_eval(prob.p_0, 0.0, prob).values == 0)

    def test_linear_constant_kernel(self, small_grid):
        prob = make_problem(small_grid, p_0=1.0, kernel=KernelSpec("constant", 2.0),
                            interaction=InteractionSpec("linear", 0.3, 0.7))
        assert np.allclose(interaction_eval(prob.p_0, 0.1, prob).values, 0.3 * 2.0 + 0.7, rtol=1e-14)

    @given(st.integers(0, 10 ** 6))
    def test_saturating_bounded(self, seed):
        g = SpaceTimeGrid.make(21, 9, 0.3)
        prob = make_problem(g, interaction=InteractionSpec("saturating", 0.4, -0.9))
        p = SpatialSlice(g, 100 * np.random.default_rng(seed).standard_normal(g.shape))
        assert np.max(np.abs(interaction_eval(p, 0.0, prob).values)) <= 1.3


class TestResiduals:
    def test_trivial_zero(self, small_grid):
        prob = make_problem(small_grid)
        z = constant_field(small_grid, 0.0)
        assert np.all(bellman_residual(z, z, prob).values == 0)
        assert np.all(fokker_planck_residual(z, constant_field(small_grid, 1.0), prob).values == 0)

    def test_grid_mismatch(self, small_grid):
        prob = make_problem(small_grid)
        other = constant_field(SpaceTimeGrid.make(41, 21, 0.3), 0.0)
        with pytest.raises(ValueError):
            bellman_residual(other, other, prob)

    @pytest.mark.parametrize("which", ["bellman", "fp"])
    def test_manufactured_convergence(self, which):
        beta = 0.1
        errs, hs = [], []
        for n in (21, 41, 81, 161):
            g = SpaceTimeGrid.make(n, n, 0.3)
            prob = make_problem(g, beta=beta, elasticity=NO_DRIFT, interaction=NO_G)
            if which == "bellman":
                star = field_from_function(g, lambda x, t: np.cos(np.pi * x) * np.exp(-t))
                res = bellman_residual(star, constant_field(g, 1.0), prob)
                exact = (-1 - beta * np.pi ** 2) * star.values
            else:
                star = field_from_function(g, lambda x, t: 1 + 0.5 * np.cos(np.pi * x) * np.exp(-t))
                res = fokker_planck_residual(constant_field(g, 0.0), star, prob)
                exact = (-1 + beta * np.pi ** 2) * (star.values - 1)
            errs.append(np.max(np.abs(res.values - exact)))
            hs.append(g.h[0])
        assert _order(errs, hs) >= 1.8

    def test_doubling_kappa_quadruples_gradient_term(self, small_grid):
        g = small_grid
        u = neumann_corpus(g, 3, 1)[0]
        p = constant_field(g, 1.0)
        k1 = make_problem(g, elasticity=ElasticitySpec("smooth", 0.5, 0.2))
        k2 = make_problem(g, elasticity=ElasticitySpec("smooth", 1.0, 0.4))
        k0 = make_problem(g, elasticity=NO_DRIFT)
        base = bellman_residual(u, p, k0).values
        t1 = bellman_residual(u, p, k1).values - base
        t2 = bellman_residual(u, p, k2).values - base
        assert np.allclose(t2, 4 * t1, rtol=1e-12, atol=1e-12 * np.abs(t1).max())

    @given(st.integers(0, 10 ** 6), st.sampled_from([1, 2]))
    def test_drift_divergence_conservative(self, seed, nd):
        g = SpaceTimeGrid.make(17 if nd == 1 else 11, 9, 0.3, n_dim=nd)
        prob = make_problem(g, p_0=1.0, u_T=0.0)
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(g.shape)
        p = rng.random(g.shape)
        div = drift_flux_divergence(u, p, prob)
        scale = np.abs(div).max() + 1.0
        assert abs(integrate_space(SpatialSlice(g, div))) <= 1e-13 * scale


class TestTaylorBound:
    def test_identical_densities(self, small_grid):
        prob = make_problem(small_grid)
        rep = taylor_difference_bound(prob.p_0, prob.p_0, 0.0, prob)
        assert np.all(rep.lhs == 0) and np.all(rep.rhs == 0) and not rep.violated

    def test_linear_structure(self, small_grid, rng):
        prob = make_problem(small_grid, interaction=InteractionSpec("linear", 0.2, -0.6))
        g = small_grid
        p1 = SpatialSlice(g, rng.random(g.shape))
        p2 = SpatialSlice(g, rng.random(g.shape))
        rep = taylor_difference_bound(p1, p2, 0.0, prob)
        assert not rep.violated and rep.min_slack >= 0

    @pytest.mark.parametrize("kind", ["linear", "saturating"])
    def test_ten_thousand_trials(self, kind):
        g = SpaceTimeGrid.make(101, 9, 0.3)
        prob = make_problem(g, interaction=InteractionSpec(kind, 0.8, -1.3))
        rng = np.random.default_rng(17)
        trials = 0
        for _ in range(100):
            p1 = SpatialSlice(g, 5 * rng.standard_normal(g.shape))
            p2 = SpatialSlice(g, 5 * rng.standard_normal(g.shape))
            rep = taylor_difference_bound(p1, p2, 0.0, prob)
            assert not rep.violated
            trials += rep.lhs.size
        assert trials >= 10 ** 4


class TestMembership:
    def test_zero_fields(self, small_grid):
        z = constant_field(small_grid, 0.0)
        assert hypothesis_membership(z, z, make_problem(small_grid, N3=1e-9, N4=1e-9)).member

    def test_constructed_violation(self, small_grid):
        g = small_grid
        prob = make_problem(g, N3=3.0)
        u = field_from_function(g, lambda x, t: 2 * 3.0 * np.cos(np.pi * x) + 0 * t)
        rep = hypothesis_membership(u, constant_field(g, 1.0), prob)
        assert rep.sup_u == pytest.approx(6.0) and not rep.in_D3 and not rep.member

    def test_default_solution_is_member(self, default_problem, default_solution):
        u, p, _ = default_solution
        rep = hypothesis_membership(u, p, default_problem)
        assert rep.member, rep


class TestResidualDifference:
    @pytest.fixture(scope="class")
    @staticmethod
    def setup(small_grid):
        prob = make_problem(small_grid)
        cfg = SolverConfig()
        base = solve_mfgs(prob, cfg)[:2]
        pert = {d: solve_mfgs(PerturbationSpec(d, seed=1).apply(prob), cfg)[:2] for d in (1e-2, 1e-3)}
        return prob, base, pert

    def test_identical_pairs_degenerate(self, setup):
        prob, base, _ = setup
        rep = residual_difference_check(base, base, prob)
        assert rep.degenerate and np.isnan(rep.sup_ratio)

    def test_ratio_finite_and_stable(self, setup):
        prob, base, pert = setup
        sups = [residual_difference_check(base, pert[d], prob).sup_ratio for d in (1e-2, 1e-3)]
        assert all(np.isfinite(s) and s > 0 for s in sups)
        assert max(sups) / min(sups) <= 3.0
