import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfg_carleman import kernels

needs_numba = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba unavailable")


def _setup(nx, nt, seed):
    rng = np.random.default_rng(seed)
    h, tau = 1.0 / (nx - 1), 0.3 / (nt - 1)
    x = np.linspace(0, 1, nx)
    kappa2 = 0.2 + rng.random(nx)
    kappa2_f = 0.2 + rng.random(nx - 1)
    u_T = np.cos(np.pi * x) * rng.standard_normal()
    source = 0.1 * rng.standard_normal((nx, nt))
    p0 = 1.0 + 0.5 * np.cos(np.pi * x)
    return h, tau, kappa2, kappa2_f, u_T, source, p0


def test_thomas_matches_dense():
    rng = np.random.default_rng(0)
    n = 12
    lower, upper = rng.random(n), rng.random(n)
    diag = 3.0 + rng.random(n)
    rhs = rng.standard_normal(n)
    dense = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    expected = np.linalg.solve(dense, rhs)
    assert np.allclose(kernels.thomas_solve_np(lower, diag, upper, rhs), expected, atol=1e-13)
    if kernels.HAS_NUMBA:
        assert np.allclose(kernels.thomas_solve_jit(lower, diag, upper, rhs), expected, atol=1e-13)


@needs_numba
@given(st.integers(8, 40), st.integers(8, 30), st.integers(0, 10 ** 6))
def test_backends_agree(nx, nt, seed):
    h, tau, k2, k2f, u_T, src, p0 = _setup(nx, nt, seed)
    uj, fj = kernels.bellman_sweep_1d_jit(u_T, src, k2, 0.1, tau, h)
    un, fn = kernels.bellman_sweep_1d_np(u_T, src, k2, 0.1, tau, h)
    assert fj == fn == -1
    assert np.allclose(uj, un, rtol=1e-12, atol=1e-12)
    pj, _ = kernels.fp_sweep_1d_jit(p0, uj, k2f, 0.1, tau, h)
    pn, _ = kernels.fp_sweep_1d_np(p0, un, k2f, 0.1, tau, h)
    assert np.allclose(pj, pn, rtol=1e-12, atol=1e-12)


@given(st.integers(8, 40), st.integers(0, 10 ** 6))
def test_fp_sweep_conserves_trapezoid_mass(nx, seed):
    h, tau, k2, k2f, u_T, src, p0 = _setup(nx, 20, seed)
    u, _ = kernels.bellman_sweep_1d(u_T, src, k2, 0.1, tau, h)
    p, _ = kernels.fp_sweep_1d(p0, u, k2f, 0.1, tau, h)
    w = np.full(nx, h)
    w[0] = w[-1] = 0.5 * h
    mass = w @ p
    assert np.max(np.abs(mass - mass[0])) <= 1e-13 * abs(mass[0])


def test_blowup_reports_level():
    nx, nt = 20, 30
    h, tau = 1.0 / (nx - 1), 1.0
    u_T = 1e200 * np.cos(np.pi * np.linspace(0, 1, nx))
    u, fail = kernels.bellman_sweep_1d_np(u_T, np.zeros((nx, nt)), np.ones(nx) * 1e10, 0.1, tau, h)
    assert fail == nt - 2
    if kernels.HAS_NUMBA:
        _, fail_j = kernels.bellman_sweep_1d_jit(u_T, np.zeros((nx, nt)), np.ones(nx) * 1e10, 0.1, tau, h)
        assert fail_j == nt - 2


def test_env_flag_selects_numpy():
    env = dict(os.environ, MFG_CARLEMAN_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", "from mfg_carleman import kernels; print(kernels.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
