"""Hot time-stepping kernels for the 1D sweeps.

Each kernel exists twice: a numba ``@njit`` version and a numpy/scipy
version with identical arithmetic. The module-level names (``bellman_sweep_1d``,
``fp_sweep_1d``, ``thomas_solve``) point at the JIT versions unless the
environment variable ``MFG_CARLEMAN_DISABLE_JIT`` is set to a truthy value
before import, or numba is unavailable.

Grid convention: vertex-centred nodes ``x_i = i*h``, mirror ghosts at both
ends, so the Laplacian row at a boundary node reads ``2*(u_1 - u_0)/h**2``.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.linalg import solve_banded

_FLAG = os.environ.get("MFG_CARLEMAN_DISABLE_JIT", "").strip().lower()
JIT_REQUESTED = _FLAG not in {"1", "true", "yes", "on"}

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_JIT = JIT_REQUESTED and HAS_NUMBA


# ---------------------------------------------------------------------------
# numpy / scipy reference path
# ---------------------------------------------------------------------------


def _laplacian_bands(n, coef):
    """Banded storage of ``I - coef * Lap`` with mirror-ghost rows."""
    ab = np.zeros((3, n))
    ab[1, :] = 1.0 + 2.0 * coef
    ab[0, 1:] = -coef
    ab[2, :-1] = -coef
    # mirror ghost doubles the inward neighbour
    ab[0, 1] = -2.0 * coef
    ab[2, n - 2] = -2.0 * coef
    return ab


def _central_grad_np(u, h):
    g = np.zeros_like(u)
    g[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    return g


def thomas_solve_np(lower, diag, upper, rhs):
    """Solve a tridiagonal system. ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def bellman_sweep_1d_np(u_T, source, kappa2, beta, tau, h):
    """Backward semi-implicit sweep for ``u_t + beta*u_xx + kappa2/2*u_x**2 + source = 0``.

    ``source`` has shape ``(nx, nt)``; the gradient-squared term is taken from
    the already computed later time level.
    """
    nx, nt = source.shape
    u = np.empty((nx, nt))
    u[:, nt - 1] = u_T
    ab = _laplacian_bands(nx, tau * beta / (h * h))
    for n in range(nt - 2, -1, -1):
        prev = u[:, n + 1]
        g = _central_grad_np(prev, h)
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = prev + tau * (0.5 * kappa2 * g * g + source[:, n])
        if not np.all(np.isfinite(rhs)):
            u[:, n] = rhs
            return u, n
        u[:, n] = solve_banded((1, 1), ab, rhs)
        if not np.all(np.isfinite(u[:, n])):
            return u, n
    return u, -1


def fp_bands_np(u_col, kappa2_faces, beta, tau, h):
    """Tridiagonal bands of the implicit Fokker-Planck step at one time level."""
    nx = u_col.shape[0]
    d = beta / (h * h)
    c = kappa2_faces * (u_col[1:] - u_col[:-1]) / h
    a_own = d + 0.5 * c / h  # F_{f}/h coefficient on the left node of face f
    a_nb = -d + 0.5 * c / h  # F_{f}/h coefficient on the right node of face f
    lower = np.zeros(nx)
    diag = np.ones(nx)
    upper = np.zeros(nx)
    w = np.ones(nx - 1)
    w_right = w.copy()
    w_left = w.copy()
    w_right[0] = 2.0  # node 0 sees its single face with doubled weight
    w_left[-1] = 2.0  # node nx-1 likewise
    # node i += tau * F_{i+1/2}/h   (faces f = i)
    diag[:-1] += tau * w_right * a_own
    upper[:-1] += tau * w_right * a_nb
    # node i -= tau * F_{i-1/2}/h   (faces f = i-1)
    lower[1:] -= tau * w_left * a_own
    diag[1:] -= tau * w_left * a_nb
    return lower, diag, upper


def fp_sweep_1d_np(p0, u, kappa2_faces, beta, tau, h):
    """Forward implicit sweep for ``p_t - beta*p_xx + (kappa2*p*u_x)_x = 0`` in flux form."""
    nx, nt = u.shape
    p = np.empty((nx, nt))
    p[:, 0] = p0
    for n in range(1, nt):
        lower, diag, upper = fp_bands_np(u[:, n], kappa2_faces, beta, tau, h)
        p[:, n] = thomas_solve_np(lower, diag, upper, p[:, n - 1])
        if not np.all(np.isfinite(p[:, n])):
            return p, n
    return p, -1


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def thomas_solve_jit(lower, diag, upper, rhs):
        n = diag.shape[0]
        cp = np.empty(n)
        dp = np.empty(n)
        cp[0] = upper[0] / diag[0]
        dp[0] = rhs[0] / diag[0]
        for i in range(1, n):
            m = diag[i] - lower[i] * cp[i - 1]
            cp[i] = upper[i] / m
            dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m
        x = np.empty(n)
        x[n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            x[i] = dp[i] - cp[i] * x[i + 1]
        return x

    @njit(cache=True)
    def bellman_sweep_1d_jit(u_T, source, kappa2, beta, tau, h):
        nx, nt = source.shape
        u = np.empty((nx, nt))
        for i in range(nx):
            u[i, nt - 1] = u_T[i]
        coef = tau * beta / (h * h)
        lower = np.full(nx, -coef)
        upper = np.full(nx, -coef)
        diag = np.full(nx, 1.0 + 2.0 * coef)
        upper[0] = -2.0 * coef
        lower[nx - 1] = -2.0 * coef
        rhs = np.empty(nx)
        for n in range(nt - 2, -1, -1):
            for i in range(nx):
                if i == 0 or i == nx - 1:
                    g = 0.0
                else:
                    g = (u[i + 1, n + 1] - u[i - 1, n + 1]) / (2.0 * h)
                rhs[i] = u[i, n + 1] + tau * (0.5 * kappa2[i] * g * g + source[i, n])
            col = thomas_solve_jit(lower, diag, upper, rhs)
            for i in range(nx):
                if not np.isfinite(col[i]):
                    return u, n
                u[i, n] = col[i]
        return u, -1

    @njit(cache=True)
    def fp_sweep_1d_jit(p0, u, kappa2_faces, beta, tau, h):
        nx, nt = u.shape
        p = np.empty((nx, nt))
        for i in range(nx):
            p[i, 0] = p0[i]
        d = beta / (h * h)
        lower = np.empty(nx)
        diag = np.empty(nx)
        upper = np.empty(nx)
        for n in range(1, nt):
            for i in range(nx):
                lower[i] = 0.0
                diag[i] = 1.0
                upper[i] = 0.0
            for f in range(nx - 1):
                c = kappa2_faces[f] * (u[f + 1, n] - u[f, n]) / h
                a_own = d + 0.5 * c / h
                a_nb = -d + 0.5 * c / h
                wr = 2.0 if f == 0 else 1.0
                wl = 2.0 if f == nx - 2 else 1.0
                diag[f] += tau * wr * a_own
                upper[f] += tau * wr * a_nb
                lower[f + 1] -= tau * wl * a_own
                diag[f + 1] -= tau * wl * a_nb
            col = thomas_solve_jit(lower, diag, upper, p[:, n - 1].copy())
            for i in range(nx):
                if not np.isfinite(col[i]):
                    return p, n
                p[i, n] = col[i]
        return p, -1


if USE_JIT:
    thomas_solve = thomas_solve_jit
    bellman_sweep_1d = bellman_sweep_1d_jit
    fp_sweep_1d = fp_sweep_1d_jit
else:
    thomas_solve = thomas_solve_np
    bellman_sweep_1d = bellman_sweep_1d_np
    fp_sweep_1d = fp_sweep_1d_np


def backend_name() -> str:
    return "numba" if USE_JIT else "numpy"
