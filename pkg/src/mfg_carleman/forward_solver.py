"""Forward solves of the conventional problem: backward Bellman, forward Fokker-Planck, Picard.

Bellman steps backward from ``t = T`` with implicit diffusion and the
gradient-squared term lagged from the later level. Fokker-Planck steps forward
with implicit diffusion and an implicit drift in flux form, so the discrete
mass is conserved by construction. 1D sweeps run in the compiled kernels of
:mod:`mfg_carleman.kernels`; 2D uses sparse factorizations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .grid import (
    ScalarField,
    SpaceTimeGrid,
    SpatialSlice,
    _check_same_grid,
    _space_integral_values,
    grad_norm_values,
)
from .mfg_model import MfgProblem, interaction_values


class SolverDivergence(RuntimeError):
    """A sweep produced non-finite values."""

    def __init__(self, equation: str, level: int, time: float):
        super().__init__(f"{equation} sweep blew up at time level {level} (t={time:.6g})")
        self.equation = equation
        self.level = level
        self.time = time


class NonConvergence(RuntimeError):
    def __init__(self, message: str, trace: "SolveTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    omega: float = 0.5
    picard_tol: float = 1e-8
    max_picard: int = 200
    inner_scheme: Literal["semi-implicit"] = "semi-implicit"
    noise_level: float = 0.0
    seed: int = 0
    initial_p: Literal["data", "uniform"] = "data"

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError("damping omega must lie in (0, 1]")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.max_picard < 1:
            raise ValueError("max_picard must be >= 1")
        if self.inner_scheme != "semi-implicit":
            raise ValueError(f"unknown inner scheme {self.inner_scheme!r}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if self.initial_p not in ("data", "uniform"):
            raise ValueError(f"unknown initial_p {self.initial_p!r}")


@dataclass
class SolveTrace:
    du: list[float] = field(default_factory=list)
    dp: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.dp)

    def record(self, du: float, dp: float) -> None:
        self.du.append(float(du))
        self.dp.append(float(dp))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "du", "dp"])
            for k, (a, b) in enumerate(zip(self.du, self.dp), start=1):
                w.writerow([k, format(a, ".17g"), format(b, ".17g")])


# ---------------------------------------------------------------------------
# sparse operators (2D path, also used by the forced heat solver)
# ---------------------------------------------------------------------------


def _second_diff_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    up = np.ones(n - 1)
    lo = np.ones(n - 1)
    up[0] = 2.0
    lo[-1] = 2.0
    return sp.diags([lo, main, up], [-1, 0, 1], format="csr") / (h * h)


def laplacian_matrix(grid: SpaceTimeGrid) -> sp.csr_matrix:
    """Sparse mirror-ghost Laplacian on the flattened (C-order) spatial nodes."""
    mats = [_second_diff_1d(n, h) for n, h in zip(grid.shape, grid.h)]
    if grid.n_dim == 1:
        return mats[0]
    nx, ny = grid.shape
    return (sp.kron(mats[0], sp.identity(ny)) + sp.kron(sp.identity(nx), mats[1])).tocsr()


def _axis_ops(grid: SpaceTimeGrid, axis: int):
    """(face difference, face average, face divergence) matrices along ``axis``."""
    n, h = grid.shape[axis], grid.h[axis]
    d = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
    avg = sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    div = (-d.T).tolil()
    div[0, 0] *= 2.0
    div[n - 1, n - 2] *= 2.0
    div = div.tocsr()
    others = [sp.identity(m) for m in grid.shape]
    if grid.n_dim == 1:
        return d.tocsr(), avg.tocsr(), div

    def lift(m, ax=axis):
        parts = [m if k == ax else others[k] for k in range(grid.n_dim)]
        out = parts[0]
        for p in parts[1:]:
            out = sp.kron(out, p)
        return out.tocsr()

    return lift(d), lift(avg), lift(div)


def _fp_matrix(grid, u_flat, kappa2_faces, beta, tau, ops):
    n = u_flat.size
    m = sp.identity(n, format="csr")
    for ax, (d, avg, div) in enumerate(ops):
        c = kappa2_faces[ax].ravel() * (d @ u_flat)
        flux = -beta * d + sp.diags(c) @ avg
        m = m + tau * (div @ flux)
    return m.tocsc()


# ---------------------------------------------------------------------------
# single-equation sweeps
# ---------------------------------------------------------------------------


def solve_bellman_backward(p: ScalarField, u_T: SpatialSlice, problem: MfgProblem,
                           config: SolverConfig | None = None) -> ScalarField:
    """Backward semi-implicit sweep from ``u(., T) = u_T`` with ``p`` frozen."""
    g = problem.grid
    _check_same_grid(p.grid, g)
    _check_same_grid(u_T.grid, g, spatial_only=True)
    source = interaction_values(p.values, problem)
    if g.n_dim == 1:
        u, fail = kernels.bellman_sweep_1d(np.ascontiguousarray(u_T.values), np.ascontiguousarray(source),
                                           np.ascontiguousarray(problem.kappa2), problem.beta, g.tau, g.h[0])
        if fail >= 0:
            raise SolverDivergence("bellman", int(fail), float(g.times[fail]))
        return ScalarField(g, u)
    return ScalarField(g, _bellman_sparse(u_T.values, source, problem))


def _bellman_sparse(u_T, source, problem):
    g = problem.grid
    n = int(np.prod(g.shape))
    lu = splu((sp.identity(n) - g.tau * problem.beta * laplacian_matrix(g)).tocsc())
    u = np.empty(g.value_shape)
    u[..., -1] = u_T
    for k in range(g.nt - 2, -1, -1):
        prev = u[..., k + 1]
        gsq = grad_norm_values(g, prev) ** 2
        rhs = prev + g.tau * (0.5 * problem.kappa2 * gsq + source[..., k])
        col = lu.solve(rhs.ravel())
        if not np.all(np.isfinite(col)):
            raise SolverDivergence("bellman", k, float(g.times[k]))
        u[..., k] = col.reshape(g.shape)
    return u


def solve_fokker_planck_forward(u: ScalarField, p_0: SpatialSlice, problem: MfgProblem,
                                config: SolverConfig | None = None) -> ScalarField:
    """Forward implicit sweep from ``p(., 0) = p_0`` with ``u`` frozen."""
    g = problem.grid
    _check_same_grid(u.grid, g)
    _check_same_grid(p_0.grid, g, spatial_only=True)
    if g.n_dim == 1:
        p, fail = kernels.fp_sweep_1d(np.ascontiguousarray(p_0.values), np.ascontiguousarray(u.values),
                                      np.ascontiguousarray(problem.kappa2_faces[0]), problem.beta, g.tau, g.h[0])
        if fail >= 0:
            raise SolverDivergence("fokker-planck", int(fail), float(g.times[fail]))
        return ScalarField(g, p)
    ops = [_axis_ops(g, ax) for ax in range(g.n_dim)]
    p = np.empty(g.value_shape)
    p[..., 0] = p_0.values
    for k in range(1, g.nt):
        m = _fp_matrix(g, u.values[..., k].ravel(), problem.kappa2_faces, problem.beta, g.tau, ops)
        col = splu(m).solve(p[..., k - 1].ravel())
        if not np.all(np.isfinite(col)):
            raise SolverDivergence("fokker-planck", k, float(g.times[k]))
        p[..., k] = col.reshape(g.shape)
    return ScalarField(g, p)


def mass_history(p: ScalarField) -> np.ndarray:
    return np.asarray(_space_integral_values(p.grid, p.values))


# ---------------------------------------------------------------------------
# coupled system
# ---------------------------------------------------------------------------


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(new)), float(np.linalg.norm(old)))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(new - old)) / scale


def initial_density(problem: MfgProblem, kind: str = "data") -> ScalarField:
    """Picard start: ``p_0`` frozen in time (``data``) or the uniform density (``uniform``)."""
    g = problem.grid
    if kind == "data":
        vals = np.repeat(problem.p_0.values[..., None], g.nt, axis=-1)
    elif kind == "uniform":
        vals = np.full(g.value_shape, 1.0 / float(np.prod(g.lengths)))
    else:
        raise ValueError(f"unknown initial density {kind!r}")
    return ScalarField(g, vals)


def solve_mfgs(problem: MfgProblem, config: SolverConfig | None = None,
               p_init: ScalarField | None = None) -> tuple[ScalarField, ScalarField, SolveTrace]:
    """Damped Picard iteration between the backward and forward sweeps.

    Per iteration: ``u = B(p^k)``, ``p^ = FP(u)``, ``p^{k+1} = (1-w) p^k + w p^``.
    The recorded changes are the relative L2 fixed-point residual
    ``|p^ - p^k| / |p^|`` and the relative change of ``u`` between iterations.
    Returns ``(u, p^)`` at the first iteration where both are below
    ``picard_tol``.
    """
    config = config or SolverConfig()
    p_k = p_init if p_init is not None else initial_density(problem, config.initial_p)
    _check_same_grid(p_k.grid, problem.grid)
    trace = SolveTrace()
    if problem.decoupled:
        # neither sweep reads the other's output, so one pass is the fixed point
        u = solve_bellman_backward(p_k, problem.u_T, problem, config)
        p = solve_fokker_planck_forward(u, problem.p_0, problem, config)
        trace.record(0.0, 0.0)
        trace.converged = True
        return u, p, trace

    u_prev = None
    for _ in range(config.max_picard):
        try:
            u = solve_bellman_backward(p_k, problem.u_T, problem, config)
            p_hat = solve_fokker_planck_forward(u, problem.p_0, problem, config)
        except SolverDivergence as exc:
            raise NonConvergence(f"Picard iteration {trace.iterations + 1}: {exc}", trace) from exc
        du = 1.0 if u_prev is None else _rel_change(u.values, u_prev)
        dp = _rel_change(p_hat.values, p_k.values)
        trace.record(du, dp)
        if not (math.isfinite(du) and math.isfinite(dp)) or dp > 1e8:
            raise NonConvergence(f"Picard iteration diverged at iteration {trace.iterations}", trace)
        if du <= config.picard_tol and dp <= config.picard_tol:
            trace.converged = True
            return u, p_hat, trace
        u_prev = u.values
        p_k = ScalarField(problem.grid, (1.0 - config.omega) * p_k.values + config.omega * p_hat.values)
    raise NonConvergence(
        f"no convergence after {config.max_picard} Picard iterations "
        f"(last du={trace.du[-1]:.3g}, dp={trace.dp[-1]:.3g})", trace)


# ---------------------------------------------------------------------------
# measurement and auxiliary solves
# ---------------------------------------------------------------------------


def smooth_noise(grid: SpaceTimeGrid, seed: int, modes: int = 16) -> np.ndarray:
    """``sum_k xi_k (1 + |k|^2)^-1 prod_j cos(k_j pi x_j / L_j)`` with ``xi ~ N(0, 1)``."""
    rng = np.random.default_rng(seed)
    shape = (modes + 1,) * grid.n_dim
    xi = rng.standard_normal(shape)
    ksq = sum(np.arange(modes + 1, dtype=float).reshape([-1 if a == j else 1 for a in range(grid.n_dim)]) ** 2
              for j in range(grid.n_dim))
    coef = xi / (1.0 + ksq)
    bases = [np.cos(np.pi * np.outer(x, np.arange(modes + 1)) / L) for x, L in zip(grid.axes(), grid.lengths)]
    if grid.n_dim == 1:
        return bases[0] @ coef
    return bases[0] @ coef @ bases[1].T


def synthesize_measurement(u: ScalarField, delta: float, seed: int, modes: int = 16) -> SpatialSlice:
    """``u(., 0)`` plus ``delta`` times fixed-seed smooth Neumann noise."""
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    base = u.values[..., 0].copy()
    if delta == 0:
        return SpatialSlice(u.grid, base)
    return SpatialSlice(u.grid, base + delta * smooth_noise(u.grid, seed, modes))


def solve_forced_heat(source: ScalarField, beta: float, initial: SpatialSlice | None = None) -> ScalarField:
    """Crank-Nicolson solution of ``w_t - beta Lap w = source`` forward from ``w(., 0)`` (default 0)."""
    g = source.grid
    n = int(np.prod(g.shape))
    lap = laplacian_matrix(g)
    eye = sp.identity(n, format="csc")
    lu = splu((eye - 0.5 * g.tau * beta * lap).tocsc())
    explicit = (eye + 0.5 * g.tau * beta * lap).tocsr()
    f = source.values.reshape((n, g.nt))
    w = np.empty((n, g.nt))
    w[:, 0] = 0.0 if initial is None else initial.values.ravel()
    for k in range(1, g.nt):
        w[:, k] = lu.solve(explicit @ w[:, k - 1] + 0.5 * g.tau * (f[:, k] + f[:, k - 1]))
    return ScalarField(g, w.reshape(g.value_shape))
