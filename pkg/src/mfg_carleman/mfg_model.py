"""Coefficients, data and residuals of the mean field games system.

Bellman:        u_t + beta Lap u + kappa^2/2 |grad u|^2 + G(x, t, int K p dy, p) = 0
Fokker-Planck:  p_t - beta Lap p + div(kappa^2 p grad u) = 0

with zero-Neumann boundaries, ``u(., T) = u_T``, ``p(., 0) = p_0`` and the
extra measurement ``u(., 0) = u_0``.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np

from .grid import (
    ScalarField,
    SpaceTimeGrid,
    SpatialSlice,
    _check_same_grid,
    _space_integral_values,
    face_average,
    face_diff,
    face_divergence,
    grad_norm_values,
    laplacian_values,
    read_field,
    time_derivative_values,
)

# ---------------------------------------------------------------------------
# coefficient catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionSpec:
    """``G(y, z)`` with ``y = int K p dy`` and ``z = p(x, t)``.

    Both nonzero variants have partials bounded by ``|gamma1|`` and
    ``|gamma2|`` everywhere, so ``N1 = max(|gamma1|, |gamma2|)`` is certified.
    """

    kind: Literal["linear", "saturating", "zero"] = "linear"
    gamma1: float = 0.1
    gamma2: float = 0.1

    def __post_init__(self):
        if self.kind not in ("linear", "saturating", "zero"):
            raise ValueError(f"unknown interaction kind {self.kind!r}")

    def __call__(self, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.kind == "linear":
            return self.gamma1 * y + self.gamma2 * z
        if self.kind == "saturating":
            return self.gamma1 * np.tanh(y) + self.gamma2 * np.tanh(z)
        return np.zeros(np.broadcast(y, z).shape)

    def evaluate(self, x, t, y, z):
        """Trait-style entry point; the catalog members do not depend on ``(x, t)``."""
        return self(y, z)

    def partials(self, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast(y, z).shape
        if self.kind == "linear":
            return np.full(shape, self.gamma1), np.full(shape, self.gamma2)
        if self.kind == "saturating":
            return (np.broadcast_to(self.gamma1 / np.cosh(y) ** 2, shape),
                    np.broadcast_to(self.gamma2 / np.cosh(z) ** 2, shape))
        return np.zeros(shape), np.zeros(shape)

    @property
    def N1(self) -> float:
        return 0.0 if self.kind == "zero" else max(abs(self.gamma1), abs(self.gamma2))


@dataclass(frozen=True)
class KernelSpec:
    kind: Literal["gaussian", "constant", "zero"] = "gaussian"
    amplitude: float = 1.0
    width: float = 0.2

    def __post_init__(self):
        if self.kind not in ("gaussian", "constant", "zero"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not self.width > 0:
            raise ValueError("gaussian kernel width must be positive")

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``K`` between point sets of shape ``(n, d)`` and ``(m, d)``."""
        if self.kind == "zero":
            return np.zeros((x.shape[0], y.shape[0]))
        if self.kind == "constant":
            return np.full((x.shape[0], y.shape[0]), float(self.amplitude))
        d2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)
        return self.amplitude * np.exp(-0.5 * d2 / self.width ** 2)

    @property
    def sup(self) -> float:
        return 0.0 if self.kind == "zero" else abs(self.amplitude)


@dataclass(frozen=True)
class ElasticitySpec:
    """``kappa(x) = c0 + c1 prod_j cos(pi x_j / L_j)``; ``c1 = 0`` is the constant variant."""

    kind: Literal["constant", "smooth"] = "smooth"
    c0: float = 0.5
    c1: float = 0.2

    def __post_init__(self):
        if self.kind not in ("constant", "smooth"):
            raise ValueError(f"unknown elasticity kind {self.kind!r}")

    def __call__(self, *coords, lengths) -> np.ndarray:
        out = np.full(np.broadcast(*coords).shape, float(self.c0))
        if self.kind == "smooth" and self.c1 != 0:
            bump = 1.0
            for x, L in zip(coords, lengths):
                bump = bump * np.cos(np.pi * x / L)
            out = out + self.c1 * bump
        return out

    def c1_norm(self, lengths) -> float:
        """``sup|kappa| + sup|grad kappa|`` (an upper bound in 2D)."""
        if self.kind == "constant":
            return abs(self.c0)
        slope = abs(self.c1) * math.pi * math.sqrt(sum(1.0 / L ** 2 for L in lengths))
        return abs(self.c0) + abs(self.c1) + slope

    def nodal_sq(self, grid: SpaceTimeGrid) -> np.ndarray:
        return self(*grid.mesh(), lengths=grid.lengths) ** 2

    def face_sq(self, grid: SpaceTimeGrid, axis: int) -> np.ndarray:
        """``kappa^2`` at the midpoints of the faces normal to ``axis``."""
        axes = grid.axes()
        axes[axis] = 0.5 * (axes[axis][1:] + axes[axis][:-1])
        coords = np.meshgrid(*axes, indexing="ij")
        return self(*coords, lengths=grid.lengths) ** 2


# ---------------------------------------------------------------------------
# data expressions
# ---------------------------------------------------------------------------

_FUNCS = {name: getattr(np, name) for name in
          ("cos", "sin", "exp", "tanh", "cosh", "sinh", "sqrt", "log", "abs", "tan", "arctan")}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant,
                  ast.Load, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _compile_expression(expr: str):
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"disallowed syntax {type(node).__name__} in expression {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ValueError(f"unknown function in expression {expr!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"non-numeric constant in expression {expr!r}")
    return compile(tree, "<data expression>", "eval")


def slice_from_spec(spec: str | float, grid: SpaceTimeGrid, base_dir: str | Path | None = None) -> SpatialSlice:
    """Build a slice from a number, an expression in ``x`` (and ``y``), or ``file:PATH``.

    Expressions may use ``pi``, ``e``, ``L`` (first axis length) and the
    elementary functions cos, sin, exp, tanh, cosh, sinh, sqrt, log, abs, tan,
    arctan. Files use the binary field layout and must match the spatial grid.
    """
    if isinstance(spec, (int, float)):
        return SpatialSlice(grid, np.full(grid.shape, float(spec)))
    spec = str(spec).strip()
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        obj = read_field(path)
        vals = obj.values if isinstance(obj, SpatialSlice) else obj.values[..., 0]
        if vals.shape != grid.shape or tuple(obj.grid.lengths) != tuple(grid.lengths):
            raise ValueError(f"field file {path} does not match the spatial grid")
        return SpatialSlice(grid, vals)
    code = _compile_expression(spec)
    mesh = grid.mesh()
    names = dict(_CONSTS, L=grid.lengths[0], x=mesh[0])
    if grid.n_dim == 2:
        names["y"] = mesh[1]
    try:
        vals = eval(code, {"__builtins__": {}}, dict(_FUNCS, **names))  # noqa: S307 - AST whitelisted
    except NameError as exc:
        raise ValueError(f"unknown name in expression {spec!r}: {exc}") from None
    return SpatialSlice(grid, np.broadcast_to(np.asarray(vals, dtype=float), grid.shape).copy())


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MfgProblem:
    grid: SpaceTimeGrid
    beta: float
    u_T: SpatialSlice
    p_0: SpatialSlice
    elasticity: ElasticitySpec = field(default_factory=ElasticitySpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    u_0: SpatialSlice | None = None
    N3: float = 10.0
    N4: float = 10.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("u_T", "p_0", "u_0"):
            s = getattr(self, name)
            if s is not None:
                _check_same_grid(s.grid, self.grid, spatial_only=True)
        if np.any(self.p_0.values < 0):
            raise ValueError("p_0 must be nonnegative")
        mass = float(_space_integral_values(self.grid, self.p_0.values))
        if abs(mass - 1.0) > 1e-12:
            raise ValueError(f"p_0 must have unit mass, got {mass!r}; use MfgProblem.build to normalise")

    @classmethod
    def build(cls, grid: SpaceTimeGrid, beta: float, u_T: SpatialSlice, p_0: SpatialSlice,
              **kwargs) -> "MfgProblem":
        """Constructor that rescales ``p_0`` to unit mass."""
        return cls(grid=grid, beta=beta, u_T=u_T, p_0=normalize_density(p_0), **kwargs)

    def with_data(self, **changes) -> "MfgProblem":
        if "p_0" in changes:
            changes["p_0"] = normalize_density(changes["p_0"])
        return replace(self, **changes)

    @property
    def decoupled(self) -> bool:
        """No feedback between the equations: zero drift and zero interaction."""
        no_drift = self.elasticity.c0 == 0 and (self.elasticity.kind == "constant" or self.elasticity.c1 == 0)
        return no_drift and self.interaction.N1 == 0

    @property
    def N1(self) -> float:
        return self.interaction.N1

    @property
    def N2(self) -> float:
        return max(self.kernel.sup, self.elasticity.c1_norm(self.grid.lengths))

    @property
    def N(self) -> float:
        return max(self.N1, self.N2, self.N3, self.N4)

    @cached_property
    def kappa2(self) -> np.ndarray:
        return self.elasticity.nodal_sq(self.grid)

    @cached_property
    def kappa2_faces(self) -> list[np.ndarray]:
        return [self.elasticity.face_sq(self.grid, ax) for ax in range(self.grid.n_dim)]

    @cached_property
    def kernel_operator(self) -> np.ndarray:
        """Matrix of ``p -> int K(x, y) p(y) dy`` on flattened spatial nodes."""
        pts = np.stack([m.ravel() for m in self.grid.mesh()], axis=-1)
        return self.kernel(pts, pts) * self.grid.space_weights().ravel()[None, :]


def normalize_density(p: SpatialSlice) -> SpatialSlice:
    if np.any(p.values < 0):
        raise ValueError("density must be nonnegative")
    mass = float(_space_integral_values(p.grid, p.values))
    if not mass > 0:
        raise ValueError("density has zero mass")
    return SpatialSlice(p.grid, p.values / mass)


# ---------------------------------------------------------------------------
# nonlinear terms and residuals
# ---------------------------------------------------------------------------


def nonlocal_values(p_values: np.ndarray, problem: MfgProblem) -> np.ndarray:
    """``int K(x, y) p(y, .) dy`` for a slice ``(space...)`` or a field ``(space..., nt)``."""
    g = problem.grid
    nsp = int(np.prod(g.shape))
    flat = p_values.reshape((nsp, -1))
    return (problem.kernel_operator @ flat).reshape(p_values.shape)


def interaction_values(p_values: np.ndarray, problem: MfgProblem) -> np.ndarray:
    return problem.interaction(nonlocal_values(p_values, problem), p_values)


def interaction_eval(p: SpatialSlice, t: float, problem: MfgProblem) -> SpatialSlice:
    """``G(x, t, int K(x, y) p(y) dy, p(x))`` on one time level."""
    _check_same_grid(p.grid, problem.grid, spatial_only=True)
    return SpatialSlice(problem.grid, problem.interaction.evaluate(
        None, t, nonlocal_values(p.values, problem), p.values))


def drift_flux_divergence(u_values: np.ndarray, p_values: np.ndarray, problem: MfgProblem) -> np.ndarray:
    """Conservative ``div(kappa^2 p grad u)`` built from face fluxes."""
    g = problem.grid
    out = np.zeros_like(p_values)
    extra = p_values.ndim - g.n_dim
    for ax in range(g.n_dim):
        k2 = problem.kappa2_faces[ax].reshape(problem.kappa2_faces[ax].shape + (1,) * extra)
        flux = k2 * face_average(p_values, ax) * face_diff(u_values, ax, g.h[ax])
        out = out + face_divergence(flux, ax, g.h[ax])
    return out


def _check_pair(u: ScalarField, p: ScalarField, problem: MfgProblem):
    _check_same_grid(u.grid, p.grid)
    _check_same_grid(u.grid, problem.grid)


def bellman_residual(u: ScalarField, p: ScalarField, problem: MfgProblem) -> ScalarField:
    _check_pair(u, p, problem)
    g = problem.grid
    uv = u.values
    k2 = problem.kappa2[..., None]
    grad_sq = grad_norm_values(g, uv) ** 2
    res = (time_derivative_values(g, uv) + problem.beta * laplacian_values(g, uv)
           + 0.5 * k2 * grad_sq + interaction_values(p.values, problem))
    return ScalarField(g, res)


def fokker_planck_residual(u: ScalarField, p: ScalarField, problem: MfgProblem) -> ScalarField:
    _check_pair(u, p, problem)
    g = problem.grid
    pv = p.values
    res = (time_derivative_values(g, pv) - problem.beta * laplacian_values(g, pv)
           + drift_flux_divergence(u.values, pv, problem))
    return ScalarField(g, res)


# ---------------------------------------------------------------------------
# hypothesis checks
# ---------------------------------------------------------------------------


@dataclass
class TaylorBoundReport:
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def min_slack(self) -> float:
        return float(np.min(self.rhs - self.lhs))

    @property
    def violated(self) -> bool:
        # relative rounding allowance; both sides are O(1) sums of a few products
        return bool(np.any(self.lhs > self.rhs * (1 + 1e-12) + 1e-14))


def taylor_difference_bound(p1: SpatialSlice, p2: SpatialSlice, t: float,
                            problem: MfgProblem) -> TaylorBoundReport:
    """``|G(.., p1) - G(.., p2)| <= N1 (|int K p~| + |p~|)`` pointwise, ``p~ = p1 - p2``."""
    g1 = interaction_eval(p1, t, problem).values
    g2 = interaction_eval(p2, t, problem).values
    diff = p1.values - p2.values
    rhs = problem.N1 * (np.abs(nonlocal_values(diff, problem)) + np.abs(diff))
    return TaylorBoundReport(np.abs(g1 - g2), rhs)


@dataclass
class MembershipReport:
    sup_u: float
    sup_grad_u: float
    sup_lap_u: float
    sup_p: float
    sup_grad_p: float
    N3: float
    N4: float

    @property
    def in_D3(self) -> bool:
        return max(self.sup_u, self.sup_grad_u, self.sup_lap_u) <= self.N3

    @property
    def in_D4(self) -> bool:
        return max(self.sup_p, self.sup_grad_p) <= self.N4

    @property
    def member(self) -> bool:
        return self.in_D3 and self.in_D4


def hypothesis_membership(u: ScalarField, p: ScalarField, problem: MfgProblem) -> MembershipReport:
    """The five sup-norms defining the a priori bounded sets, against ``N3`` and ``N4``."""
    _check_pair(u, p, problem)
    g = problem.grid
    return MembershipReport(
        sup_u=float(np.max(np.abs(u.values))),
        sup_grad_u=float(np.max(grad_norm_values(g, u.values))),
        sup_lap_u=float(np.max(np.abs(laplacian_values(g, u.values)))),
        sup_p=float(np.max(np.abs(p.values))),
        sup_grad_p=float(np.max(grad_norm_values(g, p.values))),
        N3=problem.N3, N4=problem.N4)


@dataclass
class ResidualDifferenceReport:
    """Pointwise ratios behind the two difference inequalities.

    ``ratio_u = |u~_t + b Lap u~| / (|grad u~| + |p~| + int|p~|)`` and
    ``ratio_p = |p~_t - b Lap p~ + kappa^2 p1 Lap u~| / (|grad p~| + |p~| + |grad u~|)``,
    taken where the bracket exceeds ``floor`` times its maximum.
    """

    ratio_u: np.ndarray
    ratio_p: np.ndarray
    degenerate: bool

    @property
    def sup_ratio(self) -> float:
        if self.degenerate:
            return math.nan
        return float(max(np.nanmax(self.ratio_u), np.nanmax(self.ratio_p)))


def _masked_ratio(num, den, floor):
    top = float(np.max(den))
    if top <= 0:
        return np.full(den.shape, np.nan), True
    out = np.full(den.shape, np.nan)
    mask = den > floor * top
    out[mask] = num[mask] / den[mask]
    return out, False


def residual_difference_check(pair1: tuple[ScalarField, ScalarField], pair2: tuple[ScalarField, ScalarField],
                              problem: MfgProblem, floor: float = 1e-3) -> ResidualDifferenceReport:
    (u1, p1), (u2, p2) = pair1, pair2
    _check_pair(u1, p1, problem)
    _check_pair(u2, p2, problem)
    g = problem.grid
    ud = u1.values - u2.values
    pd = p1.values - p2.values
    beta = problem.beta
    lap_ud = laplacian_values(g, ud)
    gu = grad_norm_values(g, ud)
    gp = grad_norm_values(g, pd)
    mass_pd = np.asarray(_space_integral_values(g, np.abs(pd)))
    lhs_u = np.abs(time_derivative_values(g, ud) + beta * lap_ud)
    br_u = gu + np.abs(pd) + mass_pd[(None,) * g.n_dim]
    lhs_p = np.abs(time_derivative_values(g, pd) - beta * laplacian_values(g, pd)
                   + problem.kappa2[..., None] * p1.values * lap_ud)
    br_p = gp + np.abs(pd) + gu
    ru, deg_u = _masked_ratio(lhs_u, br_u, floor)
    rp, deg_p = _masked_ratio(lhs_p, br_p, floor)
    return ResidualDifferenceReport(ru, rp, deg_u or deg_p)

