"""Uniform space-time grids on boxes with zero-Neumann difference operators.

Nodes are vertex centred (``x_i = i*h``, both endpoints included). Every
spatial operator uses mirror ghosts (``u_{-1} = u_1``), which makes any nodal
vector Neumann compatible and gives the compact Laplacian an exact
summation-by-parts partner: the face-difference gradient, paired under the
trapezoid weights (see :func:`dirichlet_form`).

Value arrays are laid out spatial axes first, time last: ``(nx, nt)`` in 1D
and ``(nx, ny, nt)`` in 2D.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class SpaceTimeGrid:
    lengths: tuple[float, ...]
    shape: tuple[int, ...]
    nt: int
    T: float

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if len(self.lengths) != len(self.shape):
            raise ValueError("lengths and shape must have one entry per axis")
        if self.n_dim not in (1, 2):
            raise ValueError(f"only 1D and 2D boxes are supported, got n_dim={self.n_dim}")
        if any(n < 8 for n in self.shape) or self.nt < 8:
            raise ValueError("need at least 8 points per axis and 8 time points")
        if any(not np.isfinite(L) or L <= 0 for L in self.lengths):
            raise ValueError("axis lengths must be positive")
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError("horizon T must be positive")

    @classmethod
    def make(cls, nx: int | Sequence[int] = 201, nt: int = 401, T: float = 0.3,
             lengths: float | Sequence[float] = 1.0, n_dim: int = 1) -> "SpaceTimeGrid":
        if np.isscalar(nx):
            nx = (int(nx),) * n_dim
        if np.isscalar(lengths):
            lengths = (float(lengths),) * len(nx)
        return cls(tuple(lengths), tuple(nx), int(nt), float(T))

    @property
    def n_dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.lengths, self.shape))

    @property
    def tau(self) -> float:
        return self.T / (self.nt - 1)

    @property
    def value_shape(self) -> tuple[int, ...]:
        return self.shape + (self.nt,)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, L, n) for L, n in zip(self.lengths, self.shape)]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt)

    def space_weights(self) -> np.ndarray:
        """Tensorised trapezoid weights over the spatial nodes."""
        w = _trapezoid_weights(self.shape[0], self.h[0])
        for n, h in zip(self.shape[1:], self.h[1:]):
            w = np.multiply.outer(w, _trapezoid_weights(n, h))
        return w

    def time_weights(self) -> np.ndarray:
        return _trapezoid_weights(self.nt, self.tau)

    def refined(self, factor: int = 2) -> "SpaceTimeGrid":
        """Grid with every spacing divided by ``factor``."""
        shape = tuple((n - 1) * factor + 1 for n in self.shape)
        return SpaceTimeGrid(self.lengths, shape, (self.nt - 1) * factor + 1, self.T)

    def with_nt(self, nt: int) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.lengths, self.shape, nt, self.T)


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: SpaceTimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.value_shape:
            raise ValueError(f"value shape {vals.shape} does not match grid {self.grid.value_shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite entries")
        object.__setattr__(self, "values", vals)

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def __sub__(self, other: "ScalarField"):
        _check_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __add__(self, other: "ScalarField"):
        _check_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def scaled(self, alpha: float) -> "ScalarField":
        return ScalarField(self.grid, alpha * self.values)


@dataclass(frozen=True, eq=False)
class SpatialSlice:
    grid: SpaceTimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"slice shape {vals.shape} does not match spatial grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("slice contains non-finite entries")
        object.__setattr__(self, "values", vals)

    def __sub__(self, other: "SpatialSlice"):
        _check_same_grid(self.grid, other.grid, spatial_only=True)
        return SpatialSlice(self.grid, self.values - other.values)

    def __add__(self, other: "SpatialSlice"):
        _check_same_grid(self.grid, other.grid, spatial_only=True)
        return SpatialSlice(self.grid, self.values + other.values)


def _check_same_grid(g1, g2, spatial_only=False):
    same = g1.lengths == g2.lengths and g1.shape == g2.shape
    if not spatial_only:
        same = same and g1.nt == g2.nt and g1.T == g2.T
    if not same:
        raise ValueError("fields live on different grids")


def _unwrap(obj):
    if isinstance(obj, (ScalarField, SpatialSlice)):
        return obj.grid, obj.values
    raise TypeError(f"expected ScalarField or SpatialSlice, got {type(obj).__name__}")


def _rewrap(like, values):
    return type(like)(like.grid, values)


# ---------------------------------------------------------------------------
# array-level stencils (spatial axes first, any trailing axes broadcast)
# ---------------------------------------------------------------------------


def central_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central difference along ``axis``; zero at both ends (mirror ghost)."""
    v = np.moveaxis(values, axis, 0)
    out = np.zeros_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def second_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Compact 3-point second difference with mirror ghosts."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    out[0] = 2.0 * (v[1] - v[0]) / (h * h)
    out[-1] = 2.0 * (v[-2] - v[-1]) / (h * h)
    return np.moveaxis(out, 0, axis)


def face_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Forward differences living on the faces between nodes along ``axis``."""
    return np.diff(values, axis=axis) / h


def face_average(values: np.ndarray, axis: int) -> np.ndarray:
    v = np.moveaxis(values, axis, 0)
    return np.moveaxis(0.5 * (v[1:] + v[:-1]), 0, axis)


def face_divergence(flux: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Nodal divergence of a face flux with zero flux through the boundary.

    At boundary nodes the single adjacent face counts twice, the mirror image
    of an odd flux. Under trapezoid weights the result sums to zero exactly.
    """
    f = np.moveaxis(flux, axis, 0)
    out = np.empty((f.shape[0] + 1,) + f.shape[1:])
    out[1:-1] = (f[1:] - f[:-1]) / h
    out[0] = 2.0 * f[0] / h
    out[-1] = -2.0 * f[-1] / h
    return np.moveaxis(out, 0, axis)


def _space_integral_values(grid: SpaceTimeGrid, values: np.ndarray) -> np.ndarray | float:
    w = grid.space_weights()
    nd = grid.n_dim
    return np.tensordot(w, values, axes=(tuple(range(nd)), tuple(range(nd))))


def _face_weights(grid: SpaceTimeGrid, axis: int) -> np.ndarray:
    """Weights for face-centred quantities along ``axis``: h on that axis, trapezoid elsewhere."""
    parts = []
    for k, (n, h) in enumerate(zip(grid.shape, grid.h)):
        parts.append(np.full(n - 1, h) if k == axis else _trapezoid_weights(n, h))
    w = parts[0]
    for p in parts[1:]:
        w = np.multiply.outer(w, p)
    return w


def dirichlet_values(grid: SpaceTimeGrid, u: np.ndarray, v: np.ndarray | None = None):
    """Face-based ``int grad u . grad v dx``; per time level for space-time arrays."""
    v = u if v is None else v
    nd = grid.n_dim
    total = 0.0
    for axis in range(nd):
        du = face_diff(u, axis, grid.h[axis])
        dv = du if v is u else face_diff(v, axis, grid.h[axis])
        total = total + np.tensordot(_face_weights(grid, axis), du * dv,
                                     axes=(tuple(range(nd)), tuple(range(nd))))
    return total


def laplacian_values(grid: SpaceTimeGrid, values: np.ndarray) -> np.ndarray:
    out = second_diff(values, 0, grid.h[0])
    for axis in range(1, grid.n_dim):
        out = out + second_diff(values, axis, grid.h[axis])
    return out


def gradient_values(grid: SpaceTimeGrid, values: np.ndarray) -> list[np.ndarray]:
    return [central_diff(values, axis, grid.h[axis]) for axis in range(grid.n_dim)]


def grad_norm_values(grid: SpaceTimeGrid, values: np.ndarray) -> np.ndarray:
    return np.sqrt(sum(g * g for g in gradient_values(grid, values)))


def time_derivative_values(grid: SpaceTimeGrid, values: np.ndarray) -> np.ndarray:
    return np.gradient(values, grid.tau, axis=-1, edge_order=2)


# ---------------------------------------------------------------------------
# public operations on fields
# ---------------------------------------------------------------------------


def gradient(obj):
    """Central-difference gradient, one component per axis, zero normal part at the boundary."""
    grid, values = _unwrap(obj)
    return [_rewrap(obj, g) for g in gradient_values(grid, values)]


def laplacian(obj):
    grid, values = _unwrap(obj)
    return _rewrap(obj, laplacian_values(grid, values))


def dirichlet_form(u, v=None):
    """Discrete ``int_Omega grad u . grad v``; the exact partner of :func:`laplacian`.

    For every pair of nodal arrays,
    ``integrate_space(laplacian(u) * v) == -dirichlet_form(u, v)`` to rounding.
    Returns a float for slices and a per-time array for space-time fields.
    """
    grid, uv = _unwrap(u)
    vv = None if v is None else _unwrap(v)[1]
    return dirichlet_values(grid, uv, vv)


def integrate_space(obj):
    """Trapezoid rule per axis. A float for slices, a per-time array for fields."""
    grid, values = _unwrap(obj)
    out = _space_integral_values(grid, values)
    return float(out) if isinstance(obj, SpatialSlice) else np.asarray(out)


def integrate_spacetime(obj: ScalarField) -> float:
    grid, values = _unwrap(obj)
    per_time = _space_integral_values(grid, values)
    return float(np.dot(grid.time_weights(), per_time))


def time_derivative(obj: ScalarField) -> ScalarField:
    """Central differences inside, second-order one-sided at t=0 and t=T."""
    grid, values = _unwrap(obj)
    return ScalarField(grid, time_derivative_values(grid, values))


def norm_l2_omega(obj: SpatialSlice) -> float:
    grid, values = _unwrap(obj)
    return float(np.sqrt(max(_space_integral_values(grid, values * values), 0.0)))


def norm_h1_omega(obj: SpatialSlice) -> float:
    grid, values = _unwrap(obj)
    sq = _space_integral_values(grid, values * values) + dirichlet_values(grid, values)
    return float(np.sqrt(max(sq, 0.0)))


def norm_h10(obj: ScalarField) -> float:
    """``(int_{Q_T} u^2 + |grad u|^2)^{1/2}`` with face gradients and trapezoid in time."""
    grid, values = _unwrap(obj)
    per_time = _space_integral_values(grid, values * values) + dirichlet_values(grid, values)
    return float(np.sqrt(max(np.dot(grid.time_weights(), per_time), 0.0)))


def slice_at(obj: ScalarField, index: int) -> SpatialSlice:
    grid, values = _unwrap(obj)
    if not -grid.nt <= index < grid.nt:
        raise IndexError(f"time index {index} out of range for nt={grid.nt}")
    return SpatialSlice(grid, values[..., index].copy())


def constant_field(grid: SpaceTimeGrid, c: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.value_shape, float(c)))


def field_from_function(grid: SpaceTimeGrid, fn) -> ScalarField:
    """Sample ``fn(*x_axes, t)`` on the full space-time mesh."""
    coords = np.meshgrid(*grid.axes(), grid.times, indexing="ij")
    return ScalarField(grid, np.broadcast_to(fn(*coords), grid.value_shape).copy())


def slice_from_function(grid: SpaceTimeGrid, fn) -> SpatialSlice:
    return SpatialSlice(grid, np.broadcast_to(fn(*grid.mesh()), grid.shape).copy())


def broadcast_in_time(s: SpatialSlice) -> ScalarField:
    return ScalarField(s.grid, np.repeat(s.values[..., None], s.grid.nt, axis=-1))


# ---------------------------------------------------------------------------
# random Neumann-compatible corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CosineSeries:
    """``sum c[k..., m] prod_j cos(k_j pi x_j / L_j) cos(m pi t / T)``.

    Grid independent, so the same member can be sampled on a refinement ladder.
    """

    coeffs: np.ndarray
    lengths: tuple[float, ...]
    T: float

    def sample(self, grid: SpaceTimeGrid) -> ScalarField:
        if tuple(grid.lengths) != tuple(self.lengths) or grid.T != self.T:
            raise ValueError("series domain does not match grid")
        mats = [_cos_basis(x, L, self.coeffs.shape[j])
                for j, (x, L) in enumerate(zip(grid.axes(), self.lengths))]
        tb = _cos_basis(grid.times, self.T, self.coeffs.shape[-1])
        if grid.n_dim == 1:
            vals = mats[0] @ self.coeffs @ tb.T
        else:
            vals = np.einsum("ia,jb,abm,tm->ijt", mats[0], mats[1], self.coeffs, tb)
        return ScalarField(grid, vals)

    def evaluate(self, *coords):
        """Pointwise evaluation at arbitrary (possibly out-of-box) coordinates."""
        *xs, t = coords
        out = 0.0
        for idx in np.ndindex(self.coeffs.shape):
            term = self.coeffs[idx] * np.cos(idx[-1] * np.pi * np.asarray(t) / self.T)
            for j, x in enumerate(xs):
                term = term * np.cos(idx[j] * np.pi * np.asarray(x) / self.lengths[j])
            out = out + term
        return out


def _cos_basis(x, L, modes):
    k = np.arange(modes)
    return np.cos(np.pi * np.outer(x, k) / L)


def cosine_corpus(seed: int, count: int, lengths: Sequence[float], T: float,
                  decay: float = 2.0, modes: int = 6, time_modes: int | None = None) -> list[CosineSeries]:
    """Random cosine series with coefficients ``N(0,1) * (1 + |k|^2 + m^2)^(-decay)``.

    Member ``j`` depends only on ``(seed, j)``, not on ``count``.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if modes < 1:
        raise ValueError("modes must be >= 1")
    time_modes = modes if time_modes is None else time_modes
    lengths = tuple(float(L) for L in lengths)
    nd = len(lengths)
    shape = (modes,) * nd + (time_modes,)
    ksq = np.zeros(shape)
    for axis, n in enumerate(shape):
        r = np.arange(n, dtype=float) ** 2
        ksq = ksq + r.reshape([-1 if a == axis else 1 for a in range(len(shape))])
    envelope = (1.0 + ksq) ** (-float(decay))
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        out.append(CosineSeries(rng.standard_normal(shape) * envelope, lengths, float(T)))
    return out


def neumann_corpus(grid: SpaceTimeGrid, seed: int, count: int, decay: float = 2.0,
                   modes: int = 6) -> list[ScalarField]:
    """Discrete stand-ins for zero-Neumann space-time functions, sampled on ``grid``."""
    series = cosine_corpus(seed, count, grid.lengths, grid.T, decay=decay, modes=modes)
    return [s.sample(grid) for s in series]


# ---------------------------------------------------------------------------
# binary layout: little-endian header then row-major float64 values
#   int64 n_dim, int64 nx[n_dim], int64 nt, float64 lengths[n_dim], float64 T
# slices are written with nt = 0 and carry no time axis.
# ---------------------------------------------------------------------------


def _header_bytes(grid: SpaceTimeGrid, nt: int) -> bytes:
    nd = grid.n_dim
    return struct.pack(f"<q{nd}qq{nd}dd", nd, *grid.shape, nt, *grid.lengths, grid.T)


def write_field(path: str | Path, obj) -> None:
    grid, values = _unwrap(obj)
    nt = grid.nt if isinstance(obj, ScalarField) else 0
    with open(path, "wb") as fh:
        fh.write(_header_bytes(grid, nt))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_field(path: str | Path, nt_if_slice: int | None = None):
    """Inverse of :func:`write_field`; slices come back with ``nt_if_slice`` (default 8) on their grid."""
    data = Path(path).read_bytes()
    (nd,) = struct.unpack_from("<q", data, 0)
    if nd not in (1, 2):
        raise ValueError(f"bad header: n_dim={nd}")
    fmt = f"<{nd}qq{nd}dd"
    parsed = struct.unpack_from(fmt, data, 8)
    shape, nt = tuple(parsed[:nd]), parsed[nd]
    lengths, T = tuple(parsed[nd + 1:2 * nd + 1]), parsed[-1]
    offset = 8 + struct.calcsize(fmt)
    vals = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
    if nt == 0:
        grid = SpaceTimeGrid(lengths, shape, nt_if_slice or 8, T)
        return SpatialSlice(grid, vals.reshape(shape))
    grid = SpaceTimeGrid(lengths, shape, nt, T)
    return ScalarField(grid, vals.reshape(shape + (nt,)))
