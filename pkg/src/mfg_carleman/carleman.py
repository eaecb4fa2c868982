"""Carleman weight, weighted quadrature and the two weighted estimates.

The weight is ``phi(t) = exp(2 (T - t + a)**lam)``. Every quantity here is
reported in the frame divided by ``phi(0)``; each summand is carried as a
``(sign, log-magnitude)`` pair so that inequalities keep their truth value
even when the plain numbers would overflow or underflow.

Weighted time integrals use product integration: the integrand is linear
between time nodes and the weight is integrated exactly per cell (Gauss-
Legendre on the part of the cell where the weight has not yet dropped by
``exp(-36)``, a tangent asymptotic when that part is below resolution). This
stays accurate when the weight collapses to a layer at ``t=0`` that is far
narrower than the time step.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .grid import (
    ScalarField,
    SpaceTimeGrid,
    _space_integral_values,
    dirichlet_values,
    grad_norm_values,
    laplacian_values,
    time_derivative_values,
)

LOG_OVERFLOW = 700.0
_DROP_CUT = 36.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def default_shift(T: float) -> float:
    """The shift ``a = 2 + sqrt(1/4 + T)``, which makes ``(T+a)/a**2 < 1``."""
    if not T > 0:
        raise ValueError("T must be positive")
    return 2.0 + math.sqrt(0.25 + T)


@dataclass(frozen=True)
class CarlemanParams:
    T: float
    a: float
    lam: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.a > 2:
            raise ValueError(f"shift a must exceed 2, got {self.a}")
        if not self.lam >= 2:
            raise ValueError(f"lambda must be >= 2, got {self.lam}")

    @classmethod
    def default(cls, T: float, lam: float | None = None) -> "CarlemanParams":
        a = default_shift(T)
        lam0 = 16.0 * (T + a) ** 2
        return cls(T=float(T), a=a, lam=float(lam0 if lam is None else lam))

    @property
    def lam0(self) -> float:
        return 16.0 * (self.T + self.a) ** 2

    @property
    def rho(self) -> float:
        return (self.T + self.a) / self.a ** 2

    @property
    def uses_default_shift(self) -> bool:
        return math.isclose(self.a, default_shift(self.T), rel_tol=0, abs_tol=1e-15)

    def with_lambda(self, lam: float) -> "CarlemanParams":
        return replace(self, lam=float(lam))

    def header(self) -> dict:
        d = asdict(self)
        d.update(lam0=self.lam0, rho=self.rho)
        return d


def lambda_threshold(params: CarlemanParams) -> float:
    """``16 (T+a)^2``; also asserts the chain ``> 16 a^2 > 64``."""
    lam0 = params.lam0
    if not (lam0 > 16.0 * params.a ** 2 > 64.0):
        raise ArithmeticError("threshold chain 16(T+a)^2 > 16a^2 > 64 failed")
    return lam0


def _check_times(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > T):
        raise ValueError("t must lie in [0, T]")
    return t


def weight_log(t, params: CarlemanParams):
    """``ln phi(t) = 2 (T - t + a)**lam``; ``inf`` once that overflows."""
    t = _check_times(t, params.T)
    with np.errstate(over="ignore"):
        out = 2.0 * np.exp(params.lam * np.log(params.T - t + params.a))
    return float(out) if out.ndim == 0 else out


def _rescaled_log(t, params: CarlemanParams):
    """``ln(phi(t)/phi(0)) = 2((T-t+a)^lam - (T+a)^lam)``, computed without cancellation."""
    t = np.asarray(t, dtype=float)
    s0 = params.T + params.a
    log_ratio = np.log((s0 - t) / s0)
    with np.errstate(over="ignore", invalid="ignore"):
        out = -2.0 * np.exp(params.lam * math.log(s0)) * (-np.expm1(params.lam * log_ratio))
    out = np.where(t == 0, 0.0, out)
    return np.where(np.isnan(out), -np.inf, out)


def weight_rescaled(t, params: CarlemanParams):
    """``phi(t)/phi(0)`` in ``(0, 1]``; underflows to 0 deep inside the layer."""
    t = _check_times(t, params.T)
    out = np.exp(_rescaled_log(t, params))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# weighted time quadrature
# ---------------------------------------------------------------------------


def log_cell_moments(times: np.ndarray, params: CarlemanParams, power: float = 0.0) -> np.ndarray:
    """Logs of ``int_cell l_i l_j s**power phi/phi(0) dt`` per time cell, shape ``(3, nt-1)``.

    Rows are ``(l0 l0, l0 l1, l1 l1)`` with the hat functions ``l0 = 1 - theta``
    and ``l1 = theta`` of the cell; ``s = T - t + a``. Fields interpolated
    linearly in time are then integrated in bilinear forms without further
    error. Each cell uses a 48-point Gauss-Legendre rule on the part where the
    weight drops by less than ``e**36``; when that part is too thin to
    resolve, the tangent exponential of the log-weight is integrated instead.
    ``-inf`` entries mean underflow.
    """
    times = np.asarray(times, dtype=float)
    lam = params.lam
    s = params.T - times + params.a
    log_s = np.log(s)
    ell = _rescaled_log(times, params)
    tau = np.diff(times)
    nc = tau.size

    P = lam * log_s[:-1]  # ln s_k^lam
    with np.errstate(divide="ignore"):
        log_drop = math.log(2.0) + P + np.log(-np.expm1(lam * (log_s[1:] - log_s[:-1])))
    whole = log_drop <= math.log(_DROP_CUT)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        x = np.exp(math.log(0.5 * _DROP_CUT) - P)
        delta = np.where(whole, tau, s[:-1] * -np.expm1(np.log1p(-np.minimum(x, 1.0)) / lam))
    delta = np.minimum(delta, tau)
    asym = ~whole & ~((delta > 1e-13 * tau) & (delta > 1e-250))

    out = np.empty((3, nc))
    gl = ~asym
    if np.any(gl):
        sk = s[:-1][gl][:, None]
        Pk = P[gl][:, None]
        d = delta[gl][:, None]
        tk = tau[gl][:, None]
        off = 0.5 * (_GL_X[None, :] + 1.0) * d
        lr = np.log1p(-off / sk)
        with np.errstate(over="ignore", under="ignore"):
            expo = -2.0 * np.exp(Pk) * (-np.expm1(lam * lr)) + power * lr
        kern = np.exp(expo) * (0.5 * d) * _GL_W[None, :]
        theta = off / tk
        with np.errstate(divide="ignore"):
            out[0, gl] = np.log(np.sum(kern * (1.0 - theta) ** 2, axis=1))
            out[1, gl] = np.log(np.sum(kern * theta * (1.0 - theta), axis=1))
            out[2, gl] = np.log(np.sum(kern * theta * theta, axis=1))
    if np.any(asym):
        # weight ~ exp(-r t') on the cell; moments of theta^n are n!/(r^(n+1) tau^n)
        lsk = log_s[:-1][asym]
        terms = [math.log(2.0 * lam) + P[asym] - lsk]
        if power > 0:
            terms.append(math.log(power) - lsk)
        log_r = np.logaddexp.reduce(np.vstack(terms), axis=0) if len(terms) > 1 else terms[0]
        log_inv = -(log_r + np.log(tau[asym]))  # ln 1/(r tau), very negative here
        inv = np.exp(log_inv)
        out[0, asym] = -log_r + np.log1p(-2.0 * inv + 2.0 * inv * inv)
        out[1, asym] = -log_r + log_inv + np.log1p(-2.0 * inv)
        out[2, asym] = -log_r + math.log(2.0) + 2.0 * log_inv

    return out + (ell[:-1] + power * log_s[:-1])[None, :]


def log_time_weights(times: np.ndarray, params: CarlemanParams, power: float = 0.0) -> np.ndarray:
    """Log node weights ``w_k`` with ``sum w_k g_k = int g s**power phi/phi(0) dt`` for piecewise-linear ``g``."""
    m = log_cell_moments(times, params, power)
    out = np.full(np.asarray(times).size, -np.inf)
    out[:-1] = np.logaddexp(m[0], m[1])
    out[1:] = np.logaddexp(out[1:], np.logaddexp(m[1], m[2]))
    return out


def _weighted_form(grid: SpaceTimeGrid, log_m: np.ndarray, a: np.ndarray, b: np.ndarray | None = None,
                   grad: bool = False) -> tuple[float, float]:
    """Signed log of ``int int a b phi/phi(0)`` with ``a`` and ``b`` linear in time on each cell.

    ``grad=True`` pairs the gradients instead of the values.
    """
    b = a if b is None else b
    if grad:
        def pair(x, y):
            return np.asarray(dirichlet_values(grid, x, y))
    else:
        def pair(x, y):
            return np.asarray(_space_integral_values(grid, x * y))
    a0, a1, b0, b1 = a[..., :-1], a[..., 1:], b[..., :-1], b[..., 1:]
    A = pair(a0, b0)
    C = pair(a1, b1)
    B = pair(a0, b1) if b is a else 0.5 * (pair(a0, b1) + pair(a1, b0))
    logs = np.concatenate([log_m[0], log_m[1] + math.log(2.0), log_m[2]])
    return _signed_log_sum(logs, np.concatenate([A, B, C]))


def _signed_log_sum(log_w: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    """``(sign, ln|sum_k exp(log_w_k) g_k|)``; sign 0 with ``-inf`` for an exact zero."""
    g = np.asarray(g, dtype=float)
    mask = (g != 0) & np.isfinite(log_w)
    if not np.any(mask):
        return 0.0, -np.inf
    val, sgn = logsumexp(log_w[mask], b=g[mask], return_sign=True)
    if sgn == 0 or not np.isfinite(val):
        return 0.0, -np.inf
    return float(sgn), float(val)


def _log_pos(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


# ---------------------------------------------------------------------------
# estimate containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateTerms:
    """Summands of a weighted inequality ``lhs >= sum(rhs)`` in the ``phi(0)`` frame.

    ``rescaled`` holds the plain values divided by ``exp(log_frame)``; the
    frame offset is 0 unless the largest term would overflow.
    """

    names: tuple[str, ...]
    signs: np.ndarray
    log_magnitudes: np.ndarray
    n_lhs: int
    params: CarlemanParams
    constants: dict = field(default_factory=dict)

    @property
    def log_frame(self) -> float:
        finite = self.log_magnitudes[np.isfinite(self.log_magnitudes)]
        top = float(finite.max()) if finite.size else 0.0
        return top if top > LOG_OVERFLOW else 0.0

    @property
    def rescaled(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return self.signs * np.exp(self.log_magnitudes - self.log_frame)

    def value(self, name: str) -> float:
        return float(self.rescaled[self.names.index(name)])

    @property
    def lhs_total(self) -> float:
        return float(np.sum(self.rescaled[: self.n_lhs]))

    @property
    def rhs_total(self) -> float:
        return float(np.sum(self.rescaled[self.n_lhs:]))

    @property
    def margin(self) -> float:
        return self.lhs_total - self.rhs_total

    def _margin_signed_log(self) -> tuple[float, float]:
        coeff = np.concatenate([self.signs[: self.n_lhs], -self.signs[self.n_lhs:]])
        return _signed_log_sum(self.log_magnitudes, coeff)

    @property
    def margin_sign(self) -> float:
        return self._margin_signed_log()[0]

    @property
    def margin_log(self) -> float:
        return self._margin_signed_log()[1]

    @property
    def scale_log(self) -> float:
        finite = self.log_magnitudes[(self.signs != 0) & np.isfinite(self.log_magnitudes)]
        return float(logsumexp(finite)) if finite.size else -math.inf

    @property
    def relative_margin(self) -> float:
        """Margin divided by the sum of absolute terms; 0 when every term vanishes."""
        sgn, lg = self._margin_signed_log()
        if sgn == 0:
            return 0.0
        return float(sgn * math.exp(lg - self.scale_log))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term_name", "sign", "log_magnitude", "rescaled_value"])
        for name, sg, lg, rv in zip(self.names, self.signs, self.log_magnitudes, self.rescaled):
            w.writerow([name, f"{sg:.0f}", repr(float(lg)), repr(float(rv))])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        header = dict(self.params.header(), log_frame=self.log_frame, **self.constants)
        Path(path).write_text("---\n" + json.dumps(header, sort_keys=True) + "\n---\n" + self.to_csv())


def read_terms_csv(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse a file written by :meth:`EstimateTerms.write` into (header, rows)."""
    text = Path(path).read_text()
    if not text.startswith("---\n"):
        raise ValueError("missing JSON front matter")
    _, head, body = text.split("---\n", 2)
    rows = list(csv.DictReader(io.StringIO(body)))
    return json.loads(head), rows


def _terms(names, signs, logs, n_lhs, params, log_scale=0.0, **constants) -> EstimateTerms:
    return EstimateTerms(tuple(names), np.asarray(signs, float), np.asarray(logs, float) + log_scale,
                         n_lhs, params, dict(constants))


# ---------------------------------------------------------------------------
# transform
# ---------------------------------------------------------------------------


def carleman_transform(u: ScalarField, params: CarlemanParams) -> ScalarField:
    """``u exp((T-t+a)^lam - (T+a)^lam)``: the substitution ``v = u e^{(T-t+a)^lam}`` over ``e^{(T+a)^lam}``."""
    half = 0.5 * _rescaled_log(u.grid.times, params)
    with np.errstate(under="ignore"):
        return ScalarField(u.grid, u.values * np.exp(half))


def inverse_transform(v: ScalarField, params: CarlemanParams) -> ScalarField:
    half = 0.5 * _rescaled_log(v.grid.times, params)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = v.values * np.exp(-half)
    if not np.all(np.isfinite(vals)):
        raise OverflowError("inverse transform overflows at this lambda; the layer is unresolved")
    return ScalarField(v.grid, vals)


# ---------------------------------------------------------------------------
# spatial per-time ingredients
# ---------------------------------------------------------------------------


def _per_time(grid: SpaceTimeGrid, values: np.ndarray) -> np.ndarray:
    return np.asarray(_space_integral_values(grid, values))


def _unit_sup(*arrays) -> tuple[list[np.ndarray], float]:
    """Divide by the common sup norm; every term is quadratic, so it returns ``2 ln(sup)`` to add back."""
    top = max(float(np.max(np.abs(a))) for a in arrays)
    if top == 0 or top == 1:
        return list(arrays), 0.0
    return [a / top for a in arrays], 2.0 * math.log(top)


def _check_field(u: ScalarField, params: CarlemanParams):
    if not math.isclose(u.grid.T, params.T, rel_tol=1e-12):
        raise ValueError("field horizon does not match Carleman parameters")


def identity_360_terms(u: ScalarField, params: CarlemanParams, beta: float) -> EstimateTerms:
    """Both sides of the exact weighted energy identity for ``-u_t - beta Lap u``.

    ``int (-u_t - b Lap u) u phi = b int |grad u|^2 phi - lam int s^(lam-1) u^2 phi
    - 1/2 phi(T) int u^2(T) + 1/2 phi(0) int u^2(0)``. The margin is the
    discretisation residual.
    """
    _check_field(u, params)
    g = u.grid
    lam = params.lam
    (vals,), log_scale = _unit_sup(u.values)
    ut = time_derivative_values(g, vals)
    lap = laplacian_values(g, vals)
    log_m = log_cell_moments(g.times, params)
    log_mp = log_cell_moments(g.times, params, power=lam - 1.0) + math.log(lam)
    U2 = _per_time(g, vals * vals)
    ell_T = float(_rescaled_log(np.array([g.T]), params)[0])

    lhs = _weighted_form(g, log_m, -ut - beta * lap, vals)
    r1 = _weighted_form(g, log_m, vals, grad=True)
    r1 = (r1[0], math.log(beta) + r1[1])
    r2 = _weighted_form(g, log_mp, vals)
    r2 = (-r2[0], r2[1])
    r3 = (-1.0 if U2[-1] > 0 else 0.0, math.log(0.5) + ell_T + _log_pos(U2[-1]))
    r4 = (1.0 if U2[0] > 0 else 0.0, math.log(0.5) + _log_pos(U2[0]))
    parts = [lhs, r1, r2, r3, r4]
    names = ["lhs:energy_pairing", "rhs:grad_sq", "rhs:weight_derivative", "rhs:terminal", "rhs:initial"]
    return _terms(names, [p[0] for p in parts], [p[1] for p in parts], 1, params, log_scale)


def identity_360_residual(u: ScalarField, params: CarlemanParams, beta: float) -> float:
    """LHS minus RHS of the weighted energy identity, in the ``phi(0)`` frame."""
    return identity_360_terms(u, params, beta).margin


def identity_360_relative_residual(u: ScalarField, params: CarlemanParams, beta: float) -> float:
    terms = identity_360_terms(u, params, beta)
    return abs(terms.relative_margin)


def theorem31_terms(u: ScalarField, params: CarlemanParams, beta: float,
                    literal_paper: bool = False) -> EstimateTerms:
    """Summands of the Carleman estimate for ``d/dt + beta Lap``.

    ``lhs = int (u_t + b Lap u)^2 phi`` against
    ``2/3 sqrt(lam) b int |grad u|^2 phi + lam^2/12 a^(lam-2) int u^2 phi
    - 2/3 phi(T) int (b|grad u|^2 + u^2/2)(T) - 2/3 lam (T+a)^(lam-1) W0 int u^2(0)``.

    ``W0 = phi(0)`` by default, which is what integrating the pointwise bound
    produces; ``literal_paper=True`` uses ``W0 = 1`` as printed.
    """
    _check_field(u, params)
    if params.lam < 2:
        raise ValueError("lambda must be >= 2")
    g = u.grid
    lam, a = params.lam, params.a
    s0 = params.T + a
    (vals,), log_scale = _unit_sup(u.values)
    op = time_derivative_values(g, vals) + beta * laplacian_values(g, vals)
    log_m = log_cell_moments(g.times, params)
    U2 = _per_time(g, vals * vals)
    E = dirichlet_values(g, vals)
    ell_T = float(_rescaled_log(np.array([g.T]), params)[0])

    lhs = _weighted_form(g, log_m, op)
    i_grad = _weighted_form(g, log_m, vals, grad=True)
    i_u2 = _weighted_form(g, log_m, vals)
    la = math.log(2.0 / 3.0)
    grad_term = (i_grad[0], la + 0.5 * math.log(lam) + math.log(beta) + i_grad[1])
    u2_term = (i_u2[0], 2 * math.log(lam) - math.log(12.0) + (lam - 2) * math.log(a) + i_u2[1])
    endT = beta * E[-1] + 0.5 * U2[-1]
    term_T = (-1.0 if endT > 0 else 0.0, la + ell_T + _log_pos(endT))
    log_init = la + math.log(lam) + (lam - 1) * math.log(s0) + _log_pos(U2[0])
    if literal_paper:
        with np.errstate(over="ignore"):
            log_init -= 2.0 * math.exp(min(lam * math.log(s0), 709.0)) if lam * math.log(s0) < 709 else math.inf
    term_0 = (-1.0 if U2[0] > 0 else 0.0, log_init)
    parts = [lhs, grad_term, u2_term, term_T, term_0]
    names = ["lhs:operator_sq", "rhs:grad_sq", "rhs:u_sq", "rhs:terminal", "rhs:initial"]
    return _terms(names, [p[0] for p in parts], [p[1] for p in parts], 1, params, log_scale,
                  mode="literal_paper" if literal_paper else "corrected")


def sup_and_grad_bound(f: ScalarField) -> float:
    """``C_f = max(sup|f|, sup|grad f|)`` on the grid."""
    return float(max(np.max(np.abs(f.values)), np.max(grad_norm_values(f.grid, f.values))))


def certified_c1(c_f: float, beta: float) -> float:
    """Constant delivered by the two Cauchy-Schwarz bounds: ``C_f^2 (1 + 1/beta)``."""
    return c_f * c_f * (1.0 + 1.0 / beta)


def theorem32_terms(u: ScalarField, q: ScalarField, f: ScalarField | np.ndarray,
                    params: CarlemanParams, beta: float, c1: float | None = None) -> EstimateTerms:
    """Summands of the quasi-Carleman estimate for ``u_t - beta Lap u + f Lap q``.

    ``lhs = int (u_t - b Lap u + f Lap q)^2 phi`` against
    ``lam^2/4 a^(2lam-2) int u^2 phi + b lam a^(lam-1) int |grad u|^2 phi
    - C1 lam (T+a)^(lam-1) int |grad q|^2 phi - lam (T+a)^(lam-1) phi(0) int u^2(0)``.

    The margin is linear in ``C1``, so the smallest nonnegative ``C1`` that
    closes it is found in closed form and returned as ``constants['c1_hat']``
    (``inf`` if no finite value works). If ``c1`` is None the terms are
    evaluated at that fitted value.
    """
    _check_field(u, params)
    _check_field(q, params)
    if params.lam < 2:
        raise ValueError("lambda must be >= 2")
    g = u.grid
    f_vals = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)
    if f_vals.shape != g.value_shape or not np.all(np.isfinite(f_vals)):
        raise ValueError("f must be a finite field on the same grid")
    f_field = f if isinstance(f, ScalarField) else ScalarField(g, f_vals)
    lam, a = params.lam, params.a
    s0 = params.T + a
    (uv, qv), log_scale = _unit_sup(u.values, q.values)
    op = time_derivative_values(g, uv) - beta * laplacian_values(g, uv) + f_vals * laplacian_values(g, qv)
    log_m = log_cell_moments(g.times, params)
    U2 = _per_time(g, uv * uv)

    lhs = _weighted_form(g, log_m, op)
    i_u2 = _weighted_form(g, log_m, uv)
    i_gu = _weighted_form(g, log_m, uv, grad=True)
    i_gq = _weighted_form(g, log_m, qv, grad=True)
    lead = math.log(lam) + (lam - 1) * math.log(s0)
    p1 = (i_u2[0], 2 * math.log(lam) - math.log(4.0) + (2 * lam - 2) * math.log(a) + i_u2[1])
    p2 = (i_gu[0], math.log(beta) + math.log(lam) + (lam - 1) * math.log(a) + i_gu[1])
    q_unit = (i_gq[0], lead + i_gq[1])
    d0 = (-1.0 if U2[0] > 0 else 0.0, lead + _log_pos(U2[0]))

    # margin(C1) = lhs - p1 - p2 - d0 + C1 * q_unit  (d0 carries its minus sign)
    base = _signed_log_sum(np.array([lhs[1], p1[1], p2[1], d0[1]]),
                           np.array([lhs[0], -p1[0], -p2[0], -d0[0]]))
    if base[0] >= 0:
        c1_hat = 0.0
    elif q_unit[0] > 0:
        c1_hat = math.exp(min(base[1] - q_unit[1], 709.0))
    else:
        c1_hat = math.inf
    c1_eval = c1_hat if c1 is None else float(c1)
    if c1_eval < 0:
        raise ValueError("C1 must be nonnegative")
    if c1_eval > 0 and q_unit[0] > 0 and math.isfinite(c1_eval):
        q_term = (-1.0, math.log(c1_eval) + q_unit[1])
    else:
        q_term = (0.0, -math.inf)
    parts = [lhs, p1, p2, q_term, d0]
    names = ["lhs:operator_sq", "rhs:u_sq", "rhs:grad_sq", "rhs:grad_q", "rhs:initial"]
    c_f = sup_and_grad_bound(f_field)
    return _terms(names, [p[0] for p in parts], [p[1] for p in parts], 1, params, log_scale,
                  c1=c1_eval, c1_hat=c1_hat, c_f=c_f, c1_certified=certified_c1(c_f, beta))


# ---------------------------------------------------------------------------
# scalar proof-step audit
# ---------------------------------------------------------------------------


@dataclass
class AuditCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class AuditReport:
    params: CarlemanParams
    checks: list[AuditCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks]


def proof_step_audit(params: CarlemanParams, lambdas: Sequence[float] | None = None,
                     n_s: int = 1000) -> AuditReport:
    """Scalar inequalities the estimates rest on, checked in log arithmetic.

    * ``lam/2 <= lam^2/8 a^(lam-2)`` for each sampled ``lam``;
    * ``lam^2 s^(2lam-2) - lam(lam-1) s^(lam-1) >= lam^2/2 s^(2lam-2)`` on a
      dense ``s`` grid in ``[a, T+a]``;
    * ``2(T+a)/sqrt(lam) <= 1/2`` for ``lam >= lam0``;
    * the threshold chain and ``rho < 1`` under the default shift.
    """
    T, a = params.T, params.a
    lam0 = params.lam0
    lams = [lam0, 2 * lam0] if lambdas is None else [float(v) for v in lambdas]
    checks = [AuditCheck("shift_gt_2", a > 2, f"a={a:.6g}")]
    chain = 16 * (T + a) ** 2 > 16 * a ** 2 > 64
    checks.append(AuditCheck("threshold_chain", chain, f"lam0={lam0:.6g} 16a^2={16 * a * a:.6g}"))

    s = np.linspace(a, T + a, n_s)
    log_s = np.log(s)
    for lam in lams:
        lhs = math.log(lam / 2.0)
        rhs = 2 * math.log(lam) - math.log(8.0) + (lam - 2) * math.log(a)
        checks.append(AuditCheck(f"lambda_absorb[lam={lam:.6g}]", lhs <= rhs,
                                 f"log ratio {rhs - lhs:.6g}"))
        # lam^2 s^(2lam-2)/2 >= lam(lam-1) s^(lam-1), the rearranged pointwise bound
        left = math.log(0.5 * lam * lam) + (2 * lam - 2) * log_s
        right = math.log(lam * (lam - 1)) + (lam - 1) * log_s
        gap = left - right
        checks.append(AuditCheck(f"pointwise_quasi[lam={lam:.6g}]", bool(np.all(gap >= 0)),
                                 f"min log gap {gap.min():.6g} over {n_s} s-samples"))
        if lam >= lam0:
            q = 2 * (T + a) / math.sqrt(lam)
            checks.append(AuditCheck(f"layer_ratio[lam={lam:.6g}]", q <= 0.5, f"2(T+a)/sqrt(lam)={q:.6g}"))

    a_def = default_shift(T)
    rho_def = (T + a_def) / a_def ** 2
    checks.append(AuditCheck("rho_default_lt_1", rho_def < 1, f"a={a_def:.6g} rho={rho_def:.6g}"))
    return AuditReport(params, checks)


def identity_refinement_study(series: Iterable, base_grid: SpaceTimeGrid, levels: int,
                              params: CarlemanParams, beta: float) -> dict:
    """Relative identity residuals of each series member on ``levels`` halvings of ``base_grid``.

    Returns the grids, the residual matrix (member x level) and the fitted
    convergence order per member (least squares of log residual on log tau).
    """
    series = list(series)
    grids = [base_grid]
    for _ in range(levels - 1):
        grids.append(grids[-1].refined(2))
    res = np.array([[identity_360_relative_residual(s.sample(gr), params, beta) for gr in grids]
                    for s in series])
    taus = np.array([gr.tau for gr in grids])
    orders = np.array([np.polyfit(np.log(taus), np.log(np.maximum(r, 1e-300)), 1)[0] for r in res])
    return {"grids": grids, "residuals": res, "orders": orders, "taus": taus}
