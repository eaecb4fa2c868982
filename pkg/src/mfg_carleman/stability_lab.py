"""Perturb-and-resolve experiments and the weighted-inequality campaigns.

Everything written to disk goes through fixed ``.17g`` float formatting and
deterministic row order, so reruns from the same inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .carleman import (
    CarlemanParams,
    certified_c1,
    identity_360_relative_residual,
    sup_and_grad_bound,
    theorem31_terms,
    theorem32_terms,
)
from .forward_solver import (
    SolverConfig,
    SolveTrace,
    initial_density,
    smooth_noise,
    solve_forced_heat,
    solve_mfgs,
    synthesize_measurement,
)
from .grid import (
    CosineSeries,
    ScalarField,
    SpaceTimeGrid,
    SpatialSlice,
    laplacian_values,
    norm_h1_omega,
    norm_h10,
    norm_l2_omega,
)
from .mfg_model import MfgProblem


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# stability experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationSpec:
    """Smooth cosine perturbation of the data, ``delta * shape``, with ``max|shape| = 1``."""

    delta: float
    targets: tuple[str, ...] = ("u_T", "p_0")
    seed: int = 0
    modes: int = 4

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("perturbation amplitude must be nonnegative")
        bad = set(self.targets) - {"u_T", "p_0"}
        if bad or not self.targets:
            raise ValueError(f"targets must be a nonempty subset of u_T, p_0; got {self.targets}")

    def shape(self, grid: SpaceTimeGrid, target: str) -> np.ndarray:
        offset = 0 if target == "u_T" else 1
        s = smooth_noise(grid, self.seed * 2 + offset, self.modes)
        return s / np.max(np.abs(s))

    def apply(self, problem: MfgProblem) -> MfgProblem:
        if self.delta == 0:
            return problem
        g = problem.grid
        changes = {}
        if "u_T" in self.targets:
            changes["u_T"] = SpatialSlice(g, problem.u_T.values + self.delta * self.shape(g, "u_T"))
        if "p_0" in self.targets:
            p = problem.p_0.values + self.delta * self.shape(g, "p_0")
            if np.any(p < 0):
                raise ValueError("perturbation makes p_0 negative; lower delta")
            changes["p_0"] = SpatialSlice(g, p)
        return problem.with_data(**changes)


@dataclass
class Solution:
    problem: MfgProblem
    u: ScalarField
    p: ScalarField
    trace: SolveTrace
    u_0: SpatialSlice


def solve_with_measurement(problem: MfgProblem, config: SolverConfig, noise_seed: int = 0) -> Solution:
    u, p, trace = solve_mfgs(problem, config)
    u0 = synthesize_measurement(u, config.noise_level, noise_seed)
    return Solution(problem, u, p, trace, u0)


@dataclass
class StabilityReport:
    delta: float
    seed: int
    lhs_u: float
    lhs_p: float
    rhs_uT_h1: float
    rhs_u0_l2: float
    rhs_p0_l2: float
    picard_iters_base: int
    picard_iters_pert: int
    traces: tuple[SolveTrace, SolveTrace] | None = field(default=None, repr=False)

    @property
    def lhs(self) -> float:
        return self.lhs_u + self.lhs_p

    @property
    def rhs_sum(self) -> float:
        return self.rhs_uT_h1 + self.rhs_u0_l2 + self.rhs_p0_l2

    @property
    def degenerate(self) -> bool:
        return self.rhs_sum == 0

    @property
    def ratio(self) -> float:
        """``lhs / rhs_sum``; nan when the data differences vanish."""
        return math.nan if self.degenerate else self.lhs / self.rhs_sum

    def row(self) -> list[str]:
        return [_fmt(self.delta), _fmt(self.seed), _fmt(self.lhs), _fmt(self.rhs_uT_h1), _fmt(self.rhs_u0_l2),
                _fmt(self.rhs_p0_l2), _fmt(self.ratio), _fmt(self.picard_iters_base), _fmt(self.picard_iters_pert)]


SWEEP_COLUMNS = ["delta", "seed", "lhs_h10", "rhs_uT_h1", "rhs_u0_l2", "rhs_p0_l2", "ratio",
                 "picard_iters_base", "picard_iters_pert"]


def compare_solutions(first: Solution, second: Solution, delta: float = math.nan, seed: int = 0) -> StabilityReport:
    """Both sides of the Lipschitz estimate for two solved problems on one grid."""
    g = first.problem.grid
    return StabilityReport(
        delta=delta, seed=seed,
        lhs_u=norm_h10(first.u - second.u),
        lhs_p=norm_h10(first.p - second.p),
        rhs_uT_h1=norm_h1_omega(first.problem.u_T - second.problem.u_T),
        rhs_u0_l2=norm_l2_omega(first.u_0 - second.u_0),
        rhs_p0_l2=norm_l2_omega(first.problem.p_0 - second.problem.p_0),
        picard_iters_base=first.trace.iterations,
        picard_iters_pert=second.trace.iterations,
        traces=(first.trace, second.trace),
    )


def run_stability_experiment(base: MfgProblem, pert: PerturbationSpec, config: SolverConfig | None = None,
                             base_solution: Solution | None = None) -> StabilityReport:
    """Solve base and perturbed problems and assemble both sides of the estimate.

    ``u_0`` of each run is read off its own trajectory (plus optional
    measurement noise from ``config.noise_level``). ``delta = 0`` reuses the
    base problem object, so every difference is exactly zero.
    """
    config = config or SolverConfig()
    first = base_solution or solve_with_measurement(base, config, noise_seed=config.seed)
    perturbed = pert.apply(base)
    if perturbed is base and config.noise_level == 0:
        second = first
    else:
        second = solve_with_measurement(perturbed, config, noise_seed=config.seed + 1 + pert.seed)
    return compare_solutions(first, second, pert.delta, pert.seed)


@dataclass
class SweepResult:
    reports: list[StabilityReport]
    failures: list[tuple[float, int, str]]
    slope: float
    intercept: float

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.reports])

    @property
    def ratio_spread(self) -> float:
        r = self.ratios
        return float(r.max() / r.min())


def _sweep_cell(args):
    base, delta, seed, targets, config, base_solution = args
    try:
        rep = run_stability_experiment(base, PerturbationSpec(delta, targets, seed), config, base_solution)
        rep.traces = None
        return rep, None
    except Exception as exc:  # recorded per cell, the fit uses survivors
        return None, f"{type(exc).__name__}: {exc}"


def stability_sweep(base: MfgProblem, deltas: Sequence[float], seeds: Sequence[int],
                    config: SolverConfig | None = None, targets: tuple[str, ...] = ("u_T", "p_0"),
                    jobs: int = 1) -> SweepResult:
    """All ``(delta, seed)`` cells, then a log-log fit of lhs against the rhs sum."""
    deltas = [float(d) for d in deltas]
    if len(deltas) < 3 or min(deltas) <= 0:
        raise ValueError("need at least 3 positive perturbation amplitudes")
    if max(deltas) / min(deltas) < 100 * (1 - 1e-12):
        raise ValueError("perturbation amplitudes must span at least two decades")
    config = config or SolverConfig()
    base_solution = solve_with_measurement(base, config, noise_seed=config.seed)
    cells = [(base, d, int(s), tuple(targets), config, base_solution) for d in deltas for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    reports, failures = [], []
    for (_, d, s, *_), (rep, err) in zip(cells, results):
        if rep is None:
            failures.append((d, s, err))
        else:
            reports.append(rep)
    if len(reports) < 6:
        raise RuntimeError(f"only {len(reports)} sweep cells survived; need 6 for a fit: {failures}")
    x = np.log([r.rhs_sum for r in reports])
    y = np.log([r.lhs for r in reports])
    slope, intercept = np.polyfit(x, y, 1)
    return SweepResult(reports, failures, float(slope), float(intercept))


def uniqueness_probe(problem: MfgProblem, config: SolverConfig | None = None,
                     amplitude: float = 0.5) -> dict:
    """Solve twice from different Picard starts and measure the distance between the limits.

    Starts: the uniform density, and the uniform density times
    ``1 + amplitude cos(pi x / L) cos(pi t / T)``.
    """
    config = config or SolverConfig()
    g = problem.grid
    p_a = initial_density(problem, "uniform")
    bump = np.cos(np.pi * g.mesh()[0] / g.lengths[0])[..., None] * np.cos(np.pi * g.times / g.T)
    p_b = ScalarField(g, p_a.values * (1.0 + amplitude * bump))
    u1, p1, t1 = solve_mfgs(problem, config, p_init=p_a)
    u2, p2, t2 = solve_mfgs(problem, config, p_init=p_b)
    diff = norm_h10(u1 - u2) + norm_h10(p1 - p2)
    scale = norm_h10(u1) + norm_h10(p1)
    return {"diff_h10": diff, "scale_h10": scale, "iterations": (t1.iterations, t2.iterations),
            "tol": config.picard_tol, "bound": 10 * config.picard_tol}


# ---------------------------------------------------------------------------
# weighted-inequality campaigns
# ---------------------------------------------------------------------------


def measure_eps_quad(corpus: Iterable[ScalarField], T: float, beta: float, lam: float = 3.0) -> float:
    """Largest relative residual of the weighted energy identity over ``corpus`` at ``lam``."""
    params = CarlemanParams.default(T, lam)
    return max(identity_360_relative_residual(u, params, beta) for u in corpus)


@dataclass
class FuzzRow:
    func_id: int
    lam: float
    mode: str
    margin: float
    min_passing_lambda: float


FUZZ_COLUMNS = ["func_id", "lambda", "mode", "margin", "min_passing_lambda"]


@dataclass
class FuzzReport:
    rows: list[FuzzRow]
    lam0: float
    eps_quad: float
    mode: str

    @property
    def violations(self) -> list[FuzzRow]:
        """Rows at ``lam >= lam0`` whose relative margin is below ``-eps_quad``."""
        return [r for r in self.rows if r.lam >= self.lam0 * (1 - 1e-12) and r.margin < -self.eps_quad]

    @property
    def passed(self) -> bool:
        return not self.violations


def _min_passing(lams, margins, eps):
    best = math.nan
    for lam, m in sorted(zip(lams, margins), reverse=True):
        if m < -eps:
            break
        best = lam
    return best


def _fuzz_member(args):
    u, lams, params, beta, literal = args
    return [theorem31_terms(u, params.with_lambda(lam), beta, literal_paper=literal).relative_margin
            for lam in lams]


def carleman_fuzz(corpus: Sequence[ScalarField], lambdas: Sequence[float], params: CarlemanParams, beta: float,
                  mode: str = "corrected", eps_quad: float = 0.0, include_lam0: bool = True,
                  jobs: int = 1) -> FuzzReport:
    """Relative margins of the Carleman estimate per function per ``lambda``.

    Violations are recorded, never raised. ``min_passing_lambda`` is the
    smallest grid value from which every larger grid value passes.
    """
    if mode not in ("corrected", "literal_paper"):
        raise ValueError(f"unknown mode {mode!r}")
    lams = sorted({float(v) for v in lambdas} | ({params.lam0} if include_lam0 else set()))
    tasks = [(u, lams, params, beta, mode == "literal_paper") for u in corpus]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_margins = list(pool.map(_fuzz_member, tasks, chunksize=8))
    else:
        all_margins = [_fuzz_member(t) for t in tasks]
    rows = []
    for fid, margins in enumerate(all_margins):
        mp = _min_passing(lams, margins, eps_quad)
        rows.extend(FuzzRow(fid, lam, mode, m, mp) for lam, m in zip(lams, margins))
    return FuzzReport(rows, params.lam0, eps_quad, mode)


def zero_initial(corpus: Iterable[ScalarField]) -> list[ScalarField]:
    """Subtract each member's ``t = 0`` slice; still zero-Neumann, now vanishing initially."""
    return [ScalarField(u.grid, u.values - u.values[..., :1]) for u in corpus]


@dataclass
class QuasiReport:
    c1_hat: np.ndarray  # (pairs, lambdas)
    lambdas: list[float]
    c1_fit: float
    refit_margins: np.ndarray
    c_f: float
    c1_certified: float

    @property
    def spread_per_lambda(self) -> np.ndarray:
        """``max / median`` of the fitted constants across pairs, one entry per ``lambda``."""
        med = np.median(self.c1_hat, axis=0)
        top = np.max(self.c1_hat, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(med > 0, top / med, np.where(top > 0, np.inf, 1.0))

    @property
    def max_over_median(self) -> float:
        return float(np.max(self.spread_per_lambda))

    @property
    def pooled_max_over_median(self) -> float:
        """Same statistic with all ``lambda`` values pooled; it mixes scales, reported only."""
        med = float(np.median(self.c1_hat))
        return math.inf if med == 0 else float(self.c1_hat.max() / med)

    @property
    def violations(self) -> int:
        # margins at the fitted constant vanish only up to rounding of the summands
        return int(np.sum(self.refit_margins < -1e-12))

    @property
    def bounded(self) -> bool:
        return bool(np.all(self.c1_hat >= 0) and np.all(np.isfinite(self.c1_hat)))


def adversarial_pair(q: ScalarField, f: ScalarField, beta: float) -> ScalarField:
    """``u`` with ``u_t - beta Lap u = -f Lap q`` and ``u(., 0) = 0``, which nearly cancels the left side."""
    source = ScalarField(q.grid, -f.values * laplacian_values(q.grid, q.values))
    return solve_forced_heat(source, beta)


def quasi_campaign(q_corpus: Sequence[ScalarField], f: ScalarField, lambdas: Sequence[float],
                   params: CarlemanParams, beta: float) -> QuasiReport:
    """Smallest admissible coupling constant per pair and ``lambda``, then a refit check.

    The fitted constant is the campaign maximum; every pair is re-evaluated
    with it and must have a nonnegative margin.
    """
    lams = [float(v) for v in lambdas]
    pairs = [(adversarial_pair(q, f, beta), q) for q in q_corpus]
    c1 = np.array([[theorem32_terms(u, q, f, params.with_lambda(lam), beta).constants["c1_hat"]
                    for lam in lams] for u, q in pairs])
    fit = float(np.max(c1))
    refit = np.array([[theorem32_terms(u, q, f, params.with_lambda(lam), beta, c1=fit).relative_margin
                       for lam in lams] for u, q in pairs])
    c_f = sup_and_grad_bound(f)
    return QuasiReport(c1, lams, fit, refit, c_f, certified_c1(c_f, beta))


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def sweep_csv(reports: Sequence[StabilityReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def fuzz_csv(rows: Sequence[FuzzRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FUZZ_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.func_id), _fmt(r.lam), r.mode, _fmt(r.margin), _fmt(r.min_passing_lambda)])
    return buf.getvalue()


def _svg(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str,
         extra: str = "", bounds=None) -> str:
    W, H, pad = 640, 420, 60
    pts = [p for s in series.values() for p in s]
    if bounds is None:
        if pts:
            xs, ys = zip(*pts)
            bounds = (min(xs), max(xs), min(ys), max(ys))
        else:
            bounds = (0.0, 1.0, 0.0, 1.0)
    x0, x1, y0, y1 = bounds
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(y):
        return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
           f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
           f'<text x="{W / 2:.1f}" y="{H - 18}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="18" y="{H / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 18 {H / 2:.1f})">{ylabel}</text>']
    for k, (name, s) in enumerate(series.items()):
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{colors[k % len(colors)]}" stroke-width="1.5" '
                   f'points="{coords}"><title>{name}</title></polyline>')
    if extra:
        out.append(extra)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sweep_svg(result: SweepResult) -> str:
    """lhs against rhs sum on log-log axes, one polyline per seed, fitted line dashed."""
    series: dict[str, list[tuple[float, float]]] = {}
    for r in sorted(result.reports, key=lambda r: (r.seed, r.rhs_sum)):
        series.setdefault(f"seed {r.seed}", []).append((math.log10(r.rhs_sum), math.log10(r.lhs)))
    pts = [p for s in series.values() for p in s]
    xs, ys = zip(*pts)
    bounds = (min(xs), max(xs), min(ys), max(ys))
    W, H, pad = 640, 420, 60
    xa, xb = bounds[0], bounds[1]
    ln10 = math.log(10)
    ya = (result.slope * xa * ln10 + result.intercept) / ln10
    yb = (result.slope * xb * ln10 + result.intercept) / ln10

    def proj(x, y):
        px = pad + (x - bounds[0]) / max(bounds[1] - bounds[0], 1e-300) * (W - 2 * pad)
        py = H - pad - (y - bounds[2]) / max(bounds[3] - bounds[2], 1e-300) * (H - 2 * pad)
        return px, py

    (p1x, p1y), (p2x, p2y) = proj(xa, ya), proj(xb, yb)
    fit_line = (f'<line x1="{p1x:.2f}" y1="{p1y:.2f}" x2="{p2x:.2f}" y2="{p2y:.2f}" stroke="gray" '
                f'stroke-dasharray="5,4"/><text x="{W - pad:.1f}" y="{pad - 8}" text-anchor="end" '
                f'font-size="12">fitted slope {result.slope:.4f}</text>')
    return _svg(series, "Lipschitz sweep", "log10 data difference", "log10 solution difference",
                extra=fit_line, bounds=bounds)


def fuzz_svg(report: FuzzReport) -> str:
    """Relative margin against lambda, one polyline per function."""
    series: dict[str, list[tuple[float, float]]] = {}
    for r in report.rows:
        series.setdefault(f"function {r.func_id}", []).append((r.lam, r.margin))
    return _svg(series, f"Carleman margins ({report.mode})", "lambda", "relative margin")


def emit_report(reports, out_dir: str | Path, kind: str, stem: str | None = None) -> list[Path]:
    """Write CSV (and SVG when there is data) for a sweep or fuzz result.

    ``reports`` is a :class:`SweepResult`, a :class:`FuzzReport`, or an empty
    list (header-only CSV of the given ``kind``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or kind
    written = []
    if kind == "sweep":
        rows = [] if isinstance(reports, list) else reports.reports
        path = out / f"{stem}.csv"
        path.write_text(sweep_csv(rows))
        written.append(path)
        if rows:
            svg = out / f"{stem}.svg"
            svg.write_text(sweep_svg(reports))
            written.append(svg)
    elif kind == "fuzz":
        rows = [] if isinstance(reports, list) else reports.rows
        path = out / f"{stem}.csv"
        path.write_text(fuzz_csv(rows))
        written.append(path)
        if rows:
            svg = out / f"{stem}.svg"
            svg.write_text(fuzz_svg(reports))
            written.append(svg)
    else:
        raise ValueError(f"unknown report kind {kind!r}")
    return written


def corpus_from_series(series: Sequence[CosineSeries], grid: SpaceTimeGrid) -> list[ScalarField]:
    return [s.sample(grid) for s in series]
