"""Command-line entry point.

Exit codes: 0 pass, 1 scientific failure (violation, non-convergence, out of
band), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .carleman import CarlemanParams, identity_refinement_study, proof_step_audit
from .config import RunConfig, dump_config, load_config
from .forward_solver import NonConvergence, mass_history, solve_mfgs, synthesize_measurement
from .grid import ScalarField, cosine_corpus, neumann_corpus, norm_h10, write_field
from .mfg_model import bellman_residual, fokker_planck_residual, hypothesis_membership
from .stability_lab import (
    _fmt,
    carleman_fuzz,
    emit_report,
    measure_eps_quad,
    quasi_campaign,
    stability_sweep,
    zero_initial,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_fmt) + "\n")


def _prepare(args) -> tuple[RunConfig, Path]:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {exc.filename}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {args.config}: {exc}") from None
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    raw = cfg.model_dump()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.mode is not None:
        raw["carleman"]["mode"] = args.mode.replace("-", "_")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid option:\n{exc}") from None
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_verify_carleman(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    c = cfg.carleman
    params = cfg.carleman_params()
    beta = cfg.problem.beta
    members = cosine_corpus(cfg.seed + 1000, c.identity_members, grid.lengths, grid.T,
                            cfg.corpus.decay, cfg.corpus.modes)
    eps = measure_eps_quad([s.sample(grid) for s in members], grid.T, beta, c.identity_lambda)
    corpus = neumann_corpus(grid, cfg.seed, cfg.corpus.count, cfg.corpus.decay, cfg.corpus.modes)
    if cfg.corpus.zero_initial:
        corpus = zero_initial(corpus)
    rep = carleman_fuzz(corpus, c.lambdas, params, beta, c.mode, eps, c.include_lam0, jobs=cfg.jobs)
    emit_report(rep, out, "fuzz")
    summary = {"mode": c.mode, "lam0": params.lam0, "a": params.a, "eps_quad": eps,
               "functions": cfg.corpus.count, "violations": len(rep.violations),
               "min_margin_at_lam0": min(r.margin for r in rep.rows if r.lam >= params.lam0 * (1 - 1e-12))}
    _write_json(out / "verify_carleman.json", summary)
    print(f"{'PASS' if rep.passed else 'FAIL'} carleman estimate ({c.mode}): {len(rep.violations)} violations "
          f"at lambda >= {params.lam0:.6g} below -eps_quad={eps:.3g}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_verify_quasi(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    c = cfg.carleman
    params = cfg.carleman_params()
    try:
        u, p, trace = solve_mfgs(problem, cfg.solver_config())
    except NonConvergence as exc:
        exc.trace.write_csv(out / "trace.csv")
        print(f"FAIL quasi estimate: base solve did not converge: {exc}")
        return EXIT_FAIL
    f = ScalarField(grid, problem.kappa2[..., None] * p.values)
    q_corpus = neumann_corpus(grid, cfg.seed + 1, c.quasi_pairs, cfg.corpus.decay, cfg.corpus.modes)
    lams = list(c.quasi_lambdas) + ([params.lam0] if c.include_lam0 else [])
    rep = quasi_campaign(q_corpus, f, lams, params, cfg.problem.beta)
    with open(out / "quasi.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "lambda", "c1_hat", "margin_at_fit"])
        for i in range(rep.c1_hat.shape[0]):
            for j, lam in enumerate(rep.lambdas):
                w.writerow([i, _fmt(lam), _fmt(rep.c1_hat[i, j]), _fmt(rep.refit_margins[i, j])])
    spread = rep.spread_per_lambda
    ok = rep.bounded and rep.max_over_median <= c.quasi_spread_max and rep.violations == 0
    _write_json(out / "verify_quasi.json", {
        "c1_fit": rep.c1_fit, "c_f": rep.c_f, "c1_certified": rep.c1_certified,
        "spread_per_lambda": dict(zip([_fmt(v) for v in rep.lambdas], spread.tolist())),
        "pooled_spread": rep.pooled_max_over_median, "violations_at_fit": rep.violations,
        "picard_iterations": trace.iterations, "passed": ok})
    print(f"{'PASS' if ok else 'FAIL'} quasi estimate: fitted C1={rep.c1_fit:.4g}, "
          f"max/median per lambda={rep.max_over_median:.3g}, violations at fit={rep.violations}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_audit(cfg: RunConfig, out: Path) -> int:
    c = cfg.carleman
    lines = []
    ok = True
    for T in c.audit_T:
        rep = proof_step_audit(CarlemanParams.default(T))
        ok &= rep.passed
        lines.append(f"# T={_fmt(T)}")
        lines.extend(rep.lines())
    own = proof_step_audit(cfg.carleman_params())
    ok &= own.passed
    lines.append(f"# configured T={_fmt(cfg.grid.T)} a={_fmt(own.params.a)}")
    lines.extend(own.lines())
    base = cfg.identity_grid()
    members = cosine_corpus(cfg.seed + 1000, c.identity_members, base.lengths, base.T,
                            cfg.corpus.decay, cfg.corpus.modes)
    study = identity_refinement_study(members, base, c.identity_levels,
                                      cfg.carleman_params(c.identity_lambda), cfg.problem.beta)
    order_ok = bool(np.min(study["orders"]) >= c.identity_order_min)
    ok &= order_ok
    with open(out / "identity_study.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["member", "level", "nx", "nt", "relative_residual"])
        for i, row in enumerate(study["residuals"]):
            for k, (gr, r) in enumerate(zip(study["grids"], row)):
                w.writerow([i, k, gr.shape[0], gr.nt, _fmt(r)])
    lines.append(f"{'PASS' if order_ok else 'FAIL'} identity residual order: min {np.min(study['orders']):.4f} "
                 f"(required {c.identity_order_min})")
    (out / "audit.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    scfg = cfg.solver_config()
    try:
        u, p, trace = solve_mfgs(problem, scfg)
    except NonConvergence as exc:
        exc.trace.write_csv(out / "trace.csv")
        print(f"FAIL solve: {exc}")
        return EXIT_FAIL
    trace.write_csv(out / "trace.csv")
    u0 = synthesize_measurement(u, scfg.noise_level, cfg.seed)
    write_field(out / "u.bin", u)
    write_field(out / "p.bin", p)
    write_field(out / "u0.bin", u0)
    mem = hypothesis_membership(u, p, problem)
    summary = {
        "iterations": trace.iterations,
        "mass_drift": float(np.max(np.abs(mass_history(p) - 1.0))),
        "bellman_residual_h10": norm_h10(bellman_residual(u, p, problem)),
        "fokker_planck_residual_h10": norm_h10(fokker_planck_residual(u, p, problem)),
        "sup_u": mem.sup_u, "sup_grad_u": mem.sup_grad_u, "sup_lap_u": mem.sup_lap_u,
        "sup_p": mem.sup_p, "sup_grad_p": mem.sup_grad_p, "member": mem.member,
        "N": problem.N,
    }
    _write_json(out / "solve.json", summary)
    print(f"PASS solve: converged in {trace.iterations} Picard iterations, mass drift {summary['mass_drift']:.3g}")
    return EXIT_OK


def cmd_stability(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    problem = cfg.build_problem(grid)
    e = cfg.experiment
    try:
        res = stability_sweep(problem, e.deltas, e.seeds, cfg.solver_config(), tuple(e.targets), jobs=cfg.jobs)
    except (NonConvergence, RuntimeError) as exc:
        print(f"FAIL stability sweep: {exc}")
        return EXIT_FAIL
    emit_report(res, out, "sweep")
    ok = abs(res.slope - 1.0) <= e.slope_band and res.ratio_spread <= e.ratio_bound
    _write_json(out / "stability.json", {"slope": res.slope, "intercept": res.intercept,
                                         "ratio_spread": res.ratio_spread, "failures": len(res.failures),
                                         "passed": ok})
    print(f"{'PASS' if ok else 'FAIL'} Lipschitz sweep: slope {res.slope:.4f} (1 +- {e.slope_band}), "
          f"max/min ratio {res.ratio_spread:.3f} (<= {e.ratio_bound})")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "verify-carleman": cmd_verify_carleman,
    "verify-quasi": cmd_verify_quasi,
    "audit": cmd_audit,
    "solve": cmd_solve,
    "stability": cmd_stability,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfg-carleman", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "print-config"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="JSON run configuration")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("--mode", choices=["corrected", "literal-paper"], default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "print-config":
        try:
            cfg = load_config(args.config)
        except (OSError, ValueError, ValidationError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    try:
        cfg, out = _prepare(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return COMMANDS[args.command](cfg, out)


if __name__ == "__main__":
    sys.exit(main())
