"""Command line: thinhomog {coeff,cell,solve2d,solve1d,verify,study}."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .concentration import assemble_concentrated_load, solve_semilinear
from .config import ConfigError
from .errors import ThinHomogError
from .fem import SolverOptions, solve_duality, w1p_norm
from .geometry import PeriodicProfile, build_cell_mesh
from .homogenize import q_resonant_detail, solve_cell_problem
from .studies import (REGIME_DEFAULTS, StudyConfig, identity_config, run_coefficient_table,
                      run_convergence_study, run_identity_suite, solve_limit)

ALPHA_CASES = ("sub", "res", "super")


def _eps_list(text: str):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty eps list")
    return vals


def _p_list(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad p list {text!r}") from None


def _common(sub):
    sub.add_argument("--config", help="TOML configuration file")
    sub.add_argument("--out", help="output path (CSV or table)")
    sub.add_argument("--threads", type=int, default=1, help="concurrent eps rows")
    sub.add_argument("--eps-list", type=_eps_list, help="comma-separated, strictly decreasing")
    sub.add_argument("--p", type=_p_list, help="exponent p (comma-separated for coeff)")
    sub.add_argument("--alpha-case", choices=ALPHA_CASES, help="oscillation regime")
    sub.add_argument("--problem", choices=("linear", "semilinear"), help="forcing type")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinhomog", description=(
        "p-Laplacian problems on thin domains with an oscillating boundary and a "
        "concentrated strip forcing: coefficients, solvers and verification sweeps."))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)
    coeff = subs.add_parser("coeff", help="table of q_sub, q_res, q_super as CSV")
    _common(coeff)
    coeff.add_argument("--cell-h", type=float, default=1.0 / 32)
    cell = subs.add_parser("cell", help="solve the periodic cell problem")
    _common(cell)
    cell.add_argument("--cell-h", type=float, default=1.0 / 32)
    for name, text in (("solve2d", "solve the thin-domain problem at one eps"),
                       ("solve1d", "solve the homogenized 1D problem"),
                       ("study", "eps sweep against the 1D limit, CSV output")):
        _common(subs.add_parser(name, help=text))
    verify = subs.add_parser("verify", help="identity checks, pass/fail table")
    _common(verify)
    verify.add_argument("--mistag", action="store_true",
                        help="shift the strip tags (negative control; first_unf must fail)")
    return parser


def _first_p(args, default=2.0) -> float:
    return args.p[0] if args.p else default


def config_from_args(args, base=None) -> StudyConfig:
    if args.config:
        cfg = StudyConfig.from_toml(args.config)
    elif base is not None:
        cfg = base
    else:
        cfg = StudyConfig.benchmark(args.alpha_case or "res", _first_p(args),
                                    args.problem or "linear")
        return replace(cfg, eps_list=args.eps_list) if args.eps_list else cfg
    kw = {}
    if args.alpha_case and args.alpha_case != cfg.regime:
        d = REGIME_DEFAULTS[args.alpha_case]
        kw.update(regime=args.alpha_case, alpha=d["alpha"], beta=d["beta"])
    if args.p:
        kw["p"] = args.p[0]
    if args.problem:
        kw["problem"] = args.problem
    if args.eps_list:
        kw["eps_list"] = args.eps_list
    return replace(cfg, **kw) if kw else cfg


def _emit(text: str, out):
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_coeff(args) -> int:
    if args.config:
        profiles = [StudyConfig.from_toml(args.config).g]
    else:
        profiles = [PeriodicProfile.constant(1.0), PeriodicProfile.cosine(2.0, 1.0),
                    PeriodicProfile.sawtooth(1.0, 3.0)]
    table = run_coefficient_table(profiles, args.p or (2.0, 3.0), args.cell_h)
    _emit(table.to_csv(), args.out)
    return 0 if all(r.status == "ok" for r in table.rows) else 1


def cmd_cell(args) -> int:
    cfg = config_from_args(args)
    p = cfg.p
    detail = q_resonant_detail(cfg.g, p, args.cell_h)
    sol = solve_cell_problem(build_cell_mesh(cfg.g, args.cell_h / 2), p)
    print(f"profile        {cfg.g.label()}")
    print(f"p              {p:g}")
    print(f"q (h={args.cell_h:g})   {detail.coarse:.10f}")
    print(f"q (h={args.cell_h / 2:g})  {detail.fine:.10f}")
    print(f"q extrapolated {detail.value:.10f}")
    print(f"periodic jump  {sol.periodic_jump():.3e}")
    print(f"mean of v-y1   {sol.mean_offset():.3e}")
    if args.out:
        sol.v.to_table(args.out)
    return 0


def cmd_solve2d(args) -> int:
    cfg = config_from_args(args)
    eps = cfg.eps_list[0]
    spec = cfg.spec_for(eps)
    mesh = cfg.mesh_for(spec)
    opts = SolverOptions(tol=cfg.tol)
    if cfg.problem == "linear":
        u = solve_duality(mesh, cfg.p, assemble_concentrated_load(mesh, spec, spec.forcing).load, opts)
        info = f"newton iterations {u.info.iterations}, residual {u.info.residual:.3e}"
    else:
        u, rep = solve_semilinear(mesh, spec, opts, tol=cfg.tol, max_outer=cfg.max_outer)
        info = (f"fixed-point iterations {rep.iterations}, last difference "
                f"{rep.differences[-1]:.3e}, converged {rep.converged}")
    print(f"eps {eps:g}  vertices {mesh.n_vertices}  triangles {mesh.n_triangles}")
    print(info)
    print(f"rescaled W1p norm {eps ** (-1.0 / cfg.p) * w1p_norm(mesh, u, cfg.p):.10f}")
    if args.out:
        u.to_table(args.out)
    return 0


def cmd_solve1d(args) -> int:
    cfg = config_from_args(args)
    sol = solve_limit(cfg)
    if args.out:
        sol.to_csv(args.out)
    else:
        print(f"q {sol.model.q:.10f}  regime {sol.model.regime}  residual {sol.residual:.3e}")
        for x in np.linspace(0.0, 1.0, 11):
            print(f"{x:.2f} {float(sol(x)):.10f}")
    return 0 if sol.converged else 1


def cmd_verify(args) -> int:
    base = identity_config()
    cfg = config_from_args(args, base=base)
    suite = run_identity_suite(cfg, mistag=args.mistag)
    print(suite.table())
    if args.out:
        suite.to_csv(args.out)
    return 0 if suite.passed else 1


def cmd_study(args) -> int:
    cfg = config_from_args(args)
    report = run_convergence_study(cfg, out=args.out or cfg.output, threads=args.threads)
    if not (args.out or cfg.output):
        sys.stdout.write(report.to_csv())
    return 0 if all(r.ok for r in report.rows) else 1


COMMANDS = {"coeff": cmd_coeff, "cell": cmd_cell, "solve2d": cmd_solve2d,
            "solve1d": cmd_solve1d, "verify": cmd_verify, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ThinHomogError, OSError) as exc:
        print(f"thinhomog: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
