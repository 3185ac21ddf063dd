"""Command-line entry point: run one simulation, a convergence study, or
the built-in oracle suite.

Artifacts are written atomically (temporary file plus rename) so partial
outputs never appear under their final names. The environment variable
``STOKES2P_THREADS`` caps the numerical libraries' internal threading;
it must be applied before the numerical modules load, so the heavy
imports happen inside the subcommands.
"""

import argparse
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("STOKES2P_THREADS")
    if cap:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, cap)


def _load_config(path):
    from .config import parse_config

    with open(path) as fh:
        return parse_config(fh.read()).resolved()


def cmd_run(args):
    from . import time_stepper as ts
    from . import verification as vf

    cfg = _load_config(args.config)
    if args.out:
        cfg = __import__("dataclasses").replace(cfg, out_dir=args.out)
        os.makedirs(args.out, exist_ok=True)
    g = None
    if cfg.problem == "expanding_bubble":
        g = vf.ExactSolution.for_config(cfg).boundary_velocity()
    diag_path = (
        os.path.join(cfg.out_dir, "diagnostics.csv") if cfg.out_dir else None
    )
    diags, state = ts.run(cfg, g=g, diag_path=diag_path)
    if cfg.out_dir:
        state.interface.dump(os.path.join(cfg.out_dir, "interface_final.txt"))
    last = diags[-1]
    print(
        f"completed {last.m} steps to t = {last.t:.6g}: "
        f"length {last.length:.9g}, area {last.area:.9g}, "
        f"max|U| {last.umax:.3e}, mesh ratio {last.equi_ratio:.4f}"
    )
    return 0


def cmd_converge(args):
    from . import verification as vf

    cfg = _load_config(args.config)
    levels = [int(s) for s in args.levels.split(",") if s != ""]
    if cfg.problem == "stationary_bubble":
        study = "stationary"
    elif cfg.problem == "expanding_bubble":
        study = (
            "expanding_adaptive" if cfg.h_c > cfg.h_f * (1 + 1e-12)
            else "expanding_uniform"
        )
    else:
        print(
            "converge requires a stationary_bubble or expanding_bubble "
            "problem",
            file=sys.stderr,
        )
        return 2
    out_path = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        out_path = os.path.join(args.out, "table.csv")
    mu = (cfg.mu_minus, cfg.mu_plus)
    report = vf.convergence_study(
        study, levels, element=cfg.element, xfem=cfg.xfem,
        scheme=cfg.scheme, mu=mu, out_path=out_path,
    )
    for lv in report.levels:
        extra = ""
        if lv.err_Pc is not None:
            extra = f" err_Pc={lv.err_Pc:.6e} err_lam={lv.err_lam:.6e}"
        print(
            f"level {lv.level} (label {lv.h_label:g}, tau {lv.tau:g}): "
            f"err_X={lv.err_X:.6e} err_U={lv.err_U:.6e} "
            f"err_P={lv.err_P:.6e}{extra}"
        )
    for attr in ("err_X", "err_U", "err_P"):
        rate = report.fitted_rate(attr)
        if rate is not None:
            print(f"fitted rate {attr}: {rate:.3f}")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest

    results = run_selftest(args.filter)
    if not results:
        print(f"no selftest matches filter '{args.filter}'", file=sys.stderr)
        return 2
    failed = 0
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
        failed += 0 if r.ok else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed", file=sys.stderr)
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stokes2p",
        description="Two-phase Stokes flow with parametric front tracking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("--config", required=True, help="key=value config file")
    p_run.add_argument("--out", default="", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_conv = sub.add_parser("converge", help="run a convergence study")
    p_conv.add_argument("--config", required=True)
    p_conv.add_argument(
        "--levels", default="0,1,2", help="comma-separated level list"
    )
    p_conv.add_argument("--out", default="", help="output directory")
    p_conv.set_defaults(func=cmd_converge)

    p_self = sub.add_parser("selftest", help="run the oracle suite")
    p_self.add_argument("--filter", default=None)
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    from .errors import ConfigError, GeometryError, ResourceLimitError, \
        SolverError, Stokes2pError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (GeometryError, ResourceLimitError) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return 3
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        if exc.residuals:
            for k, v in exc.residuals.items():
                print(f"  residual[{k}] = {v:.3e}", file=sys.stderr)
        return 4
    except Stokes2pError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
