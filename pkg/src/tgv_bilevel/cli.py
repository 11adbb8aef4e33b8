"""Command line entry point."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bilevel_dual as bd
from . import bilevel_pd as bp
from . import io
from . import lower_dual as ld
from . import lower_pd as lp
from . import upper
from .exceptions import ConvergenceError, SolverError
from .fields import GridSpec
from .gridsearch import HEADER, gridsearch
from .metrics import PHANTOMS, add_gaussian_noise, make_phantom, psnr, ssim
from .projection import ProjectionError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_PARAM = 4
EXIT_CONVERGENCE = 5

SEED_ENV = "TGV_BILEVEL_SEED"

log = logging.getLogger("tgv_bilevel")


class InputError(Exception):
    pass


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _common(p):
    p.add_argument("--config", help="INI file overriding the default profiles")
    p.add_argument("--input", help="noisy image (binary PGM)")
    p.add_argument("--truth", help="ground-truth image (binary PGM) for metrics")
    p.add_argument("--phantom", choices=PHANTOMS, help="use a synthetic image as ground truth")
    p.add_argument("--size", type=int, default=64, help="phantom side length")
    p.add_argument("--output", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help=f"noise seed (default ${SEED_ENV} or 0)")
    p.add_argument("--sigma2", type=float, default=None, help="noise variance")
    p.add_argument("--add-noise", action="store_true", help="add noise to --input before solving")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="tgv-bilevel", description="TGV denoising with learned weights")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("denoise-dual", "denoise-pd"):
        p = sub.add_parser(name, help=f"single lower-level solve ({name[8:]})")
        _common(p)
        p.add_argument("--alpha0", type=float)
        p.add_argument("--alpha1", type=float)
    for name in ("bilevel-dual", "bilevel-pd"):
        p = sub.add_parser(name, help=f"learn weights ({name[8:]})")
        _common(p)
        p.add_argument("--max-outer", type=int)
        p.add_argument("--alpha0", type=float, help="initial alpha0")
        p.add_argument("--alpha1", type=float, help="initial alpha1")
        if name == "bilevel-pd":
            p.add_argument("--alpha0-mode", choices=("scalar", "spatial"))
            p.add_argument("--alpha1-field", help="CSV with a fixed alpha1 field (alpha0-only run)")
    p = sub.add_parser("gridsearch", help="scalar weight sweep")
    _common(p)
    p.add_argument("--solver", choices=("dual", "pd"), default="pd")
    p.add_argument("--alpha0-list", required=True, type=_floats)
    p.add_argument("--alpha1-list", required=True, type=_floats)
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("metrics", help="PSNR and SSIM of --input against --truth")
    p.add_argument("--input", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _read(path):
    try:
        return io.read_pgm(path)
    except (OSError, io.ImageFormatError) as exc:
        raise InputError(str(exc)) from exc


def _images(args, cp):
    """Return ``(f, truth, sigma2)``."""
    sigma2 = args.sigma2 if args.sigma2 is not None else cp.getfloat("noise", "sigma2")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    truth = _read(args.truth) if args.truth else None
    if args.phantom:
        truth = make_phantom(args.phantom, args.size)
        return add_gaussian_noise(truth, sigma2, _seed(args)), truth, sigma2
    if not args.input:
        raise InputError("either --input or --phantom is required")
    f = _read(args.input)
    if args.add_noise:
        f = add_gaussian_noise(f, sigma2, _seed(args))
    if truth is not None and truth.shape != f.shape:
        raise InputError("--truth and --input differ in size")
    return f, truth, sigma2


def _metrics_line(u, truth):
    if truth is None:
        return ""
    return f"psnr={psnr(u, truth):.4f} ssim={ssim(u, truth):.6f}"


def _save_field(out: Path, name, a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = np.array([[float(a)]])
    io.write_field_csv(out / f"{name}.csv", a)
    lo, hi = float(a.min()), float(a.max())
    img = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    io.write_pgm(out / f"{name}.pgm", img)


def _run(args) -> int:
    if args.command == "metrics":
        u, t = _read(args.input), _read(args.truth)
        if u.shape != t.shape:
            raise InputError("images differ in size")
        print(f"psnr={psnr(u, t)} ssim={ssim(u, t):.6f}")
        return EXIT_OK

    cp = io.load_config(args.config) if args.config else io.load_config()
    f, truth, sigma2 = _images(args, cp)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    spec = upper.CorridorSpec(sigma2, cp.getint("noise", "n_w"))
    dual_cfg = io.apply_section(ld.DualSolverConfig(), cp["dual"])
    pd_cfg = io.apply_section(lp.PDSolverConfig(), cp["pd"])

    if args.command == "denoise-dual":
        grid = GridSpec.dual(*f.shape)
        bcfg = io.apply_section(bd.BilevelDualConfig(), cp["bilevel-dual"]).scaled(grid)
        a0 = args.alpha0 if args.alpha0 is not None else bcfg.alpha0_init
        a1 = args.alpha1 if args.alpha1 is not None else bcfg.alpha1_init
        u = ld.solve_lower_dual(f, a0, a1, dual_cfg, grid).u
    elif args.command == "denoise-pd":
        bcfg = io.apply_section(bp.BilevelPDConfig(), cp["bilevel-pd"])
        a0 = args.alpha0 if args.alpha0 is not None else bcfg.alpha0_init
        a1 = args.alpha1 if args.alpha1 is not None else bcfg.alpha1_init
        u = lp.pd_newton_solve(f, a0, a1, pd_cfg).u
    elif args.command == "bilevel-dual":
        bcfg = io.apply_section(bd.BilevelDualConfig(solver=dual_cfg), cp["bilevel-dual"])
        if args.max_outer is not None:
            bcfg = replace(bcfg, max_outer=args.max_outer)
        res = bd.run_bilevel_dual(f, bcfg, spec, truth=truth, alpha0_init=args.alpha0,
                                  alpha1_init=args.alpha1)
        u = res.u
        _save_field(out, "alpha1", res.alpha1)
        io.write_field_csv(out / "alpha0.csv", np.array([[res.alpha0]]))
        res.history.write_csv(out / "history.csv")
    elif args.command == "bilevel-pd":
        bcfg = io.apply_section(bp.BilevelPDConfig(solver=pd_cfg), cp["bilevel-pd"])
        changes = {}
        if args.max_outer is not None:
            changes["max_outer"] = args.max_outer
        if args.alpha0_mode:
            changes["alpha0_mode"] = args.alpha0_mode
        a1_init = args.alpha1
        if args.alpha1_field:
            try:
                a1_init = io.read_field_csv(args.alpha1_field)
            except (OSError, ValueError) as exc:
                raise InputError(f"cannot read alpha1 field: {exc}") from exc
            if a1_init.shape != f.shape:
                raise InputError("alpha1 field does not match the image size")
            changes["optimize_alpha1"] = False
        if changes:
            bcfg = replace(bcfg, **changes)
        res = bp.run_bilevel_pd(f, bcfg, spec, truth=truth, alpha0_init=args.alpha0, alpha1_init=a1_init)
        u = res.u
        _save_field(out, "alpha1", res.alpha1)
        if np.ndim(res.alpha0):
            _save_field(out, "alpha0", res.alpha0)
        else:
            io.write_field_csv(out / "alpha0.csv", np.array([[res.alpha0]]))
        res.history.write_csv(out / "history.csv")
    else:  # gridsearch
        if truth is None:
            raise InputError("gridsearch needs a ground truth (--truth or --phantom)")
        cfg = dual_cfg if args.solver == "dual" else pd_cfg
        table = gridsearch(f, truth, args.alpha0_list, args.alpha1_list, args.solver, cfg, spec,
                           workers=args.workers)
        io.write_table_csv(out / "grid.csv", HEADER, table.rows)
        for label, row in (("psnr", table.best_psnr), ("ssim", table.best_ssim), ("F", table.best_F)):
            print(f"best {label}: alpha0={row[0]!r} alpha1={row[1]!r} psnr={row[2]:.4f} "
                  f"ssim={row[3]:.6f} F={row[4]!r}")
        return EXIT_OK

    io.write_pgm(out / "u.pgm", u)
    io.write_pgm(out / "f.pgm", f)
    print(f"{args.command}: wrote {out / 'u.pgm'} {_metrics_line(u, truth)}".rstrip())
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (ConvergenceError, SolverError, ProjectionError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
