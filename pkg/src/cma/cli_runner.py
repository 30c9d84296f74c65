"""Command-line front end: ``cma <command> --config <path> [--out <dir>] [--h <float>] [--perron-refine]``.

Every run writes ``report.txt`` (``key: value`` lines), ``record.json`` and the
relevant CSV grids to the output directory. Exit status is 0 when the
command's check passes, 1 when it fails, 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .catalog import CATALOG, get_entry
from .config import RunConfig, parse_config, parse_rhs, spatial_callable
from .envelope_abp import abp_check, convex_envelope, discrete_convexity_defect
from .errors import CmaError, ConfigError
from .grid_domain import Ball, Box, GridFunction, build_domain, read_csv, write_csv
from .perron_solver import SolveOptions, measure_modulus, solve
from .regularize import interior_core, semiconvexity_constant, sup_convolution
from .rhs import ProblemSpec
from .viscosity_jets import check_comparison, check_subsolution, check_supersolution, default_tol

log = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _thread_cap() -> int | None:
    raw = os.environ.get("CMA_THREADS")
    if raw is None or raw == "":
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"CMA_THREADS must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise UsageError(f"CMA_THREADS must be a positive integer, got {raw!r}")
    return cap


def build_problem(cfg: RunConfig) -> tuple[ProblemSpec, object]:
    """Problem and (optional) catalog entry described by a configuration."""
    entry = get_entry(cfg.entry) if cfg.entry else None
    n = cfg.n if cfg.n is not None else entry.n
    if entry is not None and n != entry.n:
        raise UsageError(f"entry {entry.id} has n = {entry.n}, config says n = {n}")
    if cfg.shape == "ball":
        shape = Ball((0.0,) * (2 * n), cfg.R)
    else:
        shape = Box((-cfg.R,) * (2 * n), (cfg.R,) * (2 * n))
    grid = build_domain(shape, cfg.h, n)
    f = parse_rhs(cfg.rhs) if cfg.rhs is not None else entry.f
    g_fn = spatial_callable(cfg.g) if cfg.g is not None else entry.g
    return ProblemSpec.from_callable(grid, g_fn, f), entry


def _candidate(cfg: RunConfig, prob, entry, key: str = "u") -> GridFunction:
    grid = prob.grid
    if key == "u" and cfg.u_csv:
        return read_csv(cfg.u_csv, grid)
    desc = getattr(cfg, key)
    if desc is not None:
        return GridFunction.from_callable(grid, spatial_callable(desc))
    if entry is not None and key == "u":
        return entry.exact(grid)
    if key == "u":
        return solve(prob, _solve_options(cfg, verify=False)).solution
    raise UsageError(f"command needs '{key}'")


def _solve_options(cfg: RunConfig, verify: bool = True) -> SolveOptions:
    return SolveOptions(max_iters=cfg.max_iters, init=cfg.init, perron_refine=cfg.perron_refine,
                        verify=verify, check_tol=cfg.tol, verify_margin=cfg.margin)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def write_report(out: Path, record: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rec = _clean(record)
    lines = [f"{k}: {json.dumps(v) if isinstance(v, (list, dict)) else v}" for k, v in rec.items()]
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "record.json").write_text(json.dumps(rec, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# -- commands -------------------------------------------------------------------

def _cmd_solve(cfg, prob, entry, out):
    rep = solve(prob, _solve_options(cfg))
    write_csv(rep.solution, out / "solution.csv")
    rec = {"command": "solve", **rep.record()}
    ok = rep.passed
    if entry is not None and cfg.rhs is None and cfg.g is None:
        grid = prob.grid
        err = float(np.max(np.abs(rep.solution.values - entry.exact(grid).values)[grid.mask]))
        tol_err = 5.0 * grid.h ** 2 if cfg.tol_err is None else cfg.tol_err
        rec.update({"entry": entry.id, "error_inf": err, "tol_err": tol_err})
        ok = ok and err <= tol_err
    rec["pass"] = ok
    return ok, rec


def _cmd_check(cfg, prob, entry, out, side):
    u = _candidate(cfg, prob, entry)
    check = check_subsolution if side == "sub" else check_supersolution
    which = interior_core(prob.grid, cfg.margin * prob.grid.h) if cfg.margin > 0 else None
    rep = check(u, prob, tol=cfg.tol, which=which)
    return rep.passed, {"command": f"check-{side}", **rep.record(), "pass": rep.passed}


def _cmd_compare(cfg, prob, entry, out):
    u = _candidate(cfg, prob, entry, "u")
    v = _candidate(cfg, prob, entry, "v")
    res = check_comparison(u, v, tol_cmp=cfg.tol_cmp, prob=prob)
    rec = {"command": "compare", "pass": res.passed, "worst": res.worst, "tolerance": res.tolerance,
           "witness_node": list(res.witness_node) if res.witness_node else None}
    return res.passed, rec


def _cmd_envelope(cfg, prob, entry, out):
    w = _candidate(cfg, prob, entry)
    env = convex_envelope(w)
    write_csv(GridFunction(w.grid, np.where(np.isfinite(env.gamma.values), env.gamma.values, 0.0)),
              out / "envelope.csv")
    write_csv(GridFunction(w.grid, env.contact_mask.astype(float)), out / "contact.csv")
    defect = discrete_convexity_defect(env.gamma)
    ok = env.is_convex()
    rec = {"command": "envelope", "pass": ok, "method": env.method, "sweeps": env.sweeps,
           "contact_count": int(env.contact_mask.sum()), "convexity_defect": defect,
           "tol_contact": env.tol_contact, "r": env.r}
    return ok, rec


def _cmd_abp(cfg, prob, entry, out):
    u = _candidate(cfg, prob, entry)
    rep = abp_check(u, prob.f, prob)
    return rep.passed, {"command": "abp", **rep.record(), "pass": rep.passed}


def _cmd_regularize(cfg, prob, entry, out):
    u = _candidate(cfg, prob, entry)
    u_eps = sup_convolution(u, cfg.eps)
    write_csv(u_eps, out / "regularized.csv")
    semi = semiconvexity_constant(u_eps, cfg.eps)
    tol = default_tol(prob.grid.h) if cfg.tol is None else cfg.tol
    ok = semi >= -2.0 / cfg.eps - tol and bool(np.all(u_eps.values[prob.grid.mask] >= u.values[prob.grid.mask] - 1e-12))
    rec = {"command": "regularize", "pass": ok, "eps": cfg.eps, "semiconvexity": semi,
           "bound": -2.0 / cfg.eps, "max_lift": float(np.max((u_eps - u).values[prob.grid.mask]))}
    return ok, rec


def _cmd_modulus(cfg, prob, entry, out):
    u = _candidate(cfg, prob, entry)
    mod = measure_modulus(u)
    with open(out / "modulus.csv", "w", encoding="utf-8") as fh:
        fh.write("t,omega\n")
        for t, w in zip(mod.t, mod.omega):
            fh.write(f"{float(t)!r},{float(w)!r}\n")
    ok = bool(np.all(np.diff(mod.omega) >= 0))
    return ok, {"command": "modulus", "pass": ok, "t": mod.t.tolist(), "omega": mod.omega.tolist()}


_DISPATCH = {
    "solve": _cmd_solve,
    "check-sub": lambda c, p, e, o: _cmd_check(c, p, e, o, "sub"),
    "check-super": lambda c, p, e, o: _cmd_check(c, p, e, o, "super"),
    "compare": _cmd_compare,
    "envelope": _cmd_envelope,
    "abp": _cmd_abp,
    "regularize": _cmd_regularize,
    "modulus": _cmd_modulus,
}


def run(cfg: RunConfig, out: str | Path | None = None) -> int:
    """Execute a configuration; returns the exit status."""
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        prob, entry = build_problem(cfg)
    except (UsageError, KeyError, ValueError, CmaError) as exc:
        log.error("usage: %s", exc)
        write_report(out, {"command": cfg.command, "pass": False, "error": f"{type(exc).__name__}: {exc}"})
        return EXIT_USAGE
    try:
        ok, rec = _DISPATCH[cfg.command](cfg, prob, entry, out)
    except UsageError as exc:
        write_report(out, {"command": cfg.command, "pass": False, "error": f"UsageError: {exc}"})
        return EXIT_USAGE
    except (CmaError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        write_report(out, {"command": cfg.command, "pass": False, "error": f"{type(exc).__name__}: {exc}"})
        return EXIT_FAIL
    write_report(out, rec)
    return EXIT_PASS if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cma", description="Complex Monge-Ampere viscosity toolkit.")
    p.add_argument("command", choices=sorted(_DISPATCH))
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--h", type=float, help="grid spacing (overrides the config)")
    p.add_argument("--perron-refine", action="store_true", help="run the Perron refinement passes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _thread_cap()
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
        if cfg.command != args.command:
            raise UsageError(f"config command {cfg.command!r} does not match {args.command!r}")
        if args.h is not None and not args.h > 0:
            raise UsageError(f"--h must be positive, got {args.h}")
        cfg = cfg.with_overrides(out=args.out, h=args.h, perron_refine=True if args.perron_refine else None)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error: {issue}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(cfg)


def catalog_ids() -> list[str]:
    return sorted(CATALOG)


if __name__ == "__main__":
    sys.exit(main())
