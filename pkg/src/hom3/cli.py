"""Command-line interface: ah, solve, convergence, growth, selftest.

Defaults may come from a key=value file given with --config; explicit flags
win.  Parallelism: --threads, else HOM3_THREADS, else the config file, else 1.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, fieldio
from .correctors import SCHEMES, compute_phi, estimate_ah, massive_time
from .experiments import (SourcePair, convergence_study, growth_study, make_source, mean_slopes,
                          slopes, write_convergence_csv, write_growth_csv, write_slopes_csv)
from .lattice import Box
from .media import KINDS, EnsembleSpec, check_ellipticity, sample
from .pipeline import ALL_KINDS, AlgorithmKind, run
from .selftest import run_selftest
from .solver import DEFAULT_TOL, ConvergenceError
from .svgplot import convergence_svg, growth_svg

log = logging.getLogger("hom3")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# keys a config file may set, with their parsers
CONFIG_KEYS = {
    "eps": float, "cg_tol": float, "cg_max_iter": int, "ensemble": str, "contrast": float,
    "p": float, "scheme": str, "threads": int, "out": str, "L": int, "seed": int, "alg": str,
    "Ls": str, "seeds": str, "kinds": str, "radii": str, "log_level": str,
}


class ConfigError(ValueError):
    pass


def _int_list(text):
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise ConfigError(f"expected comma separated integers, got {text!r}") from exc


def read_config(path) -> dict:
    entries = fieldio.read_manifest(path)
    out = {}
    for key, value in entries.items():
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return out


def _common(p):
    p.add_argument("--config", help="key=value file with default settings")
    p.add_argument("--eps", type=float, default=0.1, help="T = L^(2(1-eps)), eps in (0, 1)")
    p.add_argument("--ensemble", choices=KINDS, default="bernoulli_contrast")
    p.add_argument("--contrast", type=float, default=9.0)
    p.add_argument("--p", type=float, default=0.5, help="probability of the high conductance")
    p.add_argument("--cg-tol", dest="cg_tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--cg-max-iter", dest="cg_max_iter", type=int, default=None)
    p.add_argument("--scheme", choices=SCHEMES, default="staggered",
                   help="collocation of the sigma and psi right-hand sides")
    p.add_argument("--threads", type=int, default=None, help="worker processes (overrides HOM3_THREADS)")
    p.add_argument("--out", default="hom3_out", help="output directory")
    p.add_argument("--log-level", dest="log_level", default="INFO")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hom3", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hom3 {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ah", help="homogenized tensor estimate on Q_L")
    _common(p)
    p.add_argument("--L", type=int, default=None, help="box radius, a multiple of 4 (required)")
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("solve", help="one pipeline run, fields persisted under --out")
    _common(p)
    p.add_argument("--L", type=int, default=None, help="box radius, a multiple of 4 (required)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--alg", choices=[k.value for k in ALL_KINDS], default="full")
    p.add_argument("--zero-source", dest="zero_source", action="store_true", help="use g = 0")

    p = sub.add_parser("convergence", help="successive-difference study, CSV and SVG output")
    _common(p)
    p.add_argument("--Ls", default="8,12,16")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--kinds", default=",".join(k.value for k in ALL_KINDS))

    p = sub.add_parser("growth", help="corrector growth over nested boxes")
    _common(p)
    p.add_argument("--L", type=int, default=16)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--radii", default=None, help="comma separated radii (default 4, 6, ..., L)")

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--log-level", dest="log_level", default="WARNING")
    return parser


def _explicit(sub: argparse.ArgumentParser, argv) -> set[str]:
    """Destinations of options spelled out on the command line."""
    given = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    return {a.dest for a in sub._actions if given & set(a.option_strings)}  # noqa: SLF001


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.threads_source = "flag" if getattr(args, "threads", None) is not None else None
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        sub = build_parser()._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        explicit = _explicit(sub, argv)
        for key, value in cfg.items():
            if key in explicit:
                continue
            if not hasattr(args, key):
                raise ConfigError(f"config key {key!r} does not apply to {args.command}")
            setattr(args, key, value)
            if key == "threads":
                args.threads_source = "config"
    validate(args)
    return args


def resolve_threads(args) -> int:
    """--threads flag, then HOM3_THREADS, then the config file, then 1."""
    src = getattr(args, "threads_source", None)
    if src == "flag":
        return max(1, args.threads)
    env = os.environ.get("HOM3_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"HOM3_THREADS must be an integer, got {env!r}") from exc
    if src == "config":
        return max(1, args.threads)
    return 1


def validate(args) -> None:
    if args.command == "selftest":
        return
    if not 0.0 < args.eps < 1.0:
        raise ConfigError(f"eps must lie in (0, 1), got {args.eps}")
    if not args.cg_tol > 0:
        raise ConfigError(f"cg_tol must be positive, got {args.cg_tol}")
    if args.cg_max_iter is not None and args.cg_max_iter < 1:
        raise ConfigError("cg_max_iter must be at least 1")
    if hasattr(args, "L"):
        if args.L is None:
            raise ConfigError("--L is required")
        if args.L < 4 or args.L % 4:
            raise ConfigError(f"L must be a positive multiple of 4, got {args.L}")
    if args.command == "convergence":
        Ls = _int_list(args.Ls)
        if not Ls or not _int_list(args.seeds):
            raise ConfigError("Ls and seeds must be non-empty")
        if any(L < 4 or L % 4 for L in Ls):
            raise ConfigError(f"every L must be a positive multiple of 4, got {Ls}")
        try:
            kinds = [AlgorithmKind(k) for k in str(args.kinds).split(",") if k]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not kinds:
            raise ConfigError("kinds must be non-empty")
    if args.scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {args.scheme!r}")
    try:
        EnsembleSpec(args.ensemble, args.contrast, args.p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _ensemble(args, seed=0) -> EnsembleSpec:
    return EnsembleSpec(args.ensemble, args.contrast, args.p, seed)


def _config_echo(args) -> dict:
    skip = {"command", "threads_source"}
    return {f"config.{k}": v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def _base_manifest(args, command) -> dict:
    return {"tool": "hom3", "version": __version__, "command": command,
            "python": platform.python_version(), "numpy": np.__version__, **_config_echo(args)}


def cmd_ah(args) -> int:
    L = args.L
    box = Box(2 * L)
    spec = _ensemble(args, args.seed)
    t0 = time.perf_counter()
    a = sample(spec, box)
    if not check_ellipticity(a, *spec.bounds):
        raise ConfigError("sampled medium violates its ellipticity bounds")
    t1 = time.perf_counter()
    phi, q, reports = compute_phi(a, massive_time(L, args.eps), args.cg_tol, args.cg_max_iter)
    t2 = time.perf_counter()
    if not all(r.converged for r in reports):
        raise ConvergenceError("phi solve did not converge")
    ah = estimate_ah(q, L)
    for row in ah:
        print(" ".join(format(float(v), ".17g") for v in row))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _base_manifest(args, "ah")
    man.update({"L": L, "seed": args.seed, "T": massive_time(L, args.eps), "ah": ah,
                "iterations_phi": [r.iterations for r in reports],
                "seconds_sample": round(t1 - t0, 3), "seconds_phi": round(t2 - t1, 3)})
    fieldio.write_manifest(out / "manifest.txt", man)
    return EXIT_OK


def cmd_solve(args) -> int:
    L = args.L
    spec = _ensemble(args, args.seed)
    a = sample(spec, Box(2 * L))
    src = SourcePair(np.zeros(Box(3).shape), np.zeros((3,) + Box(3).shape)) if args.zero_source \
        else make_source(args.seed)
    t0 = time.perf_counter()
    res = run(a, src.g, L, args.eps, AlgorithmKind(args.alg), scheme=args.scheme, tol=args.cg_tol,
              max_iter=args.cg_max_iter, seed=args.seed)
    man = _base_manifest(args, "solve")
    man.update({"seed": args.seed, "scheme": args.scheme, "seconds_total": round(time.perf_counter() - t0, 3)})
    res.save(args.out, man)
    log.info("u(0) = %.17g, result written to %s", res.u[(L,) * 3], args.out)
    return EXIT_OK


def cmd_convergence(args) -> int:
    Ls, seeds = _int_list(args.Ls), _int_list(args.seeds)
    kinds = [AlgorithmKind(k) for k in str(args.kinds).split(",") if k]
    workers = resolve_threads(args)
    t0 = time.perf_counter()
    rows = convergence_study(Ls, seeds, kinds, args.eps, _ensemble(args), args.scheme, args.cg_tol,
                             args.cg_max_iter, workers)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_convergence_csv(out / "convergence.csv", rows)
    slope_rows = slopes(rows) if len(set(Ls)) >= 3 else []
    write_slopes_csv(out / "slopes.csv", slope_rows)
    (out / "convergence.svg").write_text(convergence_svg(rows, slope_rows))
    means = mean_slopes(slope_rows)
    for k, s in means.items():
        print(f"{k} mean slope {s:.4f}")
    man = _base_manifest(args, "convergence")
    man.update({"workers": workers, "rows": len(rows), "invalid_rows": sum(not r.valid for r in rows),
                "seconds_total": round(elapsed, 3)})
    man.update({f"mean_slope.{k}": v for k, v in means.items()})
    fieldio.write_manifest(out / "manifest.txt", man)
    if any(not r.valid for r in rows):
        log.error("%d invalid rows", sum(not r.valid for r in rows))
        return EXIT_FAIL
    return EXIT_OK


def cmd_growth(args) -> int:
    radii = _int_list(args.radii) if args.radii else list(range(4, args.L + 1, 2))
    if not radii or min(radii) < 1:
        raise ConfigError("radii must be positive")
    t0 = time.perf_counter()
    rows = growth_study(args.L, args.seed, radii, args.eps, _ensemble(args), args.scheme, args.cg_tol,
                        args.cg_max_iter)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_growth_csv(out / "growth.csv", rows)
    (out / "growth.svg").write_text(growth_svg(rows) if any(r.phi_l2 > 0 for r in rows) else _empty_svg())
    man = _base_manifest(args, "growth")
    man.update({"seed": args.seed, "seconds_total": round(elapsed, 3)})
    fieldio.write_manifest(out / "manifest.txt", man)
    bad = [r.r for r in rows if not (math.isfinite(r.phi_l2) and math.isfinite(r.psi_fluct))]
    return EXIT_FAIL if bad else EXIT_OK


def _empty_svg() -> str:
    return ('<svg xmlns="http://www.w3.org/2000/svg" width="640" height="80">'
            '<text x="20" y="40">all values are zero</text></svg>\n')


def cmd_selftest(args) -> int:
    ok = run_selftest(lambda line: print(line, flush=True))
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"ah": cmd_ah, "solve": cmd_solve, "convergence": cmd_convergence, "growth": cmd_growth,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"hom3: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"hom3: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
