"""Source construction, the convergence and growth studies, slope fits and CSV output."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .correctors import build_correctors, corrector_radii, psi_full
from .lattice import Box, div, restrict
from .media import EnsembleSpec, sample
from .pipeline import ALL_KINDS, AlgorithmKind, observe_gradient, run_all
from .solver import DEFAULT_TOL

log = logging.getLogger(__name__)

SOURCE_RADIUS = 3
_QUANTUM = 2.0 ** -32


@dataclass(frozen=True)
class SourcePair:
    f: np.ndarray  # vertex field on Q_3, supported in {-1, 0, 1}^3
    g: np.ndarray  # edge field on Q_3 with div g = f


@dataclass(frozen=True)
class ConvergenceRow:
    seed: int
    L: int
    algorithm: str
    grad_diff: float
    valid: bool = True


@dataclass(frozen=True)
class GrowthRow:
    r: int
    phi_l2: float
    psi_fluct: float


def source_from_charges(charges: np.ndarray) -> SourcePair:
    """Telescoped flux g for a mean-zero charge array of shape (3, 3, 3) on {-1,0,1}^3.

    x1-lines are emptied into the plane x1 = 0, that plane's x2-lines into the
    line x1 = x2 = 0, and that line along x3.
    """
    charges = np.asarray(charges, dtype=np.float64)
    if charges.shape != (3, 3, 3):
        raise ValueError("charges must have shape (3, 3, 3)")
    if abs(charges.sum()) > 1e-12 * max(1.0, np.abs(charges).max()):
        raise ValueError("charges must sum to zero, otherwise g is not compactly supported")
    box = Box(SOURCE_RADIUS)
    c = SOURCE_RADIUS
    f = np.zeros(box.shape)
    f[c - 1:c + 2, c - 1:c + 2, c - 1:c + 2] = charges
    A = f.sum(axis=0)  # (x2, x3) plane charge
    res1 = f.copy()
    res1[c] -= A
    B = A.sum(axis=0)  # x3 line charge
    res2 = A.copy()
    res2[c] -= B
    g = np.zeros((3,) + box.shape)
    g[0] = np.cumsum(res1, axis=0)
    g[1, c] = np.cumsum(res2, axis=0)
    g[2, c, c] = np.cumsum(B)
    return SourcePair(f, g)


def make_source(seed: int) -> SourcePair:
    """Standard normal charges on {-1,0,1}^3, shifted to mean zero.

    Charges are rounded to multiples of 2^-32 (and the rounding residue moved
    onto the origin) so every partial sum is exact and div g = f bitwise.
    """
    z = np.random.default_rng(seed).standard_normal((3, 3, 3))
    f = np.round((z - z.mean()) / _QUANTUM) * _QUANTUM
    f[1, 1, 1] -= f.sum()
    return source_from_charges(f)


def _scales(Ls):
    return sorted(set(Ls) | {2 * L for L in Ls})


def _validate_Ls(Ls):
    for L in Ls:
        if L % 4 or L < 4:
            raise ValueError(f"L={L} must be a positive multiple of 4")


def seed_rows(seed, Ls, kinds, eps, ensemble: EnsembleSpec, scheme="staggered",
              tol=DEFAULT_TOL, max_iter=None):
    """Convergence rows for one seed; the medium is sampled once on radius 4 max(L)."""
    Ls = sorted(Ls)
    kinds = [AlgorithmKind(k) for k in kinds]
    spec = EnsembleSpec(ensemble.kind, ensemble.contrast, ensemble.p, seed)
    a = sample(spec, Box(4 * max(Ls)))
    src = make_source(seed)
    grads: dict[tuple[int, int, AlgorithmKind], np.ndarray] = {}
    failed: set[tuple[int, AlgorithmKind]] = set()
    for s in _scales(Ls):
        obs = [L for L in Ls if s in (L, 2 * L)]
        try:
            results = run_all(a, src.g, s, eps, kinds, scheme=scheme, tol=tol, max_iter=max_iter,
                              seed=seed)
        except Exception as exc:  # recorded per row
            log.error("seed %d scale %d failed: %s", seed, s, exc)
            failed.update((s, k) for k in kinds)
            continue
        for L in obs:
            x = (L // 2,) * 3
            for k in kinds:
                grads[(s, L, k)] = observe_gradient(results[k], x)
        log.info("seed %d scale %d done", seed, s)
    rows = []
    for L in Ls:
        for k in kinds:
            if (L, k) in failed or (2 * L, k) in failed:
                rows.append(ConvergenceRow(seed, L, k.value, math.nan, False))
                continue
            d = grads[(2 * L, L, k)] - grads[(L, L, k)]
            rows.append(ConvergenceRow(seed, L, k.value, float(np.linalg.norm(d))))
    return rows


def convergence_study(Ls, seeds, kinds=ALL_KINDS, eps=0.1, ensemble: EnsembleSpec | None = None,
                      scheme="staggered", tol=DEFAULT_TOL, max_iter=None, workers=1):
    """Successive-difference rows |grad(u^(2L) - u^(L))(L/2, L/2, L/2)| per (seed, L, kind)."""
    _validate_Ls(Ls)
    ensemble = ensemble or EnsembleSpec()
    args = [(seed, list(Ls), list(kinds), eps, ensemble, scheme, tol, max_iter) for seed in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_seed_rows_star, args))
    else:
        chunks = [seed_rows(*arg) for arg in args]
    return [row for chunk in chunks for row in chunk]


def _seed_rows_star(arg):
    return seed_rows(*arg)


def growth_study(L, seed, radii, eps=0.1, ensemble: EnsembleSpec | None = None,
                 scheme="staggered", tol=DEFAULT_TOL, max_iter=None):
    """Averages of |phi|^2 and of the fluctuation of psi over Q_r, for each r."""
    r2, _, r32 = corrector_radii(L)
    if max(radii) > r32:
        raise ValueError(f"radius {max(radii)} exceeds the psi box radius {r32}")
    ensemble = ensemble or EnsembleSpec()
    spec = EnsembleSpec(ensemble.kind, ensemble.contrast, ensemble.p, seed)
    cs = build_correctors(sample(spec, Box(r2)), L, eps, scheme, tol, max_iter, seed)
    psi = psi_full(cs.psi)
    rows = []
    for r in radii:
        box = Box(r)
        ph = restrict(cs.phi, box)
        ps = restrict(psi, box)
        phi_l2 = math.sqrt(float(np.mean(np.sum(ph ** 2, axis=0))))
        fl = ps - ps.mean(axis=(-3, -2, -1), keepdims=True)
        psi_fluct = math.sqrt(float(np.mean(np.sum(fl ** 2, axis=(0, 1)))))
        rows.append(GrowthRow(r, phi_l2, psi_fluct))
    return rows


def fit_slope(Ls, values, drop_smallest=True) -> float:
    """Least-squares slope of log(value) against log(L).

    With four or more points the smallest L is dropped.
    """
    Ls = np.asarray(Ls, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(np.unique(Ls)) < 3:
        raise ValueError("need at least 3 distinct L values")
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise ValueError("values must be positive and finite")
    order = np.argsort(Ls)
    Ls, values = Ls[order], values[order]
    if drop_smallest and len(Ls) >= 4:
        Ls, values = Ls[1:], values[1:]
    return float(np.polyfit(np.log(Ls), np.log(values), 1)[0])


def slopes(rows):
    """Per (algorithm, seed) slopes, skipping groups with invalid rows."""
    groups: dict[tuple[str, int], list[ConvergenceRow]] = {}
    for r in rows:
        groups.setdefault((r.algorithm, r.seed), []).append(r)
    out = []
    for (alg, seed), rs in groups.items():
        if not all(r.valid for r in rs):
            out.append((alg, seed, math.nan))
            continue
        try:
            out.append((alg, seed, fit_slope([r.L for r in rs], [r.grad_diff for r in rs])))
        except ValueError:
            out.append((alg, seed, math.nan))
    return out


def mean_slopes(slope_rows) -> dict[str, float]:
    acc: dict[str, list[float]] = {}
    for alg, _, s in slope_rows:
        acc.setdefault(alg, []).append(s)
    return {alg: float(np.mean(v)) for alg, v in acc.items()}


def _g17(x) -> str:
    return format(float(x), ".17g")


def write_convergence_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "L", "algorithm", "grad_diff"])
        for r in rows:
            w.writerow([r.seed, r.L, r.algorithm, _g17(r.grad_diff)])


def read_convergence_csv(path) -> list[ConvergenceRow]:
    with open(path, newline="") as fh:
        return [ConvergenceRow(int(d["seed"]), int(d["L"]), d["algorithm"], float(d["grad_diff"]),
                               math.isfinite(float(d["grad_diff"])))
                for d in csv.DictReader(fh)]


def write_growth_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "phi_l2", "psi_fluct"])
        for r in rows:
            w.writerow([r.r, _g17(r.phi_l2), _g17(r.psi_fluct)])


def write_slopes_csv(path, slope_rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "seed", "slope"])
        for alg, seed, s in slope_rows:
            w.writerow([alg, seed, _g17(s)])


def check_source(src: SourcePair) -> bool:
    """div g = f exactly, and g lives on edges with both ends in Q_2."""
    outside = Box(SOURCE_RADIUS).coords()
    far = np.abs(outside).max(axis=0) > 2
    g = src.g
    leaving = np.any(g[0, -2:]) or np.any(g[1, :, -2:]) or np.any(g[2, :, :, -2:])
    return bool(np.array_equal(div(g), src.f) and not np.any(g[:, far]) and not leaving)
