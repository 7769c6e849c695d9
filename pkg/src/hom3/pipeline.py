"""Artificial boundary data on Q_L and the final Dirichlet solve, for the full
multipole algorithm and the three comparison variants."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__, fieldio
from .correctors import CorrectorSet, build_correctors, psi_full
from .kernels import GreenKernel, HomogenizedSolution, dipole_xi, quadrupole_c
from .lattice import Box, box_of, boundary_mask, div, extend, grad, restrict, zero_outgoing
from .media import restrict_coefficients
from .solver import DEFAULT_TOL, ConvergenceError, SolveReport, solve_stack

log = logging.getLogger(__name__)


class AlgorithmKind(str, Enum):
    full = "full"
    dirichlet_zero = "dirichlet_zero"
    no_multipole = "no_multipole"
    dipole_only = "dipole_only"


ALL_KINDS = tuple(AlgorithmKind)


@dataclass
class PipelineResult:
    kind: AlgorithmKind
    L: int
    u: np.ndarray
    boundary_data: np.ndarray  # vertex field on Q_L, nonzero only on the boundary layer
    xi: np.ndarray | None
    c: np.ndarray | None
    ah: np.ndarray
    T: float
    eps: float
    reports: dict[str, list[SolveReport]] = field(default_factory=dict)
    stage_radii: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def save(self, directory, extra: dict | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        fieldio.write_field(d / "u.bin", self.u)
        fieldio.write_field(d / "boundary.bin", self.boundary_data)
        man = {"version": __version__, "L": self.L, "eps": self.eps, "T": self.T,
               "kind": self.kind.value, "ah": self.ah,
               "xi": "absent" if self.xi is None else self.xi,
               "c": "absent" if self.c is None else self.c}
        for stage, reps in self.reports.items():
            man[f"iterations_{stage}"] = [r.iterations for r in reps]
        for stage, sec in self.timings.items():
            man[f"seconds_{stage}"] = round(sec, 3)
        man.update(extra or {})
        fieldio.write_manifest(d / "manifest.txt", man)


def source_term(g: np.ndarray) -> np.ndarray:
    return div(zero_outgoing(g))


def _boundary_points(box: Box):
    mask = boundary_mask(box)
    X = box.coords()[:, mask].T.astype(np.float64)
    return mask, X


def two_scale(w, dw, d2w, phi_b, psi_b=None):
    """(1 + phi_i d_i + psi_ij d_ij) applied pointwise, given derivatives of w."""
    out = w + np.einsum("pi,pi->p", phi_b, dw)
    if psi_b is not None:
        out = out + np.einsum("pij,pij->p", psi_b, d2w)
    return out


def boundary_data(kind, L, cs: CorrectorSet | None, g, ah=None, mask_X=None):
    """Dirichlet data on dQ_L for one algorithm kind, as (field, xi, c)."""
    kind = AlgorithmKind(kind)
    box = Box(L)
    mask, X = mask_X if mask_X is not None else _boundary_points(box)
    data = np.zeros(box.shape)
    if kind is AlgorithmKind.dirichlet_zero:
        return data, None, None
    ah = cs.ah if ah is None else ah
    kernel = GreenKernel(ah)
    f = source_term(g)
    phi_b = restrict(cs.phi, box)[:, mask].T
    xi = dipole_xi(g, cs.phi) if kind in (AlgorithmKind.dipole_only, AlgorithmKind.full) else None
    c = None
    psi_b = None
    if kind in (AlgorithmKind.no_multipole, AlgorithmKind.full):
        ps = psi_full(cs.psi)
        psi_b = restrict(ps, box)[:, :, mask].transpose(2, 0, 1)
        if kind is AlgorithmKind.full:
            c = quadrupole_c(g, cs.phi, ps, ah)
    sol = HomogenizedSolution(kernel, f, xi, c)
    w = sol.evaluate(X, 0)
    dw = sol.evaluate(X, 1)
    d2w = sol.evaluate(X, 2) if psi_b is not None else None
    data[mask] = two_scale(w, dw, d2w, phi_b, psi_b)
    return data, xi, c


def run_all(a, g, L, eps=0.1, kinds=ALL_KINDS, correctors: CorrectorSet | None = None,
            scheme="staggered", tol=DEFAULT_TOL, max_iter=None, seed=None):
    """Run every requested kind on one realization, sharing correctors and the final operator.

    ``a`` must cover Q_2L (larger boxes are restricted); ``g`` is the source
    edge field on a box strictly inside Q_L.
    """
    if L % 4:
        raise ValueError(f"L must be divisible by 4, got {L}")
    kinds = [AlgorithmKind(k) for k in kinds]
    gbox = box_of(g)
    if gbox.radius >= L:
        raise ValueError(f"source box radius {gbox.radius} not inside Q_{L}")
    timings = {}
    needs_correctors = any(k is not AlgorithmKind.dirichlet_zero for k in kinds)
    if needs_correctors and correctors is None:
        t0 = time.perf_counter()
        correctors = build_correctors(a, L, eps, scheme, tol, max_iter, seed)
        timings["correctors"] = time.perf_counter() - t0
    box = Box(L)
    aL = restrict_coefficients(a, box)
    mask_X = _boundary_points(box)
    t0 = time.perf_counter()
    bcs, moments = [], []
    for k in kinds:
        data, xi, c = boundary_data(k, L, correctors, g, mask_X=mask_X)
        bcs.append(data)
        moments.append((xi, c))
    timings["boundary"] = time.perf_counter() - t0
    f = extend(source_term(g), box)
    t0 = time.perf_counter()
    rhs = np.repeat(f[None], len(kinds), axis=0)
    u, reports = solve_stack(aL, 0.0, rhs, np.stack(bcs), tol=tol, max_iter=max_iter)
    timings["final"] = time.perf_counter() - t0
    bad = [k.value for k, r in zip(kinds, reports) if not r.converged]
    if bad:
        raise ConvergenceError(f"final solve did not converge for {bad}")
    r2 = 2 * L
    radii = {"phi": r2, "sigma": 7 * L // 4, "psi": 3 * L // 2, "final": L}
    out = {}
    for t, k in enumerate(kinds):
        reps = dict(correctors.reports) if correctors is not None else {}
        reps["final"] = [reports[t]]
        ah = correctors.ah if correctors is not None else np.full((3, 3), np.nan)
        T = correctors.T if correctors is not None else float(L) ** (2 * (1 - eps))
        out[k] = PipelineResult(k, L, u[t], bcs[t], moments[t][0], moments[t][1], ah, T, eps,
                                reps, radii, dict(timings))
    return out


def run(a, g, L, eps=0.1, kind=AlgorithmKind.full, **kw) -> PipelineResult:
    kind = AlgorithmKind(kind)
    return run_all(a, g, L, eps, kinds=[kind], **kw)[kind]


def observe_gradient(result: PipelineResult, x) -> np.ndarray:
    """Forward difference gradient of u at lattice point x."""
    box = box_of(result.u)
    x = np.asarray(x, dtype=int)
    if np.abs(x).max() > box.radius or np.any(x + 1 > box.radius):
        raise IndexError(f"point {tuple(x)} and its forward neighbours must lie in Q_{box.radius}")
    i = tuple(x + box.radius)
    u = result.u
    return np.array([u[i[0] + 1, i[1], i[2]] - u[i],
                     u[i[0], i[1] + 1, i[2]] - u[i],
                     u[i[0], i[1], i[2] + 1] - u[i]])


def gradient_at(u: np.ndarray, x) -> np.ndarray:
    return grad(u)[(slice(None),) + box_of(u).index(x)]
