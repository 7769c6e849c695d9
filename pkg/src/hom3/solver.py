"""Massive divergence-form equation (1/T) u - div(a grad u) = div(g) + h on a box.

Unknowns are the interior vertices; Dirichlet data on the outer layer is
lifted into the right-hand side.  Systems sharing one operator are solved
together as a stack of independent Jacobi-preconditioned CG iterations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

from .lattice import box_of, div, interior_mask, zero_outgoing

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool


@dataclass
class MassiveProblem:
    a: np.ndarray
    inv_T: float = 0.0
    g: np.ndarray | None = None
    h: np.ndarray | None = None
    bc: np.ndarray | None = None  # full vertex field; only the boundary layer is read

    def __post_init__(self):
        box = box_of(self.a)
        for name in ("g", "h", "bc"):
            v = getattr(self, name)
            if v is not None and box_of(v) != box:
                raise ValueError(f"{name} lives on radius {box_of(v).radius}, a on radius {box.radius}")
        if self.inv_T < 0:
            raise ValueError("inv_T must be nonnegative")


class ConvergenceError(RuntimeError):
    pass


@numba.njit(cache=True)
def _apply_stack(a, inv_t, u, out):
    m = u.shape[0]
    n = u.shape[1]
    for c in range(m):
        for i in range(1, n - 1):
            for j in range(1, n - 1):
                for k in range(1, n - 1):
                    uc = u[c, i, j, k]
                    s = inv_t * uc
                    s += a[0, i, j, k] * (uc - u[c, i + 1, j, k])
                    s += a[0, i - 1, j, k] * (uc - u[c, i - 1, j, k])
                    s += a[1, i, j, k] * (uc - u[c, i, j + 1, k])
                    s += a[1, i, j - 1, k] * (uc - u[c, i, j - 1, k])
                    s += a[2, i, j, k] * (uc - u[c, i, j, k + 1])
                    s += a[2, i, j, k - 1] * (uc - u[c, i, j, k - 1])
                    out[c, i, j, k] = s


@numba.njit(cache=True)
def _apply_dot(a, inv_t, u, out):
    # single field: out = A u on the interior, returns u . out
    n = u.shape[0]
    acc = 0.0
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            for k in range(1, n - 1):
                uc = u[i, j, k]
                s = inv_t * uc
                s += a[0, i, j, k] * (uc - u[i + 1, j, k])
                s += a[0, i - 1, j, k] * (uc - u[i - 1, j, k])
                s += a[1, i, j, k] * (uc - u[i, j + 1, k])
                s += a[1, i, j - 1, k] * (uc - u[i, j - 1, k])
                s += a[2, i, j, k] * (uc - u[i, j, k + 1])
                s += a[2, i, j, k - 1] * (uc - u[i, j, k - 1])
                out[i, j, k] = s
                acc += uc * s
    return acc


@numba.njit(cache=True)
def _diagonal(a, inv_t):
    n = a.shape[1]
    d = np.ones((n, n, n))
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            for k in range(1, n - 1):
                d[i, j, k] = (inv_t + a[0, i, j, k] + a[0, i - 1, j, k] + a[1, i, j, k]
                              + a[1, i, j - 1, k] + a[2, i, j, k] + a[2, i, j, k - 1])
    return d


def apply_operator(a: np.ndarray, inv_T: float, u: np.ndarray) -> np.ndarray:
    """Operator output at interior vertices; boundary entries are 0.

    ``u`` may be a single vertex field or a stack of them; boundary values
    of ``u`` enter the interior stencil.
    """
    if box_of(u) != box_of(a):
        raise ValueError("box mismatch between coefficients and field")
    single = u.ndim == 3
    us = np.ascontiguousarray(u[None] if single else u, dtype=np.float64)
    out = np.zeros_like(us)
    _apply_stack(np.ascontiguousarray(a, dtype=np.float64), float(inv_T), us, out)
    return out[0] if single else out


def _dots(x, y):
    m = x.shape[0]
    return np.einsum("ij,ij->i", x.reshape(m, -1), y.reshape(m, -1))


@numba.njit(cache=True)
def _pap(p, Ap):
    s = 0.0
    for t in range(p.size):
        s += p[t] * Ap[t]
    return s


@numba.njit(cache=True)
def _update_xr(alpha, p, Ap, x, r, inv_diag):
    # x += alpha p, r -= alpha Ap; returns (r.z, r.r) with z = r / diag
    rz = 0.0
    rr = 0.0
    for t in range(p.size):
        x[t] += alpha * p[t]
        rt = r[t] - alpha * Ap[t]
        r[t] = rt
        rz += rt * rt * inv_diag[t]
        rr += rt * rt
    return rz, rr


@numba.njit(cache=True)
def _update_p(beta, r, p, inv_diag):
    for t in range(p.size):
        p[t] = r[t] * inv_diag[t] + beta * p[t]


def cg_stack(a, inv_T, b, tol=DEFAULT_TOL, max_iter=None):
    """Solve A x = b for a stack b of shape (m, n, n, n) with zero boundary.

    Returns (x, reports).  Columns stop independently once the residual is
    below tol * |b|; a column whose recursive residual converges is checked
    against the true residual and restarted from it if needed.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    box = box_of(a)
    if max_iter is None:
        max_iter = 20 * box.n
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    inv_T = float(inv_T)
    m = b.shape[0]
    inv_diag = 1.0 / _diagonal(a, inv_T)
    flat_d = inv_diag.ravel()
    x = np.zeros_like(b)
    r = b.copy()
    p = r * inv_diag
    Ap = np.zeros(box.shape)
    its = np.zeros(m, dtype=int)
    rel = np.zeros(m)
    for c in range(m):
        bn = float(np.sqrt(_pap(b[c].ravel(), b[c].ravel())))
        if bn == 0.0:
            continue
        thresh = tol * bn
        xc, rc, pc = x[c].ravel(), r[c].ravel(), p[c].ravel()
        rz = _pap(rc, rc * flat_d)
        it = 0
        while it < max_iter:
            it += 1
            alpha = rz / _apply_dot(a, inv_T, p[c], Ap)
            rz_new, rr = _update_xr(alpha, pc, Ap.ravel(), xc, rc, flat_d)
            if np.sqrt(rr) <= thresh:
                true_r = b[c] - apply_operator(a, inv_T, x[c])
                if np.sqrt(_pap(true_r.ravel(), true_r.ravel())) <= thresh:
                    break
                rc[:] = true_r.ravel()
                pc[:] = rc * flat_d
                rz = _pap(rc, pc)
                continue
            _update_p(rz_new / rz, rc, pc, flat_d)
            rz = rz_new
        its[c] = it
        res = b[c] - apply_operator(a, inv_T, x[c])
        rel[c] = np.sqrt(_pap(res.ravel(), res.ravel())) / bn
    reports = []
    for c in range(m):
        ok = bool(rel[c] <= tol)
        reports.append(SolveReport(int(its[c]), float(rel[c]), ok))
        if not ok:
            log.warning("CG column %d stopped after %d iterations, residual %.3e", c, its[c], rel[c])
    return x, reports


def assemble_rhs(a, inv_T, g=None, h=None, bc=None):
    """Interior right-hand side div(g) + h - A(lift(bc)); boundary entries 0."""
    box = box_of(a)
    b = np.zeros(box.shape)
    if g is not None:
        b += div(zero_outgoing(g))
    if h is not None:
        b += h
    if bc is not None:
        lift = np.where(interior_mask(box), 0.0, bc)
        b -= apply_operator(a, inv_T, lift)
    b[~interior_mask(box)] = 0.0
    return b


def solve_stack(a, inv_T, rhs, bc=None, tol=DEFAULT_TOL, max_iter=None):
    """Batch solve; rhs is (m, n, n, n) interior data, bc an optional (m, n, n, n) stack."""
    box = box_of(a)
    rhs = np.array(rhs, dtype=np.float64, copy=True)
    inner = interior_mask(box)
    if bc is not None:
        lift = np.where(inner, 0.0, bc)
        rhs -= apply_operator(a, inv_T, lift)
    rhs[:, ~inner] = 0.0
    u, reports = cg_stack(a, inv_T, rhs, tol=tol, max_iter=max_iter)
    if bc is not None:
        u[:, ~inner] = bc[:, ~inner]
    return u, reports


def solve(problem: MassiveProblem, tol: float = DEFAULT_TOL, max_iter: int | None = None):
    """Solve one MassiveProblem; returns (u, SolveReport)."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    rhs = assemble_rhs(problem.a, problem.inv_T, problem.g, problem.h, None)
    bc = None if problem.bc is None else problem.bc[None]
    u, reports = solve_stack(problem.a, problem.inv_T, rhs[None], bc, tol=tol, max_iter=max_iter)
    return u[0], reports[0]

