"""Fast invariant suite behind ``hom3 selftest``: discrete calculus, solver,
media, kernels, sources, correctors and the pipeline, each a named check
returning (ok, detail)."""
from __future__ import annotations

import time

import numpy as np

from . import fieldio
from .correctors import build_correctors
from .experiments import check_source, fit_slope, make_source
from .kernels import QUAD_INDICES, GreenKernel, harmonic_hessian
from .lattice import Box, div, grad, interior_mask, zero_outgoing
from .media import EnsembleSpec, restrict_coefficients, sample
from .pipeline import AlgorithmKind, run_all
from .solver import apply_operator, solve_stack


def _spd(rng):
    M = rng.normal(size=(3, 3))
    return M @ M.T + 0.5 * np.eye(3)


def check_summation_by_parts():
    rng = np.random.default_rng(1)
    box = Box(3)
    worst = 0.0
    for _ in range(20):
        f = rng.integers(-50, 50, box.shape).astype(float)
        F = zero_outgoing(rng.integers(-50, 50, (3,) + box.shape).astype(float))
        worst = max(worst, abs(np.sum(f * div(F)) + np.sum(grad(f) * F)))
    return worst == 0.0, f"max defect {worst}"


def check_operator_symmetry():
    rng = np.random.default_rng(2)
    box = Box(5)
    a = sample(EnsembleSpec(master_seed=2), box)
    inner = interior_mask(box)
    u, v = (np.where(inner, rng.normal(size=box.shape), 0.0) for _ in range(2))
    lhs = np.sum(v * apply_operator(a, 0.3, u))
    rhs = np.sum(u * apply_operator(a, 0.3, v))
    rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return rel <= 1e-12, f"relative asymmetry {rel:.2e}"


def check_dense_solve():
    rng = np.random.default_rng(3)
    box = Box(3)
    a = sample(EnsembleSpec(master_seed=3), box)
    inner = interior_mask(box)
    idx = np.flatnonzero(inner)
    M = np.zeros((len(idx), len(idx)))
    for t, p in enumerate(idx):
        e = np.zeros(box.num_vertices)
        e[p] = 1.0
        M[:, t] = apply_operator(a, 0.1, e.reshape(box.shape)).ravel()[idx]
    b = rng.normal(size=len(idx))
    ref = np.linalg.solve(M, b)
    rhs = np.zeros(box.shape)
    rhs.ravel()[idx] = b
    u, rep = solve_stack(a, 0.1, rhs[None], tol=1e-12)
    err = np.abs(u[0].ravel()[idx] - ref).max() / np.abs(ref).max()
    return err <= 1e-8 and rep[0].converged, f"relative error {err:.2e}"


def check_flux_identity():
    a = sample(EnsembleSpec(master_seed=4), Box(8))
    cs = build_correctors(a, 4)
    inner = interior_mask(Box(8))
    worst = max(np.abs(div(cs.q[i]) - cs.phi[i] / cs.T)[inner].max() for i in range(3))
    return worst <= 10 * 1e-10 * a.max(), f"max defect {worst:.2e}"


def check_media_restriction():
    spec = EnsembleSpec(master_seed=5)
    big = sample(spec, Box(16))
    ok = all(np.array_equal(sample(spec, Box(R)), restrict_coefficients(big, Box(R))) for R in (4, 8))
    return ok, "radii 4, 8 inside 16"


def check_kernel_derivatives():
    rng = np.random.default_rng(6)
    k = GreenKernel(_spd(rng))
    d = rng.normal(size=(100, 3))
    X = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(1, 50, (100, 1))
    h = 1e-3
    worst = 0.0
    for order in range(1, 5):
        D = k.derivatives(X, order)
        prev = lambda Y: k.derivatives(Y, order - 1)  # noqa: E731
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            num = (8 * (prev(X + e) - prev(X - e)) - (prev(X + 2 * e) - prev(X - 2 * e))) / (12 * h)
            ref = D[(slice(None),) * order + (j,)]
            scale = np.abs(D).reshape(len(X), -1).max(axis=1)
            err = np.abs(num - ref).reshape(len(X), -1).max(axis=1) / scale
            worst = max(worst, err.max())
    return worst <= 1e-6, f"max relative error {worst:.2e}"


def check_kernel_harmonic():
    rng = np.random.default_rng(7)
    A = _spd(rng)
    k = GreenKernel(A)
    d = rng.normal(size=(100, 3))
    X = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(1, 50, (100, 1))
    D2 = k.derivatives(X, 2)
    rel = np.abs(np.einsum("kl,pkl->p", A, D2)) / np.einsum("kl,pkl->p", np.abs(A), np.abs(D2))
    return rel.max() <= 1e-10, f"max relative trace {rel.max():.2e}"


def check_harmonic_polynomials():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        A = _spd(rng)
        for ij in QUAD_INDICES:
            worst = max(worst, abs(np.sum(A * harmonic_hessian(A, ij))) / np.abs(A).max())
    return worst <= 1e-14, f"max trace {worst:.2e}"


def check_sources():
    bad = [s for s in range(100) if not check_source(make_source(s))]
    return not bad, f"failing seeds {bad}" if bad else "100 seeds exact"


def check_fit_slope():
    Ls = [8, 12, 16]
    err = abs(fit_slope(Ls, [3.0 * L ** -4.5 for L in Ls]) + 4.5)
    return err <= 1e-10, f"error {err:.1e}"


def check_field_roundtrip():
    u = np.random.default_rng(9).normal(size=(3,) + Box(2).shape)
    return np.array_equal(fieldio.from_bytes(fieldio.to_bytes(u)), u), "edge field"


def check_homogeneous_pipeline():
    L = 8
    a = np.ones((3,) + Box(2 * L).shape)
    res = run_all(a, make_source(1).g, L)
    full = res[AlgorithmKind.full]
    base = res[AlgorithmKind.no_multipole].u
    spread = max(np.abs(res[k].u - base).max() for k in (AlgorithmKind.full, AlgorithmKind.dipole_only))
    mom = max(np.abs(full.xi).max(), np.abs(full.c).max())
    ah = np.abs(full.ah - np.eye(3)).max()
    ok = spread <= 1e-8 and mom <= 1e-10 and ah <= 1e-10
    return ok, f"u spread {spread:.1e}, moments {mom:.1e}, a_h error {ah:.1e}"


CHECKS = (
    ("summation_by_parts", check_summation_by_parts),
    ("operator_symmetry", check_operator_symmetry),
    ("dense_solve", check_dense_solve),
    ("flux_identity", check_flux_identity),
    ("media_restriction", check_media_restriction),
    ("kernel_derivatives", check_kernel_derivatives),
    ("kernel_harmonic", check_kernel_harmonic),
    ("harmonic_polynomials", check_harmonic_polynomials),
    ("sources", check_sources),
    ("fit_slope", check_fit_slope),
    ("field_roundtrip", check_field_roundtrip),
    ("homogeneous_pipeline", check_homogeneous_pipeline),
)


def run_selftest(emit=print) -> bool:
    ok_all = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, reported like one
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - t0:.2f}s)")
    return ok_all
