"""Massive first-order correctors, fluxes, homogenized tensor, flux correctors
and second-order correctors on the nested boxes Q_2L, Q_7L/4 and Q_3L/2.

Two collocations of the flux-corrector and second-order-corrector
right-hand sides are available:

``staggered`` (default)
    sigma_ijk = plaquette potential at base point x, right-hand side
    q_ik(x+e_j) - q_ik(x) - q_ij(x+e_k) + q_ij(x); the psi right-hand side
    uses phi at the edge head, a half-step shift on the diagonal and
    sigma at x - e_j.  With whole-space correctors this makes
    v_h + phi_k d_k v_h + psi_ij d_ij v_h exactly discretely a-harmonic
    for every a_h-harmonic quadratic v_h.

``averaged``
    vertex-averaged fluxes, backward divergence, phi and sigma at the edge
    tail.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fieldio
from .lattice import Box, box_of, div, grad, restrict, zero_outgoing
from .media import restrict_coefficients
from .solver import DEFAULT_TOL, ConvergenceError, SolveReport, solve_stack

log = logging.getLogger(__name__)

SIGMA_PAIRS = ((0, 1), (0, 2), (1, 2))
PSI_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
SCHEMES = ("staggered", "averaged")


def massive_time(L: int, eps: float) -> float:
    return float(L) ** (2.0 * (1.0 - eps))


def corrector_radii(L: int) -> tuple[int, int, int]:
    if L % 4:
        raise ValueError(f"L must be divisible by 4, got {L}")
    return 2 * L, 7 * L // 4, 3 * L // 2


def _check(reports, stage):
    bad = [i for i, r in enumerate(reports) if not r.converged]
    if bad:
        raise ConvergenceError(f"{stage}: columns {bad} did not converge "
                               f"({[reports[i].relative_residual for i in bad]})")


def unit_coefficients(box: Box) -> np.ndarray:
    return np.ones((3,) + box.shape)


def compute_phi(a, T, tol=DEFAULT_TOL, max_iter=None):
    """First-order massive correctors with zero boundary values.

    Returns (phi, q, reports): phi has shape (3, n, n, n); q[i] is the edge
    flux a (e_i + grad phi_i), shape (3, 3, n, n, n).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    rhs = np.stack([div(zero_outgoing(_unit_edge(a, i))) for i in range(3)])
    phi, reports = solve_stack(a, 1.0 / T, rhs, tol=tol, max_iter=max_iter)
    return phi, fluxes(a, phi), reports


def _unit_edge(a, i):
    F = np.zeros_like(a)
    F[i] = a[i]
    return F


def fluxes(a, phi):
    ae = zero_outgoing(a)
    q = ae[None] * grad(phi)
    for i in range(3):
        q[i, i] += ae[i]
    return q


def average_flux(q):
    """Vertex-averaged flux: mean of the two edges in direction k through x."""
    out = np.array(q, dtype=np.float64, copy=True)
    for k in range(3):
        comp = q[..., k, :, :, :]
        acc = out[..., k, :, :, :]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[k] = slice(1, -1)
        hi[k] = slice(0, -2)
        # interior in direction k: both edges exist
        acc[(...,) + tuple(lo)] = 0.5 * (comp[(...,) + tuple(lo)] + comp[(...,) + tuple(hi)])
        first = [slice(None)] * 3
        first[k] = 0
        acc[(...,) + tuple(first)] = comp[(...,) + tuple(first)]
        last = [slice(None)] * 3
        prev = [slice(None)] * 3
        last[k] = -1
        prev[k] = -2
        acc[(...,) + tuple(last)] = comp[(...,) + tuple(prev)]
    return out


def ah_weights(box: Box, L: int) -> np.ndarray:
    """omega(x) proportional to (1 - |x/L|^2)^2 on |x| < L, unit lattice sum."""
    x = box.coords() / float(L)
    s = np.maximum(1.0 - (x ** 2).sum(axis=0), 0.0)
    w = s ** 2
    return w / w.sum()


def estimate_ah(q, L: int) -> np.ndarray:
    """Weighted flux average; column i is sum_x omega(x) qbar_i(x), symmetrized."""
    box = box_of(q)
    if box.radius < L:
        raise ValueError(f"flux box radius {box.radius} smaller than L={L}")
    w = ah_weights(box, L)
    qbar = average_flux(q)
    raw = np.einsum("xyz,ikxyz->ki", w, qbar)
    return 0.5 * (raw + raw.T)


def check_ah_band(ah, lower, upper, slack=0.0) -> bool:
    ev = np.linalg.eigvalsh(ah)
    return bool(ev.min() >= lower - slack and ev.max() <= upper + slack)


def _shift(u, axis, step):
    """u(x + step e_axis) on the interior slice convention: returns full array with
    entries that would read outside the box left at 0."""
    out = np.zeros_like(u)
    src = [slice(None)] * u.ndim
    dst = [slice(None)] * u.ndim
    ax = u.ndim - 3 + axis
    if step > 0:
        src[ax] = slice(step, None)
        dst[ax] = slice(None, -step)
    else:
        src[ax] = slice(None, step)
        dst[ax] = slice(-step, None)
    out[tuple(dst)] = u[tuple(src)]
    return out


def sigma_rhs(q, target: Box, scheme="staggered"):
    """Right-hand sides for sigma_ijk, (j,k) in SIGMA_PAIRS, shape (9, n, n, n).

    Row 3*i + p corresponds to (i, SIGMA_PAIRS[p]).
    """
    src = box_of(q)
    if target.radius >= src.radius:
        raise ValueError("sigma box must be strictly inside the flux box")
    rows = []
    if scheme == "staggered":
        qr = restrict(q, Box(target.radius + 1))
        for i in range(3):
            for j, k in SIGMA_PAIRS:
                dj = _shift(qr[i, k], j, 1) - qr[i, k]
                dk = _shift(qr[i, j], k, 1) - qr[i, j]
                rows.append(restrict(dj, target) - restrict(dk, target))
    elif scheme == "averaged":
        qbar = restrict(average_flux(q), target)
        for i in range(3):
            for j, k in SIGMA_PAIRS:
                Fjk = np.zeros((3,) + target.shape)
                Fjk[j] = qbar[i, k]
                Fkj = np.zeros((3,) + target.shape)
                Fkj[k] = qbar[i, j]
                rows.append(div(zero_outgoing(Fjk)) - div(zero_outgoing(Fkj)))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return np.stack(rows)


def compute_sigma(q, T, L, scheme="staggered", tol=DEFAULT_TOL, max_iter=None):
    """Flux correctors on Q_{7L/4} with unit coefficients and zero boundary values."""
    box = Box(corrector_radii(L)[1])
    rhs = sigma_rhs(q, box, scheme)
    sig, reports = solve_stack(unit_coefficients(box), 1.0 / T, rhs, tol=tol, max_iter=max_iter)
    return sig.reshape((3, 3) + box.shape), reports


def sigma_component(sigma, i, j, k):
    """sigma_ijk from the stored (j<k) components, using skew symmetry."""
    if j == k:
        return np.zeros(sigma.shape[-3:])
    if j < k:
        return sigma[i, SIGMA_PAIRS.index((j, k))]
    return -sigma[i, SIGMA_PAIRS.index((k, j))]


def psi_flux(a, phi, sigma, i, j, target: Box, scheme="staggered"):
    """Edge field H^(i,j) on ``target`` whose divergence drives psi_ij."""
    H = np.zeros((3,) + target.shape)
    ar = restrict_coefficients(a, target)
    if scheme == "staggered":
        big = Box(target.radius + 1)
        ph = restrict(phi[i], big)
        head = restrict(_shift(ph, j, 1), target)
        H[j] = ar[j] * (head + (0.5 if i == j else 0.0))
        for k in range(3):
            s = restrict(sigma_component(sigma, i, k, j), big)
            H[k] -= restrict(_shift(s, j, -1), target)
    elif scheme == "averaged":
        H[j] = ar[j] * restrict(phi[i], target)
        for k in range(3):
            H[k] -= restrict(sigma_component(sigma, i, k, j), target)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return zero_outgoing(H)


def psi_rhs(a, phi, sigma, target: Box, scheme="staggered"):
    rows = []
    for i, j in PSI_PAIRS:
        Hij = psi_flux(a, phi, sigma, i, j, target, scheme)
        Hji = psi_flux(a, phi, sigma, j, i, target, scheme)
        rows.append(div(0.5 * (Hij + Hji)))
    return np.stack(rows)


def compute_psi(a, phi, sigma, T, L, scheme="staggered", tol=DEFAULT_TOL, max_iter=None):
    """Symmetrized second-order correctors on Q_{3L/2}, stored for i <= j."""
    box = Box(corrector_radii(L)[2])
    rhs = psi_rhs(a, phi, sigma, box, scheme)
    ar = restrict_coefficients(a, box)
    psi, reports = solve_stack(ar, 1.0 / T, rhs, tol=tol, max_iter=max_iter)
    return psi, reports


def psi_component(psi, i, j):
    if i > j:
        i, j = j, i
    return psi[PSI_PAIRS.index((i, j))]


def psi_full(psi):
    """Symmetric (3, 3, n, n, n) view of the six stored components."""
    return np.stack([np.stack([psi_component(psi, i, j) for j in range(3)]) for i in range(3)])


@dataclass
class CorrectorSet:
    L: int
    T: float
    eps: float
    phi: np.ndarray  # (3, n2L...)
    q: np.ndarray  # (3, 3, n2L...)
    sigma: np.ndarray  # (3, 3, n7L/4...), second axis over SIGMA_PAIRS
    psi: np.ndarray  # (6, n3L/2...), over PSI_PAIRS
    ah: np.ndarray
    scheme: str = "staggered"
    seed: int | None = None
    reports: dict[str, list[SolveReport]] = field(default_factory=dict)

    def sigma_ijk(self, i, j, k):
        return sigma_component(self.sigma, i, j, k)

    def psi_ij(self, i, j):
        return psi_component(self.psi, i, j)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i in range(3):
            fieldio.write_field(d / f"phi_{i + 1}.bin", self.phi[i])
            fieldio.write_field(d / f"q_{i + 1}.bin", self.q[i])
            for p, (j, k) in enumerate(SIGMA_PAIRS):
                fieldio.write_field(d / f"sigma_{i + 1}{j + 1}{k + 1}.bin", self.sigma[i, p])
        for p, (i, j) in enumerate(PSI_PAIRS):
            fieldio.write_field(d / f"psi_{i + 1}{j + 1}.bin", self.psi[p])
        fieldio.write_manifest(d / "manifest.txt", {
            "L": self.L, "T": self.T, "eps": self.eps, "seed": self.seed,
            "scheme": self.scheme, "ah": self.ah,
        })

    @classmethod
    def load(cls, directory) -> "CorrectorSet":
        d = Path(directory)
        man = fieldio.read_manifest(d / "manifest.txt")
        phi = np.stack([fieldio.read_field(d / f"phi_{i + 1}.bin") for i in range(3)])
        q = np.stack([fieldio.read_field(d / f"q_{i + 1}.bin") for i in range(3)])
        sigma = np.stack([np.stack([fieldio.read_field(d / f"sigma_{i + 1}{j + 1}{k + 1}.bin")
                                    for j, k in SIGMA_PAIRS]) for i in range(3)])
        psi = np.stack([fieldio.read_field(d / f"psi_{i + 1}{j + 1}.bin") for i, j in PSI_PAIRS])
        ah = np.array([float(v) for v in man["ah"].split(",")]).reshape(3, 3)
        seed = None if man.get("seed", "None") == "None" else int(man["seed"])
        return cls(int(man["L"]), float(man["T"]), float(man["eps"]), phi, q, sigma, psi, ah,
                   man.get("scheme", "staggered"), seed)


def build_correctors(a, L, eps=0.1, scheme="staggered", tol=DEFAULT_TOL, max_iter=None,
                     seed=None) -> CorrectorSet:
    """phi and q on Q_2L, then a_h, sigma on Q_7L/4 and psi on Q_3L/2."""
    r2, r74, r32 = corrector_radii(L)
    if box_of(a).radius < r2:
        raise ValueError(f"coefficients on radius {box_of(a).radius}, need {r2}")
    a = restrict_coefficients(a, Box(r2))
    T = massive_time(L, eps)
    phi, q, rep_phi = compute_phi(a, T, tol, max_iter)
    _check(rep_phi, "phi")
    ah = estimate_ah(q, L)
    sigma, rep_sig = compute_sigma(q, T, L, scheme, tol, max_iter)
    _check(rep_sig, "sigma")
    psi, rep_psi = compute_psi(a, phi, sigma, T, L, scheme, tol, max_iter)
    _check(rep_psi, "psi")
    log.info("correctors L=%d: phi %s, sigma %s, psi %s iterations", L,
             [r.iterations for r in rep_phi], [r.iterations for r in rep_sig],
             [r.iterations for r in rep_psi])
    return CorrectorSet(L, T, eps, phi, q, sigma, psi, ah, scheme, seed,
                        {"phi": rep_phi, "sigma": rep_sig, "psi": rep_psi})
