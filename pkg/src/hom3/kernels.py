"""Constant-coefficient objects for -div(A grad): Green function and its
derivatives up to order four, A-harmonic quadratics, dipole and quadrupole
moments, and the multipole-corrected homogenized potential.

All evaluations are vectorized over point arrays of shape (npts, 3).
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .lattice import box_of, grad, restrict

# quadrupole index set, 0-based
QUAD_INDICES = ((0, 1), (0, 2), (1, 2), (1, 1), (2, 2))

# d^m/dQ^m of Q^(-1/2)
_RADIAL = (1.0, -0.5, 0.75, -1.875, 6.5625)


class SourceSupportError(ValueError):
    pass


@dataclass(frozen=True)
class GreenKernel:
    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        if A.shape != (3, 3) or not np.allclose(A, A.T, rtol=0, atol=1e-13 * np.abs(A).max()):
            raise ValueError("A must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise ValueError("A must be positive definite")
        object.__setattr__(self, "A", 0.5 * (A + A.T))
        object.__setattr__(self, "B", np.linalg.inv(self.A))
        object.__setattr__(self, "c0", 1.0 / (4.0 * np.pi * np.sqrt(np.linalg.det(self.A))))

    def derivatives(self, X, order: int) -> np.ndarray:
        """Full derivative tensor of G of the given order at points X.

        Shape (npts,) + (3,) * order.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = 2.0 * X @ self.B  # grad Q
        Q = 0.5 * np.einsum("pi,pi->p", X, Y)
        if np.any(Q <= 0):
            raise ValueError("Green function evaluated at the origin")
        H = 2.0 * self.B  # Hessian of Q
        f = [self.c0 * c * Q ** (-0.5 - m) for m, c in enumerate(_RADIAL)]
        if order == 0:
            return f[0]
        if order == 1:
            return f[1][:, None] * Y
        if order == 2:
            return (f[2][:, None, None] * np.einsum("pi,pj->pij", Y, Y)
                    + f[1][:, None, None] * H)
        if order == 3:
            return (f[3][:, None, None, None] * np.einsum("pi,pj,pk->pijk", Y, Y, Y)
                    + f[2][:, None, None, None] * _sym3(Y, H))
        if order == 4:
            HH = np.einsum("ij,kl->ijkl", H, H)
            hh = HH + HH.transpose(0, 2, 1, 3) + HH.transpose(0, 2, 3, 1)
            return (f[4][:, None, None, None, None] * np.einsum("pi,pj,pk,pl->pijkl", Y, Y, Y, Y)
                    + f[3][:, None, None, None, None] * _sym4(Y, H)
                    + f[2][:, None, None, None, None] * hh[None])
        raise ValueError(f"derivative order {order} not supported (max 4)")


def _sym3(Y, H):
    # Y_i H_jk + Y_j H_ik + Y_k H_ij
    return (np.einsum("pi,jk->pijk", Y, H) + np.einsum("pj,ik->pijk", Y, H)
            + np.einsum("pk,ij->pijk", Y, H))


def _sym4(Y, H):
    # the six placements of H on an index pair, Y on the other two
    return (np.einsum("pi,pj,kl->pijkl", Y, Y, H) + np.einsum("pi,pk,jl->pijkl", Y, Y, H)
            + np.einsum("pi,pl,jk->pijkl", Y, Y, H) + np.einsum("pj,pk,il->pijkl", Y, Y, H)
            + np.einsum("pj,pl,ik->pijkl", Y, Y, H) + np.einsum("pk,pl,ij->pijkl", Y, Y, H))


def green_derivative(kernel: GreenKernel, x, alpha) -> float:
    """Partial derivative of G at a single point; alpha is a tuple of axis indices."""
    x = np.asarray(x, dtype=np.float64)
    if not np.any(x):
        raise ValueError("Green function evaluated at the origin")
    T = kernel.derivatives(x[None], len(alpha))[0]
    return float(T[tuple(alpha)]) if alpha else float(T)


def _check_far(X, pts):
    if len(pts) == 0:
        return
    lo = pts.min(axis=0) - 1
    hi = pts.max(axis=0) + 1
    inside = np.all((X >= lo) & (X <= hi), axis=1)
    if np.any(inside):
        raise SourceSupportError("evaluation point inside the inflated source support")


def utilde(kernel: GreenKernel, f: np.ndarray, X, order: int = 0) -> np.ndarray:
    """Lattice convolution sum_y G(x - y) f(y) (or its derivative tensor) at X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    idx = np.argwhere(f != 0)
    pts = idx - box_of(f).radius
    _check_far(X, pts)
    out = np.zeros((len(X),) + (3,) * order)
    for y, w in zip(pts, f[tuple(idx.T)]):
        out += w * kernel.derivatives(X - y, order)
    return out


def harmonic_polynomial(ah, ij, X):
    """v_ij(x) = (1 - delta_ij/2)(x_i x_j - (ah_ij/ah_11) x_1^2) and its gradient."""
    ah = np.asarray(ah, dtype=np.float64)
    if ah[0, 0] == 0:
        raise ValueError("degenerate tensor: ah_11 = 0")
    i, j = ij
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    fac = 0.5 if i == j else 1.0
    r = ah[i, j] / ah[0, 0]
    val = fac * (X[:, i] * X[:, j] - r * X[:, 0] ** 2)
    g = np.zeros_like(X)
    g[:, i] += fac * X[:, j]
    g[:, j] += fac * X[:, i]
    g[:, 0] -= fac * 2.0 * r * X[:, 0]
    return val, g


def harmonic_hessian(ah, ij) -> np.ndarray:
    ah = np.asarray(ah, dtype=np.float64)
    i, j = ij
    fac = 0.5 if i == j else 1.0
    Hm = np.zeros((3, 3))
    Hm[i, j] += fac
    Hm[j, i] += fac
    Hm[0, 0] -= fac * 2.0 * ah[i, j] / ah[0, 0]
    return Hm


def _on_source_box(g: np.ndarray, field: np.ndarray) -> np.ndarray:
    gbox, fbox = box_of(g), box_of(field)
    if fbox.radius <= gbox.radius:
        raise SourceSupportError(f"field radius {fbox.radius} does not contain source radius {gbox.radius}")
    return restrict(field, gbox)


def _check_edge_support(g):
    if np.any(g[0, -1]) or np.any(g[1, :, -1]) or np.any(g[2, :, :, -1]):
        raise SourceSupportError("source has flux on edges leaving its box")


def dipole_xi(g: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """xi_i = sum_x g(x) . grad phi_i(x)."""
    _check_edge_support(g)
    ph = _on_source_box(g, phi)
    return np.array([np.sum(g * grad(ph[i])) for i in range(3)])


def quadrupole_c(g: np.ndarray, phi: np.ndarray, psi_sym: np.ndarray, ah) -> np.ndarray:
    """Quadrupole coefficients over QUAD_INDICES.

    ``psi_sym`` is the symmetric (3, 3, n, n, n) second-order corrector.
    """
    _check_edge_support(g)
    ah = np.asarray(ah, dtype=np.float64)
    ph = _on_source_box(g, phi)
    ps = _on_source_box(g, psi_sym)
    box = box_of(g)
    X = box.coords().reshape(3, -1).T.astype(np.float64)
    c = np.zeros(len(QUAD_INDICES))
    for t, (i, j) in enumerate(QUAD_INDICES):
        _, dv = harmonic_polynomial(ah, (i, j), X)
        dv = dv.T.reshape((3,) + box.shape)
        W = np.einsum("kxyz,kxyz->xyz", ph, dv)
        W += (2.0 - (i == j)) * (ps[i, j] - ah[i, j] / ah[0, 0] * ps[0, 0])
        c[t] = -np.sum(g * grad(W))
    return c


@dataclass
class HomogenizedSolution:
    kernel: GreenKernel
    source: np.ndarray  # vertex field f = div g
    xi: np.ndarray | None = None
    c: np.ndarray | None = None

    def evaluate(self, X, order: int = 0) -> np.ndarray:
        """u_h (order 0), its gradient (1) or Hessian (2) at points X."""
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        out = utilde(self.kernel, self.source, X, order)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.xi is not None and np.any(self.xi):
            D = self.kernel.derivatives(X, order + 1)
            out = out + np.tensordot(D, self.xi, axes=([1], [0]))
        if self.c is not None and np.any(self.c):
            D = self.kernel.derivatives(X, order + 2)
            for cij, (i, j) in zip(self.c, QUAD_INDICES):
                out = out + cij * D[:, i, j]
        return out


def uh_eval(solution: HomogenizedSolution, X, order: int = 0):
    return solution.evaluate(X, order)
