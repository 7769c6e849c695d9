"""Discrete calculus on integer boxes Q_R = {x in Z^3 : |x|_inf <= R}.

Vertex fields are arrays of shape (n, n, n) with n = 2R + 1, indexed
``u[x1 + R, x2 + R, x3 + R]``.  Edge-vector fields have shape (3, n, n, n);
component k at x lives on the forward edge (x, x + e_k) and is zero whenever
the head leaves the box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    radius: int

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"box radius must be a positive integer, got {self.radius}")

    @property
    def n(self) -> int:
        return 2 * self.radius + 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def num_vertices(self) -> int:
        return self.n ** 3

    @property
    def num_boundary(self) -> int:
        return self.n ** 3 - (self.n - 2) ** 3

    def index(self, x) -> tuple[int, int, int]:
        """Array index of the lattice point x."""
        x = tuple(int(c) for c in x)
        if max(abs(c) for c in x) > self.radius:
            raise IndexError(f"point {x} outside box of radius {self.radius}")
        return tuple(c + self.radius for c in x)

    def coords(self) -> np.ndarray:
        """Integer coordinate grids, shape (3, n, n, n)."""
        r = np.arange(-self.radius, self.radius + 1)
        return np.stack(np.meshgrid(r, r, r, indexing="ij"))


def box_of(field: np.ndarray) -> Box:
    n = field.shape[-1]
    if n % 2 == 0 or field.shape[-3:] != (n, n, n):
        raise ValueError(f"not a lattice box field: shape {field.shape}")
    return Box((n - 1) // 2)


def interior_mask(box: Box) -> np.ndarray:
    m = np.zeros(box.shape, dtype=bool)
    m[1:-1, 1:-1, 1:-1] = True
    return m


def boundary_mask(box: Box) -> np.ndarray:
    return ~interior_mask(box)


def boundary_vertices(box: Box) -> np.ndarray:
    """Points with |x|_inf = R, shape (N, 3), lexicographic with x1 fastest."""
    pts = box.coords().reshape(3, -1).T
    # reorder so that x1 varies fastest
    order = np.lexsort((pts[:, 0], pts[:, 1], pts[:, 2]))
    pts = pts[order]
    keep = np.abs(pts).max(axis=1) == box.radius
    return pts[keep]


def grad(u: np.ndarray) -> np.ndarray:
    """Forward difference gradient; works on stacks (..., n, n, n)."""
    out = np.zeros(u.shape[:-3] + (3,) + u.shape[-3:], dtype=np.result_type(u, np.float64))
    out[..., 0, :-1, :, :] = u[..., 1:, :, :] - u[..., :-1, :, :]
    out[..., 1, :, :-1, :] = u[..., :, 1:, :] - u[..., :, :-1, :]
    out[..., 2, :, :, :-1] = u[..., :, :, 1:] - u[..., :, :, :-1]
    return out


def div(F: np.ndarray) -> np.ndarray:
    """Backward difference divergence; out-of-box terms count as zero."""
    F0, F1, F2 = F[..., 0, :, :, :], F[..., 1, :, :, :], F[..., 2, :, :, :]
    out = F0 + F1 + F2
    out[..., 1:, :, :] -= F0[..., :-1, :, :]
    out[..., :, 1:, :] -= F1[..., :, :-1, :]
    out[..., :, :, 1:] -= F2[..., :, :, :-1]
    return out


def zero_outgoing(F: np.ndarray) -> np.ndarray:
    """Copy of an edge field with edges leaving the box set to zero."""
    F = np.array(F, dtype=np.float64, copy=True)
    F[..., 0, -1, :, :] = 0.0
    F[..., 1, :, -1, :] = 0.0
    F[..., 2, :, :, -1] = 0.0
    return F


def restrict(u: np.ndarray, target: Box) -> np.ndarray:
    """Vertex values (or stacks of them) on the smaller centred box ``target``."""
    src = box_of(u)
    if target.radius > src.radius:
        raise ValueError(f"cannot restrict radius {src.radius} to larger radius {target.radius}")
    d = src.radius - target.radius
    sl = slice(d, d + target.n)
    return np.array(u[..., sl, sl, sl], copy=True)


def restrict_edges(F: np.ndarray, target: Box) -> np.ndarray:
    """Restrict an edge field, cutting edges that leave the smaller box."""
    src = box_of(F)
    if target.radius > src.radius:
        raise ValueError(f"cannot restrict radius {src.radius} to larger radius {target.radius}")
    d = src.radius - target.radius
    sl = slice(d, d + target.n)
    return zero_outgoing(F[..., sl, sl, sl])


def extend(u: np.ndarray, target: Box) -> np.ndarray:
    """Zero-pad a field onto a larger centred box."""
    src = box_of(u)
    if target.radius < src.radius:
        raise ValueError(f"cannot extend radius {src.radius} to smaller radius {target.radius}")
    d = target.radius - src.radius
    out = np.zeros(u.shape[:-3] + target.shape, dtype=np.float64)
    sl = slice(d, d + src.n)
    out[..., sl, sl, sl] = u
    return out


def value_at(u: np.ndarray, x):
    """Entry (or stack of entries) of a field at lattice point x."""
    return u[(...,) + box_of(u).index(x)]
