"""Random edge conductances with restriction-consistent sampling.

Each edge draw is a keyed hash of (master_seed, x, direction), so a field
sampled on a large box and restricted is identical to one sampled directly
on the small box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Box

KINDS = ("bernoulli_contrast", "constant")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_OFFSET = 1 << 20  # coordinate bias so packed counters stay non-negative


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str = "bernoulli_contrast"
    contrast: float = 9.0
    p: float = 0.5
    master_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"probability must lie in [0, 1], got {self.p}")
        if self.contrast < 1.0:
            raise ValueError(f"contrast must be >= 1, got {self.contrast}")

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "constant":
            return (1.0, 1.0)
        return (1.0, float(self.contrast))


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def edge_uniforms(master_seed: int, box: Box) -> np.ndarray:
    """Uniform [0, 1) variates for every forward edge, shape (3, n, n, n)."""
    coords = box.coords().astype(np.int64) + _OFFSET
    counter = (coords[0] << 42) | (coords[1] << 21) | coords[2]
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
    out = np.empty((3,) + box.shape)
    with np.errstate(over="ignore"):
        base = _mix64(counter.astype(np.uint64) ^ key)
        for i in range(3):
            h = _mix64(base + _GOLDEN * np.uint64(i + 1))
            out[i] = (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return out


def sample(spec: EnsembleSpec, box: Box) -> np.ndarray:
    """Conductances a_i(x) on the edges (x, x + e_i); out-of-box edges hold 1."""
    a = np.ones((3,) + box.shape)
    if spec.kind == "bernoulli_contrast":
        u = edge_uniforms(spec.master_seed, box)
        a[u < spec.p] = spec.contrast
        reset_outgoing(a)
    return a


def reset_outgoing(a: np.ndarray) -> np.ndarray:
    a[0, -1, :, :] = 1.0
    a[1, :, -1, :] = 1.0
    a[2, :, :, -1] = 1.0
    return a


def in_box_edges(box: Box) -> np.ndarray:
    m = np.ones((3,) + box.shape, dtype=bool)
    m[0, -1, :, :] = False
    m[1, :, -1, :] = False
    m[2, :, :, -1] = False
    return m


def check_ellipticity(a: np.ndarray, lam: float, Lam: float) -> bool:
    vals = a[in_box_edges(Box((a.shape[-1] - 1) // 2))]
    return bool(np.all(vals >= lam) and np.all(vals <= Lam))


def restrict_coefficients(a: np.ndarray, box: Box) -> np.ndarray:
    R = (a.shape[-1] - 1) // 2
    if box.radius > R:
        raise ValueError(f"cannot restrict radius {R} to larger radius {box.radius}")
    d = R - box.radius
    sl = slice(d, d + box.n)
    return reset_outgoing(np.array(a[:, sl, sl, sl], copy=True))
