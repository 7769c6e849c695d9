import numpy as np
import pytest

from hom3.correctors import (PSI_PAIRS, SIGMA_PAIRS, CorrectorSet, ah_weights, average_flux,
                             build_correctors, compute_phi, corrector_radii, estimate_ah, massive_time,
                             psi_flux, psi_full, sigma_component, sigma_rhs)
from hom3.lattice import Box, div, interior_mask, restrict
from hom3.media import EnsembleSpec, sample

P = 4  # period of the periodic exactness check


def test_massive_time_and_radii():
    assert massive_time(16, 0.1) == pytest.approx(16 ** 1.8)
    assert massive_time(8, 0.0) == 64.0
    assert corrector_radii(16) == (32, 28, 24)
    with pytest.raises(ValueError):
        corrector_radii(10)


def test_weights():
    w = ah_weights(Box(8), 8)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(w >= 0) and w[8, 8, 8] == w.max()
    assert w[0, 8, 8] == 0.0  # |x| = L


def test_average_flux_constant():
    q = np.ones((3, 3) + Box(3).shape) * np.arange(1, 4)[None, :, None, None, None]
    assert np.array_equal(average_flux(q), q)


def test_homogeneous_degeneracy():
    box = Box(16)
    cs = build_correctors(np.ones((3,) + box.shape), 8)
    assert np.abs(cs.phi).max() <= 1e-8
    assert np.abs(cs.sigma).max() <= 1e-8
    assert np.abs(cs.psi).max() <= 1e-8
    assert np.abs(cs.ah - np.eye(3)).max() <= 1e-10


@pytest.fixture(scope="module")
def bernoulli8():
    a = sample(EnsembleSpec(master_seed=1), Box(16))
    return a, build_correctors(a, 8, seed=1)


def test_flux_identity(bernoulli8):
    a, cs = bernoulli8
    inner = interior_mask(Box(16))
    for i in range(3):
        r = div(cs.q[i]) - cs.phi[i] / cs.T
        assert np.abs(r[inner]).max() <= 10 * 1e-10 * a.max()


def test_stage_reports_and_shapes(bernoulli8):
    _, cs = bernoulli8
    assert cs.phi.shape == (3,) + Box(16).shape
    assert cs.sigma.shape == (3, 3) + Box(14).shape
    assert cs.psi.shape == (6,) + Box(12).shape
    assert len(cs.reports["phi"]) == 3 and len(cs.reports["sigma"]) == 9 and len(cs.reports["psi"]) == 6
    assert all(r.converged for rs in cs.reports.values() for r in rs)
    assert np.allclose(cs.ah, cs.ah.T)
    assert np.all(np.linalg.eigvalsh(cs.ah) > 1.0) and np.all(np.linalg.eigvalsh(cs.ah) < 9.0)


def test_component_lookups(bernoulli8):
    _, cs = bernoulli8
    for i in range(3):
        assert not np.any(sigma_component(cs.sigma, i, 1, 1))
        for j, k in SIGMA_PAIRS:
            assert np.array_equal(cs.sigma_ijk(i, k, j), -cs.sigma_ijk(i, j, k))
    full = psi_full(cs.psi)
    assert np.array_equal(full, full.transpose(1, 0, 2, 3, 4))
    for p, (i, j) in enumerate(PSI_PAIRS):
        assert np.array_equal(cs.psi_ij(j, i), cs.psi[p])


def test_save_load_roundtrip(bernoulli8, tmp_path):
    _, cs = bernoulli8
    cs.save(tmp_path)
    back = CorrectorSet.load(tmp_path)
    for name in ("phi", "q", "sigma", "psi", "ah"):
        assert np.array_equal(getattr(back, name), getattr(cs, name))
    assert (back.L, back.T, back.eps, back.seed, back.scheme) == (cs.L, cs.T, cs.eps, cs.seed, cs.scheme)


def test_estimate_ah_needs_room():
    with pytest.raises(ValueError):
        estimate_ah(np.zeros((3, 3) + Box(4).shape), 8)


# --- periodic exactness ---------------------------------------------------
# With exact periodic correctors, v + phi_k d_k v + psi_ij d_ij v is
# discretely a-harmonic for every a_h-harmonic quadratic v, provided the
# sigma and psi right-hand sides use the package's staggered stencils.

def _pgrad(u):
    return np.stack([np.roll(u, -1, axis=k) - u for k in range(3)])


def _pdiv(F):
    return sum(F[k] - np.roll(F[k], 1, axis=k) for k in range(3))


def _matrix(op):
    N = P ** 3
    M = np.zeros((N, N))
    for t in range(N):
        e = np.zeros(N)
        e[t] = 1
        M[:, t] = op(e.reshape(P, P, P)).ravel()
    return M


def _psolve(M, b):
    x = np.linalg.lstsq(M, b.ravel(), rcond=None)[0].reshape(P, P, P)
    return x - x.mean()


def _tile(f, R):
    r = np.arange(-R, R + 1) % P
    return f[..., r[:, None, None], r[None, :, None], r[None, None, :]]


def _period(F, box):
    """Window x in {0..P-1}^3 of a field on ``box``."""
    s = slice(box.radius, box.radius + P)
    return F[..., s, s, s]


def _two_scale_residual(scheme):
    rng = np.random.default_rng(3)
    a = np.where(rng.random((3, P, P, P)) < 0.5, 9.0, 1.0)
    Lop = _matrix(lambda u: -_pdiv(a * _pgrad(u)))
    Lap = _matrix(lambda u: -_pdiv(_pgrad(u)))
    eye = np.eye(3)
    phi = np.stack([_psolve(Lop, _pdiv(np.stack([a[k] * eye[i, k] for k in range(3)]))) for i in range(3)])
    q = np.stack([a * (eye[i][:, None, None, None] + _pgrad(phi[i])) for i in range(3)])
    ah = np.array([[q[i, k].mean() for i in range(3)] for k in range(3)])

    R = 6
    tgt = Box(R - 2)
    srhs = _period(sigma_rhs(_tile(q, R), tgt, scheme), tgt)
    sig = np.zeros((3, 3, 3, P, P, P))
    for i in range(3):
        for p, (j, k) in enumerate(SIGMA_PAIRS):
            s = _psolve(Lap, srhs[3 * i + p])
            sig[i, j, k], sig[i, k, j] = s, -s
    stored = sig[:, [0, 0, 1], [1, 2, 2]]
    psi = np.zeros((3, 3, P, P, P))
    at, pt, st = _tile(a, R), _tile(phi, R), _tile(stored, R)
    for i in range(3):
        for j in range(3):
            H = 0.5 * (psi_flux(at, pt, st, i, j, tgt, scheme) + psi_flux(at, pt, st, j, i, tgt, scheme))
            psi[i, j] = _psolve(Lop, _period(div(H), tgt))

    W = 5
    r = np.arange(-W, W + 1)
    X = np.stack(np.meshgrid(r, r, r, indexing="ij"))
    per = lambda f: f[..., X[0] % P, X[1] % P, X[2] % P]  # noqa: E731
    S = rng.normal(size=(3, 3))
    S = S + S.T
    M = S - np.trace(ah @ S) / np.trace(ah) * eye  # a_h : M = 0
    vh = 0.5 * np.einsum("ixyz,ij,jxyz->xyz", X, M, X)
    dvh = np.einsum("ij,jxyz->ixyz", M, X)
    v = vh + (per(phi) * dvh).sum(0) + np.einsum("ijxyz,ij->xyz", per(psi), M)
    res = -_pdiv(per(a) * _pgrad(v))[2:-2, 2:-2, 2:-2]
    return np.abs(res).max(), np.abs(v).max()


def test_staggered_scheme_is_exact_on_periodic_media():
    res, scale = _two_scale_residual("staggered")
    assert res < 1e-10 * scale


def test_averaged_scheme_leaves_order_one_residual():
    res, _ = _two_scale_residual("averaged")
    assert res > 1e-2


def test_scaled_media():
    box = Box(8)
    ones = np.ones((3,) + box.shape)
    assert np.allclose(estimate_ah(compute_phi(9.0 * ones, 16.0)[1], 4), 9.0 * np.eye(3), rtol=0, atol=1e-12)
    # a -> c a with T -> T / c leaves phi unchanged and scales the flux by c
    a = sample(EnsembleSpec(master_seed=3), box)
    T = massive_time(4, 0.1)
    ah1 = estimate_ah(compute_phi(a, T, tol=1e-12)[1], 4)
    ah3 = estimate_ah(compute_phi(3.0 * a, T / 3.0, tol=1e-12)[1], 4)
    assert np.allclose(ah3, 3.0 * ah1, rtol=1e-9, atol=0)


def test_sigma_skew_negation_is_bitwise():
    from hom3.solver import solve_stack
    rng = np.random.default_rng(0)
    box = Box(5)
    rhs = np.where(interior_mask(box), rng.normal(size=box.shape), 0.0)
    ones = np.ones((3,) + box.shape)
    s1, _ = solve_stack(ones, 0.1, rhs[None])
    s2, _ = solve_stack(ones, 0.1, -rhs[None])
    assert np.array_equal(s2, -s1)


def test_sigma_constructed_flux_dense_oracle():
    # q_ik = x_j (i=0, j=0, k=1): the staggered right-hand side of sigma_0,01 is d_0 x_0 = 1
    import scipy.linalg
    src = Box(4)
    X = src.coords().astype(float)
    q = np.zeros((3, 3) + src.shape)
    q[0, 1] = X[0]
    tgt = Box(3)
    rhs = sigma_rhs(q, tgt, "staggered")
    inner = interior_mask(tgt)
    assert np.all(rhs[0][inner] == 1.0)
    T = 5.0
    from hom3.solver import solve_stack
    ones = np.ones((3,) + tgt.shape)
    s, _ = solve_stack(ones, 1 / T, rhs[:1], tol=1e-12)
    idx = np.flatnonzero(inner)
    n = tgt.n
    M = np.zeros((len(idx), len(idx)))
    pos = {p: t for t, p in enumerate(idx)}
    for t, p in enumerate(idx):
        i, j, k = np.unravel_index(p, tgt.shape)
        M[t, t] = 1 / T + 6
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            nb = np.ravel_multi_index((i + d[0], j + d[1], k + d[2]), (n, n, n))
            if nb in pos:
                M[t, pos[nb]] = -1
    ref = scipy.linalg.solve(M, rhs[0].ravel()[idx])
    assert np.allclose(s[0].ravel()[idx], ref, rtol=0, atol=1e-10)
