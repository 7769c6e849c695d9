import dataclasses

import numpy as np
import pytest

from hom3 import fieldio
from hom3.correctors import build_correctors, psi_full
from hom3.experiments import make_source
from hom3.lattice import Box, boundary_mask, grad
from hom3.media import EnsembleSpec, sample
from hom3.pipeline import (ALL_KINDS, AlgorithmKind, PipelineResult, boundary_data, gradient_at,
                           observe_gradient, run, run_all)

L = 8


@pytest.fixture(scope="module")
def realization():
    a = sample(EnsembleSpec(master_seed=1), Box(2 * L))
    g = make_source(1).g
    return a, g


@pytest.fixture(scope="module")
def results(realization):
    a, g = realization
    return run_all(a, g, L, seed=1)


def test_monolithic_oracle(realization, results):
    pytest.importorskip("jax")
    import oracle

    a, g = realization
    ref = oracle.pipeline(a, g, L)
    r = results[AlgorithmKind.full]
    assert np.allclose(r.ah, ref["ah"], rtol=0, atol=1e-9)
    cs = build_correctors(a, L)
    assert np.abs(cs.phi - ref["phi"]).max() < 1e-8
    assert abs(cs.phi[(0,) + (2 * L,) * 3] - ref["phi"][(0,) + (2 * L,) * 3]) < 1e-9
    assert np.abs(psi_full(cs.psi) - ref["psi"]).max() < 1e-8
    assert np.allclose(r.xi, ref["xi"], rtol=1e-7, atol=1e-9)
    assert np.allclose(r.c, ref["c"], rtol=1e-7, atol=1e-9)
    for k in ALL_KINDS:
        u_ref = ref["u"][k.value]
        assert np.allclose(results[k].boundary_data, ref["bc"][k.value], rtol=0, atol=1e-9)
        assert np.max(np.abs(results[k].u - u_ref)) < 1e-8 * max(1.0, np.abs(u_ref).max())
    centre = (L,) * 3
    assert abs(r.u[centre] - ref["u"]["full"][centre]) < 1e-9


def test_boundary_is_exact(results):
    mask = boundary_mask(Box(L))
    for r in results.values():
        assert np.array_equal(r.u[mask], r.boundary_data[mask])
        assert not np.any(r.boundary_data[~mask])


def test_kinds_differ_on_random_medium(results):
    bcs = {k: r.boundary_data for k, r in results.items()}
    assert not np.any(bcs[AlgorithmKind.dirichlet_zero])
    for k1 in ALL_KINDS:
        for k2 in ALL_KINDS:
            if k1 is not k2:
                assert not np.allclose(bcs[k1], bcs[k2])


def test_moment_audit(results):
    assert results[AlgorithmKind.dirichlet_zero].xi is None
    assert results[AlgorithmKind.no_multipole].xi is None and results[AlgorithmKind.no_multipole].c is None
    assert results[AlgorithmKind.dipole_only].c is None and results[AlgorithmKind.dipole_only].xi is not None
    assert np.array_equal(results[AlgorithmKind.full].xi, results[AlgorithmKind.dipole_only].xi)


def test_stage_radii_and_reports(results):
    r = results[AlgorithmKind.full]
    assert r.stage_radii == {"phi": 2 * L, "sigma": 7 * L // 4, "psi": 3 * L // 2, "final": L}
    assert set(r.reports) == {"phi", "sigma", "psi", "final"}
    assert all(x.converged for xs in r.reports.values() for x in xs)


def test_homogeneous_degeneracy():
    a = np.ones((3,) + Box(2 * L).shape)
    g = make_source(5).g
    res = run_all(a, g, L)
    base = res[AlgorithmKind.no_multipole].u
    assert np.abs(res[AlgorithmKind.full].xi).max() <= 1e-10
    assert np.abs(res[AlgorithmKind.full].c).max() <= 1e-10
    for k in (AlgorithmKind.full, AlgorithmKind.dipole_only):
        assert np.abs(res[k].u - base).max() <= 1e-8


def test_zero_source_dirichlet():
    a = sample(EnsembleSpec(master_seed=2), Box(2 * L))
    g = np.zeros((3,) + Box(3).shape)
    r = run(a, g, L, kind="dirichlet_zero")
    assert not np.any(r.u)
    r = run(a, g, L, kind="full")
    # no source: zero moments, zero boundary data, zero solution
    assert not np.any(r.xi) and not np.any(r.c) and not np.any(r.u)


def test_zero_corrector_chain(realization, results):
    a, g = realization
    cs = build_correctors(a, L)
    zero = dataclasses.replace(cs, phi=np.zeros_like(cs.phi), psi=np.zeros_like(cs.psi))
    full, xi, c = boundary_data("full", L, zero, g)
    assert not np.any(xi) and not np.any(c)
    nomp, _, _ = boundary_data("no_multipole", L, zero, g)
    dip, _, _ = boundary_data("dipole_only", L, zero, g)
    assert np.array_equal(full, nomp)
    assert np.allclose(dip, nomp, rtol=0, atol=1e-15)


def test_dipole_only_never_reads_psi(realization):
    a, g = realization
    cs = build_correctors(a, L)
    poisoned = dataclasses.replace(cs, psi=np.full_like(cs.psi, np.nan))
    data, xi, c = boundary_data("dipole_only", L, poisoned, g)
    assert np.all(np.isfinite(data)) and c is None
    ref, _, _ = boundary_data("dipole_only", L, cs, g)
    assert np.array_equal(data, ref)


def test_input_errors(realization):
    a, g = realization
    with pytest.raises(ValueError):
        run(a, g, 6)
    with pytest.raises(ValueError):
        run(a, np.zeros((3,) + Box(8).shape), 8)
    with pytest.raises(ValueError):
        AlgorithmKind("quadrupole_only")


def test_observe_gradient():
    box = Box(4)
    X = box.coords().astype(float)
    dummy = lambda u: PipelineResult(AlgorithmKind.full, 4, u, u, None, None, np.eye(3), 1.0, 0.1)  # noqa: E731
    assert np.array_equal(observe_gradient(dummy(X[0]), (2, 2, 2)), [1.0, 0.0, 0.0])
    assert not np.any(observe_gradient(dummy(np.full(box.shape, 3.0)), (1, -2, 0)))
    u = np.random.default_rng(0).normal(size=box.shape)
    for x in [(0, 0, 0), (2, 2, 2), (-4, 1, 3)]:
        assert np.array_equal(observe_gradient(dummy(u), x), grad(u)[(slice(None),) + box.index(x)])
        assert np.array_equal(gradient_at(u, x), observe_gradient(dummy(u), x))
    with pytest.raises(IndexError):
        observe_gradient(dummy(u), (4, 0, 0))


def test_result_persistence(results, tmp_path):
    r = results[AlgorithmKind.dipole_only]
    r.save(tmp_path, {"seed": 1})
    assert np.array_equal(fieldio.read_field(tmp_path / "u.bin"), r.u)
    man = fieldio.read_manifest(tmp_path / "manifest.txt")
    assert man["c"] == "absent" and man["xi"] != "absent"
    for key in ("L", "eps", "T", "seed", "kind", "ah", "iterations_phi", "iterations_final"):
        assert key in man
