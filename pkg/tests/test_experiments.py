import math

import numpy as np
import pytest

from hom3.experiments import (ConvergenceRow, check_source, convergence_study, fit_slope, growth_study,
                              make_source, mean_slopes, read_convergence_csv, slopes, source_from_charges,
                              write_convergence_csv, write_growth_csv, write_slopes_csv)
from hom3.lattice import Box, div
from hom3.media import EnsembleSpec


def test_zero_charges_give_zero_flux():
    src = source_from_charges(np.zeros((3, 3, 3)))
    assert not np.any(src.g) and not np.any(src.f)


def test_hand_checkable_telescope():
    ch = np.zeros((3, 3, 3))
    ch[1, 1, 1] = 1.0
    ch[2, 1, 1] = -1.0
    src = source_from_charges(ch)
    expected = np.zeros((3,) + Box(3).shape)
    expected[0, 3, 3, 3] = 1.0  # edge from the origin to e1
    assert np.array_equal(src.g, expected)
    assert np.array_equal(div(src.g), src.f)


def test_charges_must_be_mean_zero_for_compact_support():
    ch = np.zeros((3, 3, 3))
    ch[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        source_from_charges(ch)


@pytest.mark.parametrize("seed", range(100))
def test_make_source_exact(seed):
    src = make_source(seed)
    assert check_source(src)
    assert src.f.sum() == 0.0
    assert not np.any(src.f[np.abs(Box(3).coords()).max(axis=0) > 1])
    outside = np.abs(Box(3).coords()).max(axis=0) > 2
    assert not np.any(src.g[:, outside])
    # edges must also stay inside Q_2: no flux on edges leaving Q_2
    assert not np.any(src.g[0, 5]) and not np.any(src.g[1, :, 5]) and not np.any(src.g[2, :, :, 5])


def test_make_source_deterministic():
    assert np.array_equal(make_source(7).f, make_source(7).f)
    assert not np.array_equal(make_source(7).f, make_source(8).f)


def test_fit_slope_exact_power_laws():
    Ls = [8, 12, 16]
    assert abs(fit_slope(Ls, [L ** -3.0 for L in Ls]) + 3.0) < 1e-12
    assert abs(fit_slope(Ls, [2.5 * L ** -4.5 for L in Ls]) + 4.5) < 1e-10
    Ls4 = [4, 8, 16, 32]
    vals = [1.0, 8 ** -4.0, 16 ** -4.0, 32 ** -4.0]  # the L=4 point is dropped
    assert abs(fit_slope(Ls4, vals) + 4.0) < 1e-10


def test_fit_slope_noise():
    rng = np.random.default_rng(0)
    Ls = np.array([8, 12, 16, 24, 32, 48])
    for _ in range(50):
        vals = Ls ** -4.0 * rng.uniform(0.9, 1.1, size=len(Ls))
        assert abs(fit_slope(Ls, vals) + 4.0) < 0.3


def test_fit_slope_errors():
    with pytest.raises(ValueError):
        fit_slope([8, 12], [1.0, 0.5])
    with pytest.raises(ValueError):
        fit_slope([8, 8, 12], [1.0, 1.0, 0.5])
    with pytest.raises(ValueError):
        fit_slope([8, 12, 16], [1.0, 0.0, 0.5])


def test_slopes_and_means():
    rows = [ConvergenceRow(s, L, "full", float(L) ** -(4 + s)) for s in (1, 2) for L in (8, 12, 16)]
    rows += [ConvergenceRow(3, L, "full", math.nan, False) for L in (8, 12, 16)]
    sl = {(a, s): v for a, s, v in slopes(rows)}
    assert sl[("full", 1)] == pytest.approx(-5.0) and sl[("full", 2)] == pytest.approx(-6.0)
    assert math.isnan(sl[("full", 3)])
    assert mean_slopes([r for r in slopes(rows) if r[1] != 3])["full"] == pytest.approx(-5.5)


def test_csv_roundtrip(tmp_path):
    rows = [ConvergenceRow(1, 8, "full", 1 / 3), ConvergenceRow(1, 12, "full", 2e-7)]
    write_convergence_csv(tmp_path / "c.csv", rows)
    text = (tmp_path / "c.csv").read_text()
    assert text.splitlines()[0] == "seed,L,algorithm,grad_diff"
    assert "0.33333333333333331" in text
    assert read_convergence_csv(tmp_path / "c.csv") == rows
    write_slopes_csv(tmp_path / "s.csv", [("full", 1, -4.25)])
    assert (tmp_path / "s.csv").read_text() == "algorithm,seed,slope\nfull,1,-4.25\n"
    write_growth_csv(tmp_path / "g.csv", [])
    assert (tmp_path / "g.csv").read_text() == "r,phi_l2,psi_fluct\n"


def test_constant_medium_study_is_monotone_and_deterministic():
    spec = EnsembleSpec(kind="constant")
    Ls = [8, 12, 16]
    rows = convergence_study(Ls, [1], ["dirichlet_zero", "full"], ensemble=spec)
    assert len(rows) == 6 and all(r.valid for r in rows)
    for alg in ("dirichlet_zero", "full"):
        vals = [r.grad_diff for r in rows if r.algorithm == alg]
        assert all(v > 0 for v in vals)
        assert vals[0] > vals[1] > vals[2]
    again = convergence_study(Ls, [1, 1], ["dirichlet_zero"], ensemble=spec)
    assert again[:3] == again[3:]
    assert again[:3] == [r for r in rows if r.algorithm == "dirichlet_zero"]


def test_convergence_study_validates_Ls():
    with pytest.raises(ValueError):
        convergence_study([6, 8, 12], [1])


def test_growth_study_homogeneous_is_zero():
    rows = growth_study(8, 1, [4, 6, 8, 12], ensemble=EnsembleSpec(kind="constant"))
    assert [r.r for r in rows] == [4, 6, 8, 12]
    assert all(r.phi_l2 <= 1e-8 and r.psi_fluct <= 1e-8 for r in rows)
    with pytest.raises(ValueError):
        growth_study(8, 1, [13])


def test_growth_study_bernoulli_small():
    rows = growth_study(8, 2, [2, 4, 8])
    assert all(r.phi_l2 > 0 and r.psi_fluct > 0 for r in rows)
    assert all(np.isfinite([r.phi_l2, r.psi_fluct]).all() for r in rows)
