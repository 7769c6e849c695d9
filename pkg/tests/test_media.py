import numpy as np
import pytest

from hom3.lattice import Box
from hom3.media import EnsembleSpec, check_ellipticity, in_box_edges, restrict_coefficients, sample


def test_constant_ensemble():
    a = sample(EnsembleSpec(kind="constant"), Box(3))
    assert np.all(a == 1.0)
    assert check_ellipticity(a, 1.0, 1.0)


def test_bernoulli_mean_within_clt_bound():
    box = Box(32)
    a = sample(EnsembleSpec(master_seed=11), box)
    vals = a[in_box_edges(box)]
    assert set(np.unique(vals)) == {1.0, 9.0}
    bound = 5 * 0.5 * (9 - 1) / np.sqrt(vals.size)
    assert abs(vals.mean() - 5.0) < bound


@pytest.mark.parametrize("seed", [0, 1, 2 ** 40 + 7])
def test_restriction_consistency(seed):
    spec = EnsembleSpec(master_seed=seed)
    big = sample(spec, Box(16))
    for R in (4, 8):
        assert np.array_equal(sample(spec, Box(R)), restrict_coefficients(big, Box(R)))
    assert np.array_equal(restrict_coefficients(restrict_coefficients(big, Box(8)), Box(4)),
                          sample(spec, Box(4)))


def test_determinism_and_seed_sensitivity():
    a = sample(EnsembleSpec(master_seed=5), Box(6))
    b = sample(EnsembleSpec(master_seed=5), Box(6))
    c = sample(EnsembleSpec(master_seed=6), Box(6))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_directions_are_independent_draws():
    box = Box(10)
    a = sample(EnsembleSpec(master_seed=3), box)
    m = in_box_edges(box)
    assert not np.array_equal(a[0][m[0]], a[1][m[1]])
    # correlation between x1- and x2-edge at the same vertex is small
    inner = (slice(0, -1),) * 3
    r = np.corrcoef(a[0][inner].ravel(), a[1][inner].ravel())[0, 1]
    assert abs(r) < 0.05


def test_ellipticity_scan():
    a = sample(EnsembleSpec(master_seed=9), Box(4))
    assert check_ellipticity(a, 1.0, 9.0)
    has_nine = np.any(a[in_box_edges(Box(4))] == 9.0)
    assert check_ellipticity(a, 1.0, 5.0) == (not has_nine)
    assert has_nine


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(p=1.5)
    with pytest.raises(ValueError):
        EnsembleSpec(contrast=0.5)
    with pytest.raises(ValueError):
        EnsembleSpec(kind="lognormal")
