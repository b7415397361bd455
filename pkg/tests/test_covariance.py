import numpy as np
import pytest

from recalib import SRSWOR, Census, ClusterSRSWOR, ClusterWithReplacement, StratifiedSRSWOR, cov_exact, cov_hat
from recalib.covariance import apply_pair_coefficients, pair_coefficients, recommended_c
from recalib.errors import UnsupportedOperationError

from conftest import random_population

STRATA = [1, 1, 1, 2, 2, 2, 2, 3, 3]
CLUSTERS = [1, 1, 2, 2, 2, 3, 3, 4, 4]


def designs():
    return [
        SRSWOR(9, 4),
        StratifiedSRSWOR(STRATA, [2, 3, 2]),
        ClusterSRSWOR(CLUSTERS, 2),
        ClusterSRSWOR(CLUSTERS, 3, m=2),
    ]


@pytest.mark.parametrize("design", designs(), ids=lambda d: d.describe())
def test_closed_form_matches_enumeration(design, rng):
    pop = random_population(rng, 9, 2, strata=STRATA, clusters=CLUSTERS)
    a = cov_exact(design, pop)
    b = cov_exact(design, pop, method="enumerate")
    np.testing.assert_allclose(a.sigma_xx, b.sigma_xx, rtol=1e-10, atol=1e-9)
    np.testing.assert_allclose(a.sigma_xy, b.sigma_xy, rtol=1e-10, atol=1e-9)
    assert np.isclose(a.var_y, b.var_y, rtol=1e-10)


@pytest.mark.parametrize("design", designs(), ids=lambda d: d.describe())
@pytest.mark.parametrize("c", [0.0, 0.3, 1.0, 1.7])
def test_unbiased_for_every_c(design, c, rng):
    pop = random_population(rng, 9, 2, strata=STRATA, clusters=CLUSTERS)
    # the target is the covariance of the centred totals
    exact = cov_exact(design, pop.with_x(pop.x - pop.t_x / pop.N))
    sxx = np.zeros((2, 2))
    sxy = np.zeros(2)
    for s, prob in design.enumerate_samples():
        est = cov_hat(s, design, pop, c)
        sxx += prob * est.sigma_xx_hat
        sxy += prob * est.sigma_xy_hat
    scale = np.abs(exact.sigma_xx).max()
    np.testing.assert_allclose(sxx, exact.sigma_xx, atol=1e-10 * scale)
    np.testing.assert_allclose(sxy, exact.sigma_xy, atol=1e-10 * scale)


@pytest.mark.parametrize("design", designs(), ids=lambda d: d.describe())
def test_structured_and_dense_routes_agree(design, rng):
    pop = random_population(rng, 9, 2, strata=STRATA, clusters=CLUSTERS)
    s = design.draw(rng)
    a = cov_hat(s, design, pop, 0.7)
    b = cov_hat(s, design, pop, 0.7, dense=True)
    np.testing.assert_allclose(a.sigma_xx_hat, b.sigma_xx_hat, rtol=1e-12)
    np.testing.assert_allclose(a.sigma_xy_hat, b.sigma_xy_hat, rtol=1e-12)
    ps = design.pair_structure(s.indices)
    v = rng.normal(size=(s.indices.size, 3))
    np.testing.assert_allclose(apply_pair_coefficients(ps, v, 0.7), pair_coefficients(design, s.indices, 0.7) @ v)


def test_recommended_c_leaves_only_diagonal():
    d = SRSWOR(6, 3)
    c = recommended_c(d)
    assert c == 0.8
    a = pair_coefficients(d, [0, 2, 5], c)
    assert np.all(a[~np.eye(3, dtype=bool)] == 0.0)
    assert recommended_c(ClusterSRSWOR(CLUSTERS, 2)) == 1.0


def test_census_estimates_are_zero(pop3):
    d = Census(3)
    est = cov_hat(d.make_sample([0, 1, 2]), d, pop3, 0.5)
    assert np.all(est.sigma_xx_hat == 0) and np.all(est.sigma_xy_hat == 0)
    assert cov_exact(d, pop3).var_y == 0.0


def test_calibration_matrix_reduces_to_symmetric_when_total_is_zero(rng):
    pop = random_population(rng, 9, 2)
    pop = pop.with_x(pop.x - pop.t_x / pop.N)
    d = SRSWOR(9, 5)
    est = cov_hat(d.draw(rng), d, pop, 1.0)
    np.testing.assert_allclose(est.sigma_xx_cal, est.sigma_xx_hat, atol=1e-12)


def test_with_replacement_rejected(rng):
    pop = random_population(rng, 9, 1, clusters=CLUSTERS)
    d = ClusterWithReplacement(CLUSTERS, 2)
    with pytest.raises(UnsupportedOperationError):
        cov_hat(d.draw(rng), d, pop, 1.0)
    # exact moments still come from enumeration
    assert cov_exact(d, pop).var_y > 0


FIXED_EXPANSION = [SRSWOR(9, 4), StratifiedSRSWOR(STRATA, [2, 3, 2]), ClusterSRSWOR([1, 1, 2, 2, 3, 3, 4, 4], 2)]


@pytest.mark.parametrize("design", FIXED_EXPANSION, ids=lambda d: d.describe())
def test_centring_is_harmless_with_fixed_expansion_total(design, rng):
    N = design.N
    pop = random_population(rng, N, 2)
    raw = cov_exact(design, pop)
    centred = cov_exact(design, pop.with_x(pop.x - pop.t_x / N))
    np.testing.assert_allclose(centred.sigma_xx, raw.sigma_xx, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(centred.sigma_xy, raw.sigma_xy, rtol=1e-9, atol=1e-9)
