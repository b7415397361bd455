import math

import numpy as np
import pytest

from recalib import Population, generate_example1, generate_example2, generate_example3, load_population
from recalib.errors import EmptyPopulationError, PopulationParseError, SchemaError
from recalib.population import SuperpopSpec, exchangeable_cov, exchangeable_sqrt, write_population


def test_fixture_totals_recomputed_independently(pop6):
    # hand sums of the CSV columns
    assert pop6.t_y == 3 + 5 + 4 + 9 + 7 + 12
    assert pop6.t_x[0] == 1 + 2 + 2.5 + 4 + 3.5 + 6
    assert pop6.N == 6 and pop6.p == 1


def test_totals_use_exact_summation():
    y = np.array([1e16, 1.0, -1e16, 1.0])
    pop = Population(y, y[:, None])
    assert pop.t_y == 2.0
    assert pop.t_x[0] == 2.0


def test_arrays_are_read_only(pop6):
    with pytest.raises(ValueError):
        pop6.y[0] = 99.0


def test_units_and_with_y(pop3):
    units = pop3.units
    assert [u.y for u in units] == [1.5, 2.5, 6.0]
    assert pop3.with_y([0, 0, 1]).t_y == 1.0


def test_missing_column_is_schema_error(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("x1,x2\n1,2\n")
    with pytest.raises(SchemaError, match="y"):
        load_population(f)


def test_bad_cell_reports_row_and_column(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("y,x1\n1,2\n3,abc\n")
    with pytest.raises(PopulationParseError) as info:
        load_population(f)
    assert info.value.row == 2
    assert info.value.column == "x1"


def test_empty_file(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("y,x1\n")
    with pytest.raises(EmptyPopulationError):
        load_population(f)


def test_x_columns_sorted_numerically(tmp_path):
    f = tmp_path / "p.csv"
    cols = ["y"] + [f"x{k}" for k in (10, 2, 1)]
    f.write_text(",".join(cols) + "\n0,10,2,1\n")
    pop = load_population(f)
    np.testing.assert_array_equal(pop.x[0], [1, 2, 10])


def test_write_roundtrip(tmp_path):
    pop = generate_example2(M=6, K=3, sig_s=1, sig_eps=1, sig_nu=1, seed=3)
    write_population(pop, tmp_path / "out.csv")
    back = load_population(tmp_path / "out.csv")
    np.testing.assert_array_equal(back.y, pop.y)
    np.testing.assert_array_equal(back.x, pop.x)
    np.testing.assert_array_equal(back.clusters, pop.clusters)


def test_example1_exact_moments():
    pop = generate_example1(200, sigma=1.0, seed=1, exact_moments=True)
    assert pop.N == 400
    assert abs(pop.t_x[0]) < 1e-9
    for h, sign in ((1, -1.0), (2, 1.0)):
        m = pop.strata == h
        assert np.all(pop.y[m] == sign)
        z = pop.x[m, 0] - pop.y[m]
        assert abs(z.mean()) < 1e-12
        assert abs(z.var() - 1.0) < 1e-12


def test_example2_layout():
    pop = generate_example2(M=50, K=4, sig_s=1, sig_eps=1, sig_nu=1, seed=0)
    assert pop.N == 200
    np.testing.assert_array_equal(np.bincount(pop.clusters)[1:], np.full(50, 4))


def test_example3_exact_moments_covariance():
    K, rho, sigma = 4, 0.2, 1.5
    pop = generate_example3(M=400, K=K, beta=1.0, sigma=sigma, rho=rho, seed=2, exact_moments=True)
    xs = pop.x[:, 0].reshape(400, K)
    np.testing.assert_allclose(xs.mean(axis=0), 0.0, atol=1e-12)
    cov = xs.T @ xs / 400
    np.testing.assert_allclose(cov, exchangeable_cov(K, sigma, rho), atol=1e-10)


@pytest.mark.parametrize("rho", [-1 / 3, 0.0, 0.4, 1.0])
def test_exchangeable_sqrt(rho):
    s = exchangeable_sqrt(4, 2.0, rho)
    np.testing.assert_allclose(s @ s.T, exchangeable_cov(4, 2.0, rho), atol=1e-12)


def test_example3_rejects_invalid_rho():
    with pytest.raises(ValueError):
        generate_example3(M=10, K=4, beta=1, sigma=1, rho=-0.5, seed=0)


def test_superpop_spec_dispatch():
    pop = SuperpopSpec("stratified2", {"n_per_stratum_pop": 5, "sigma": 1.0}, seed=0).generate()
    assert pop.N == 10
    assert math.isclose(SuperpopSpec("stratified2", {"n_per_stratum_pop": 5, "sigma": 1.0}, seed=0).generate().t_y, pop.t_y)
