import numpy as np
import pytest

from sshdi.datagen import (CovarianceKind, SimulationTruth, build_covariance, draw_truth,
                           generate_dataset)
from sshdi.numerics import RngStream, cholesky


def test_identity_covariance():
    np.testing.assert_array_equal(build_covariance(CovarianceKind.identity(), 4), np.eye(4))


def test_ar1_covariance():
    expected = [[1, 0.8, 0.64], [0.8, 1, 0.8], [0.64, 0.8, 1]]
    np.testing.assert_allclose(build_covariance(CovarianceKind.ar1(0.8), 3), expected, atol=1e-15)


def test_cs_covariance():
    sigma = build_covariance(CovarianceKind.compound_symmetry(0.5), 3)
    np.testing.assert_array_equal(np.diag(sigma), 1.0)
    assert np.all(sigma[~np.eye(3, dtype=bool)] == 0.5)
    # 0.5 I + 0.5 11'
    np.testing.assert_array_equal(sigma, 0.5 * np.eye(3) + 0.5 * np.ones((3, 3)))


@pytest.mark.parametrize("kind", [CovarianceKind.identity(), CovarianceKind.ar1(0.8),
                                  CovarianceKind.ar1(0.99), CovarianceKind.compound_symmetry(0.0),
                                  CovarianceKind.compound_symmetry(0.5),
                                  CovarianceKind.compound_symmetry(0.95)])
@pytest.mark.parametrize("p", [1, 2, 17, 200])
def test_covariance_symmetric_unit_diagonal_positive_definite(kind, p):
    sigma = build_covariance(kind, p)
    np.testing.assert_array_equal(sigma, sigma.T)
    np.testing.assert_array_equal(np.diag(sigma), 1.0)
    cholesky(sigma)


@pytest.mark.parametrize("tag,rho", [("ar1", 0.0), ("ar1", 1.0), ("cs", 1.0), ("cs", -0.1), ("cube", 0.3)])
def test_covariance_parameter_range(tag, rho):
    with pytest.raises(ValueError):
        CovarianceKind(tag, rho)


def test_draw_truth_table1_shape():
    truth = draw_truth(500, 5, 0.5, 2.0, RngStream(8))
    assert len(truth.active_set) == 5 == len(np.unique(truth.active_set))
    assert np.all((truth.active_set >= 0) & (truth.active_set < 500))
    assert np.all((truth.coefficients >= 0.5) & (truth.coefficients <= 2.0))


def test_draw_truth_degenerate():
    truth = draw_truth(5, 5, 1.0, 1.0, RngStream(0))
    np.testing.assert_array_equal(truth.active_set, np.arange(5))
    np.testing.assert_array_equal(truth.coefficients, np.ones(5))


def test_draw_truth_deterministic():
    a = draw_truth(50, 4, 0.5, 2.0, RngStream(1, 2))
    b = draw_truth(50, 4, 0.5, 2.0, RngStream(1, 2))
    np.testing.assert_array_equal(a.active_set, b.active_set)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)


def test_truth_validation():
    with pytest.raises(ValueError):
        SimulationTruth(active_set=[1, 1], coefficients=[1.0, 2.0])
    with pytest.raises(ValueError):
        SimulationTruth(active_set=[1], coefficients=[1.0, 2.0])


def test_noiseless_dataset():
    truth = draw_truth(30, 4, 0.5, 2.0, RngStream(1), noise_sd=0.0)
    data = generate_dataset(25, 30, CovarianceKind.ar1(0.5), truth, RngStream(2))
    np.testing.assert_array_equal(data.y, data.x @ truth.beta(30))


def test_table1_dataset_shape():
    truth = draw_truth(500, 5, 0.5, 2.0, RngStream(1))
    data = generate_dataset(200, 500, CovarianceKind.identity(), truth, RngStream(2))
    assert data.x.shape == (200, 500) and data.y.shape == (200,)
    assert data.truth is truth


def test_cs_empirical_covariance():
    truth = SimulationTruth(active_set=[], coefficients=[])
    data = generate_dataset(100_000, 3, CovarianceKind.compound_symmetry(0.5), truth, RngStream(3))
    cov = np.cov(data.x.T)
    off = cov[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off - 0.5) <= 0.02)


def test_dataset_bit_identical():
    truth = draw_truth(20, 2, 0.5, 2.0, RngStream(1))
    a = generate_dataset(30, 20, CovarianceKind.compound_symmetry(0.5), truth, RngStream(4, 1))
    b = generate_dataset(30, 20, CovarianceKind.compound_symmetry(0.5), truth, RngStream(4, 1))
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
