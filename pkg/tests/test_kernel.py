import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from migcl import (DesignConfig, GaussHermite, MonteCarlo, conditional_matrix, design_params,
                   expected_matrices, expected_matrix, horizon2_matrix, horizon_h_matrix,
                   horizon_matrices, stationary_distribution)
from migcl.kernel import (NonUniqueStationaryError, format_value, gauss_hermite_rule,
                          interval_probs, read_matrix_csv, write_matrix_csv)

from conftest import random_params


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_matrices_are_column_stochastic(seed, f):
    p = random_params(np.random.default_rng(seed))
    for m in (conditional_matrix(p, f), expected_matrix(p), horizon2_matrix(p, GaussHermite(20)),
              conditional_matrix(p, f, adjusted=False)):
        assert np.all(m >= 0)
        assert np.allclose(m.sum(axis=0), 1.0, atol=1e-12)


def test_interval_probs_against_direct_differences():
    th = np.array([-np.inf, -1.0, 0.0, 2.5, np.inf])
    mean = np.array([0.3, -2.0, 1.0])
    scale = np.array([1.0, 0.5, 2.0])
    got = interval_probs(th, mean, scale)
    want = np.diff(norm.cdf((th[:, None] - mean) / scale), axis=0)
    assert np.allclose(got, want, atol=1e-15)


def test_interval_probs_keeps_far_tail_accuracy():
    th = np.array([-np.inf, 0.0, 1.0, np.inf])
    got = interval_probs(th, np.array([-12.0]), np.array([1.0]))
    # both upper cells are ~1e-33 and would be lost to 1 - cdf cancellation
    assert got[2, 0] == pytest.approx(norm.sf(13.0), rel=1e-10)
    assert got[1, 0] == pytest.approx(norm.sf(12.0) - norm.sf(13.0), rel=1e-10)


def test_expected_matrix_against_quadrature(design3):
    # integrate the conditional matrix against the N(0,1) factor density
    p1 = expected_matrix(design3)
    for k, l in [(0, 0), (2, 1), (3, 2), (7, 6), (5, 4)]:
        val, _ = integrate.quad(lambda f: conditional_matrix(design3, f)[k, l] * norm.pdf(f),
                                -12, 12, epsabs=1e-13)
        assert p1[k, l] == pytest.approx(val, abs=1e-11)


def test_horizon2_against_double_integral(design3):
    # E[P(f2) P(f1)] with (f1, f2) bivariate normal, correlation rho
    rho = design3.rho
    p2 = horizon2_matrix(design3, GaussHermite(64))

    def integrand(f2, f1, k, l):
        dens = norm.pdf(f1) * norm.pdf((f2 - rho * f1) / np.sqrt(1 - rho**2)) / np.sqrt(1 - rho**2)
        return (conditional_matrix(design3, f2) @ conditional_matrix(design3, f1))[k, l] * dens

    for k, l in [(0, 0), (2, 2), (7, 5)]:
        val, _ = integrate.dblquad(integrand, -8, 8, -8, 8, args=(k, l), epsabs=1e-10)
        assert p2[k, l] == pytest.approx(val, abs=1e-8)


def test_horizon2_quadrature_converges(design3):
    ref = horizon2_matrix(design3, GaussHermite(120))
    assert np.abs(horizon2_matrix(design3, GaussHermite(64)) - ref).max() < 1e-10
    mc = horizon2_matrix(design3, MonteCarlo(200_000, seed=1))
    assert np.abs(mc - ref).max() < 3e-3


@pytest.mark.parametrize("design", [1, 2, 3])
def test_independent_factor_factorizes(design):
    p = design_params(DesignConfig(design=design, rho=0.0))
    p1 = expected_matrix(p)
    assert np.abs(horizon2_matrix(p, GaussHermite(64)) - p1 @ p1).max() < 1e-12


def test_horizon_one_is_closed_form(design3):
    mats = horizon_matrices(design3, [1, 2, 5], n_paths=200, seed=3)
    assert np.array_equal(mats[1], expected_matrix(design3))
    assert np.abs(mats[2] - horizon2_matrix(design3, GaussHermite(64))).max() < 0.03
    assert np.allclose(mats[5].sum(axis=0), 1.0)


def test_horizon_matrices_monte_carlo_consistency():
    # zero loadings: every horizon equals the matrix power exactly
    p = design_params(DesignConfig(design=3, rho=0.6))
    p = p.replace(beta=np.zeros(7))
    p1 = expected_matrix(p)
    m = horizon_h_matrix(p, 6, n_paths=10, seed=0)
    assert np.abs(m - np.linalg.matrix_power(p1, 6)).max() < 1e-12


def test_horizon_matrices_seeded(design3):
    a = horizon_h_matrix(design3, 4, n_paths=100, seed=9)
    b = horizon_h_matrix(design3, 4, n_paths=100, seed=9)
    assert np.array_equal(a, b)


def test_expected_matrices_bundle(design3):
    em = expected_matrices(design3)
    assert np.array_equal(em.p1, expected_matrix(design3))


def test_stationary_distribution(design3):
    p = expected_matrix(design3)
    sd = stationary_distribution(p)
    assert np.allclose(p @ sd.pi, sd.pi, atol=1e-14)
    assert sd.pi.sum() == pytest.approx(1.0, abs=1e-14)
    # power iteration as an independent reference
    x = np.full(8, 1 / 8)
    for _ in range(5000):
        x = p @ x
    assert np.allclose(sd.pi, x, atol=1e-12)
    cond = sd.conditional_nondefault()
    assert cond.size == 7 and cond.sum() == pytest.approx(1.0)


def test_stationary_distribution_not_unique():
    with pytest.raises(NonUniqueStationaryError):
        stationary_distribution(np.eye(3))


def test_gauss_hermite_rule_integrates_moments():
    x, w = gauss_hermite_rule(20)
    assert abs(w.sum() - 1.0) < 1e-15
    assert np.dot(w, x**2) == pytest.approx(1.0, abs=1e-13)
    assert np.dot(w, x**4) == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(ValueError):
        GaussHermite(4)


def test_matrix_csv_round_trip(tmp_path, design3):
    p = expected_matrix(design3)
    write_matrix_csv(tmp_path / "m.csv", p)
    assert np.array_equal(read_matrix_csv(tmp_path / "m.csv"), p)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "origin,to_1,to_2,to_3,to_4,to_5,to_6,to_7,to_8"
    assert lines[-1].startswith("8,0.5,0.3,0.2,0.0")


def test_format_value():
    assert format_value(0.123456) == "0.123456"
    assert format_value(0.123456, paper_format=True) == "12.35"
