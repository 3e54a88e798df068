import json

import numpy as np
import pytest
from sklearn.base import clone

from migcl import (CompositeLikelihoodMigration, DesignConfig, GaussHermite, OptimizerConfig,
                   build_counts, cl1, cl2, design_params, expected_matrix, fit, fit_cl1, fit_cl2,
                   fit_two_step, simulate_panel)
from migcl.estimator import (finite_diff_gradient, finite_diff_jacobian, moment_init, rho_curvature,
                             rho_init, split_reduced)
from migcl.hac import estimate_j
from migcl.params import cl1_reduce, natural_vector, normalize_cl2


@pytest.fixture(scope="module")
def big_counts():
    theta = design_params(DesignConfig(design=1, rho=0.0))
    return theta, build_counts(simulate_panel(theta, 2000, 120, seed=21))


def test_finite_differences_on_known_functions():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -1.2])
    g = finite_diff_gradient(lambda v: 0.5 * v @ a @ v + np.sin(v[0]), x)
    assert np.allclose(g, a @ x + [np.cos(0.3), 0], atol=1e-9)
    jac = finite_diff_jacobian(lambda v: np.array([v[0] * v[1], np.exp(v[1])]), x)
    assert np.allclose(jac, [[x[1], x[0]], [0, np.exp(x[1])]], atol=1e-9)


def test_moment_start_is_close(big_counts):
    theta, counts = big_counts
    r0 = moment_init(counts)
    truth = cl1_reduce(theta)
    # unit-scale probit inversion recovers thresholds up to the volatility growth
    assert np.abs(r0.c - truth.c).max() < 1.5
    assert np.all(np.diff(r0.c) > 0)
    assert abs(rho_init(counts)) < 0.3


def test_cl1_fit_on_factor_panel(big_counts):
    theta, counts = big_counts
    res = fit_cl1(counts)
    assert res.converged and res.grad_norm <= 1e-6
    truth = cl1_reduce(theta)
    # the common factor limits parameter precision at fixed T; the fit tracks
    # the pooled empirical frequencies instead
    freq = counts.n1 / counts.n1.sum(axis=0)
    assert np.abs(expected_matrix(res.theta_hat) - freq)[:, :7].max() < 0.01
    # the optimum is at least as good as the truth
    assert res.objective >= cl1(counts, truth) - 1e-6
    assert res.objective == pytest.approx(cl1(counts, res.theta_hat), rel=1e-12)


def test_cl1_fit_recovers_truth_without_factor():
    theta = design_params(DesignConfig(design=1))
    theta = theta.replace(beta=np.zeros(7), sigma=theta.gamma)
    counts = build_counts(simulate_panel(theta, 3000, 40, seed=2))
    res = fit_cl1(counts)
    assert res.converged
    # independent transitions: the inverse information gives the sampling scale
    se = np.sqrt(np.diag(np.linalg.inv(estimate_j(counts, res.theta_hat, "cl1"))) / counts.n1.sum())
    err = res.estimates - natural_vector(cl1_reduce(theta), "cl1")
    assert np.all(np.abs(err) < 4 * se)


def test_cl1_fit_is_deterministic(big_counts):
    _, counts = big_counts
    a, b = fit_cl1(counts), fit_cl1(counts)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["mode"] == "cl1" and len(d["estimates"]) == 19


def test_unvisited_state_reported_unidentified():
    theta = design_params(DesignConfig(design=1))
    panel = simulate_panel(theta, 200, 20, init=[0.5, 0.5, 0, 0, 0, 0, 0, 0], seed=0)
    r = panel.ratings.copy()
    r[r >= 6] = 5  # origin 6 and 7 never visited
    panel.ratings = r
    res = fit_cl1(build_counts(panel))
    assert {"delta6", "gamma6", "delta7", "gamma7"} <= set(res.unidentified)
    assert np.isfinite(res.objective)


def test_two_step_fit():
    theta = design_params(DesignConfig(design=3, rho=0.4))
    counts = build_counts(simulate_panel(theta, 500, 120, seed=5))
    res = fit_two_step(counts)
    assert res.extra["step2_dimension"] == 8
    p = res.theta_hat
    assert p.is_identified("cl2")
    assert abs(p.rho - 0.4) < 0.3
    # step 2 keeps the first-step lag-1 fit
    step1 = fit_cl1(counts)
    assert np.allclose(expected_matrix(p), expected_matrix(step1.theta_hat), atol=1e-10)
    assert "rho_curvature" in res.extra


def test_cl2_fit_improves_on_truth():
    theta = design_params(DesignConfig(design=3, rho=0.4))
    counts = build_counts(simulate_panel(theta, 300, 60, seed=9))
    res = fit_cl2(counts, OptimizerConfig(n_nodes=24), init=theta)
    gh = GaussHermite(24)
    assert res.objective >= cl2(counts, normalize_cl2(theta), gh) - 1e-6
    assert res.theta_hat.is_identified("cl2")
    assert res.grad_norm < 1e-4


def test_flat_rho_profile_without_loadings():
    theta = design_params(DesignConfig(design=3, rho=0.4))
    counts = build_counts(simulate_panel(theta, 200, 30, seed=1))
    flat = theta.replace(beta=np.zeros(7))
    assert abs(rho_curvature(counts, flat)) < 1e-8
    assert abs(rho_curvature(counts, theta)) > 1e-4


def test_split_reduced_is_normalized(big_counts):
    theta, _ = big_counts
    p = split_reduced(cl1_reduce(theta), 0.3)
    assert p.is_identified("cl2")
    assert np.allclose(expected_matrix(p), expected_matrix(theta), atol=1e-12)


def test_fit_dispatch_rejects_unknown_mode(big_counts):
    with pytest.raises(ValueError):
        fit(big_counts[1], "cl3")


def test_estimator_object():
    theta = design_params(DesignConfig(design=1))
    panel = simulate_panel(theta, 300, 40, seed=3)
    est = CompositeLikelihoodMigration(mode="cl1")
    assert clone(est).get_params()["mode"] == "cl1"
    with pytest.raises(AttributeError):
        est.predict(panel.ratings)
    est.fit(panel.ratings)
    proba = est.predict_proba(panel.ratings)
    assert proba.shape == (300, 8) and np.allclose(proba.sum(axis=1), 1)
    assert np.all((est.predict(panel.ratings) >= 1) & (est.predict(panel.ratings) <= 8))
    assert est.score(panel.ratings) < 0
    assert est.result_.covariance.se.shape == (19,)
    with pytest.raises(ValueError):
        est.transition_matrix(2)
    with pytest.raises(ValueError):
        CompositeLikelihoodMigration(mode="x").fit(panel.ratings)
