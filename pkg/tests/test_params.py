import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from migcl import DesignConfig, GaussHermite, ModelParams, design_params, expected_matrix, horizon2_matrix
from migcl.params import (ReducedParamsCL1, beta1_from_constraint, cl1_reduce, from_natural,
                          from_unconstrained, n_free, natural_vector, normalize_cl2, param_names,
                          to_unconstrained)

from conftest import random_params

K = 8
coords = st.floats(-3.0, 3.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(coords, min_size=n_free("cl2", K), max_size=n_free("cl2", K)))
def test_cl2_map_lands_in_parameter_set(v):
    p = from_unconstrained(np.array(v), "cl2", K)
    assert np.all(np.diff(p.c) > 0) and p.c[0] == 0.0
    assert np.all(p.sigma > 0) and abs(p.rho) < 1 and p.beta[0] > 0
    assert abs(p.sigma[0] ** 2 + p.beta[0] ** 2 * (1 - p.rho**2) - 1.0) < 1e-12
    assert np.allclose(to_unconstrained(p, "cl2"), v, atol=1e-12, rtol=0)


@settings(max_examples=200, deadline=None)
@given(st.lists(coords, min_size=n_free("cl1", K), max_size=n_free("cl1", K)))
def test_cl1_map_round_trip(v):
    r = from_unconstrained(np.array(v), "cl1", K)
    assert r.gamma[0] == 1.0 and np.all(r.gamma > 0)
    assert np.allclose(to_unconstrained(r, "cl1"), v, atol=1e-12, rtol=0)


def test_free_parameter_counts():
    assert n_free("cl1", 8) == 19 == len(param_names("cl1", 8))
    assert n_free("cl2", 8) == 27 == len(param_names("cl2", 8))
    assert param_names("cl2", 8)[-1] == "rho"


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, np.pi / 2 - 0.01), st.integers(0, 6))
def test_cl1_reduction_ignores_volatility_split(angle, origin):
    # any split of gamma_l^2 between beta_l^2 and sigma_l^2 gives the same lag-1 model
    p = design_params(DesignConfig(design=3, rho=0.4))
    g = p.gamma.copy()
    beta, sigma = p.beta.copy(), p.sigma.copy()
    beta[origin] = g[origin] * np.sin(angle)
    sigma[origin] = g[origin] * np.cos(angle)
    q = p.replace(beta=beta, sigma=sigma)
    assert np.allclose(cl1_reduce(q).gamma, cl1_reduce(p).gamma, atol=1e-14)
    assert np.allclose(expected_matrix(q), expected_matrix(p), atol=1e-14)


def test_beta1_from_constraint_example():
    s1 = 1 / np.sqrt(1.84)
    b1 = beta1_from_constraint(s1, 0.4)
    assert b1 == pytest.approx(0.7372, abs=1e-4)
    assert s1**2 + b1**2 * (1 - 0.4**2) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        beta1_from_constraint(1.0, 0.2)


@pytest.mark.parametrize("seed", range(5))
def test_normalization_preserves_probabilities(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, k=6)
    # arbitrary shift, scale and factor sign
    shift, scale = rng.normal(), rng.uniform(0.5, 3)
    q = p.replace(c=(p.c + shift) * scale, delta=(p.delta + shift) * scale,
                  beta=-p.beta * scale, sigma=p.sigma * scale)
    n = normalize_cl2(q)
    assert n.is_identified("cl2")
    gh = GaussHermite(40)
    assert np.allclose(expected_matrix(n), expected_matrix(p), atol=1e-13)
    assert np.allclose(horizon2_matrix(n, gh), horizon2_matrix(p, gh), atol=1e-13)


def test_cl1_normalization():
    r = ReducedParamsCL1(c=[1.0, 2.0, 4.0], delta=[0.5, 2, 3], gamma=[2.0, 1.0, 3.0])
    n = r.normalized()
    assert n.c[0] == 0 and n.gamma[0] == 1
    assert np.allclose(expected_matrix(n), expected_matrix(r), atol=1e-14)


@pytest.mark.parametrize("bad", [
    dict(c=[0.0, 1.0, 1.0]),
    dict(sigma=[1.0, -0.1, 1.0]),
    dict(rho=1.0),
    dict(rebirth_row=[0.5, 0.6, 0.0, 0.0]),
    dict(delta=[0.0, 1.0]),
])
def test_invalid_parameters_rejected(bad):
    base = dict(c=[0.0, 1.0, 2.0], delta=[0.0, 1.0, 2.0], beta=[0.5] * 3, sigma=[0.5] * 3)
    base.update(bad)
    with pytest.raises(ValueError):
        ModelParams(**base)


def test_to_unconstrained_requires_normalization(design3):
    to_unconstrained(design3, "cl2")  # design 3 satisfies the lag-2 normalization
    p = design_params(DesignConfig(design=1, rho=0.4))
    with pytest.raises(ValueError):
        to_unconstrained(p, "cl2")
    to_unconstrained(normalize_cl2(p), "cl2")


def test_json_round_trip(design3):
    q = ModelParams.from_json(design3.to_json())
    for name in ("c", "delta", "beta", "sigma", "rebirth_row"):
        assert np.array_equal(getattr(q, name), getattr(design3, name))
    assert q.rho == design3.rho
    json.loads(design3.to_json())


def test_natural_vector_inverse(design3):
    p = normalize_cl2(design3)
    x = natural_vector(p, "cl2")
    q = from_natural(x, "cl2", 8, rebirth_row=p.rebirth_row)
    assert np.allclose(q.beta, p.beta, atol=1e-14) and q.rho == p.rho


def test_design_one_settings():
    p = design_params(DesignConfig(design=1))
    assert p.gamma[0] == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(p.sigma, p.beta)
    assert np.allclose(p.sigma[1:] / p.sigma[:-1], 1.05)


def test_designs_coincide_at_zero_rho():
    a = design_params(DesignConfig(design=1, rho=0.0))
    b = design_params(DesignConfig(design=2, rho=0.0))
    assert np.array_equal(a.beta, b.beta) and np.array_equal(a.sigma, b.sigma)


def test_design_rejects_unknown_id():
    with pytest.raises(ValueError):
        DesignConfig(design=4)
