import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from migcl import (GaussHermite, RatingPanel, ZeroProbabilityError, build_counts, cl1, cl12, cl2,
                   conditional_matrix, expected_matrix, horizon2_matrix, simulate_panel)
from migcl.likelihood import conditional_loglik, read_counts_csv, write_counts_csv
from migcl.params import cl1_reduce

from conftest import random_params

K = 5
panels = arrays(np.int64, st.tuples(st.integers(1, 10), st.integers(3, 8)),
                elements=st.integers(1, K))


@settings(max_examples=100, deadline=None)
@given(panels)
def test_counts_equal_indicator_tallies(r):
    counts = build_counts(RatingPanel(r, K))
    n, t_len = r.shape
    one = np.zeros((K, K))
    two = np.zeros((K, K))
    for i in range(n):
        for t in range(1, t_len):
            one[r[i, t] - 1, r[i, t - 1] - 1] += 1
        for t in range(2, t_len):
            two[r[i, t] - 1, r[i, t - 2] - 1] += 1
    assert np.array_equal(counts.n1, one)
    assert np.array_equal(counts.n2, two)
    assert counts.n1.sum() == n * (t_len - 1)


@settings(max_examples=50, deadline=None)
@given(panels)
def test_smoothed_counts_preserve_origin_totals(r):
    direct = build_counts(RatingPanel(r, K), "direct")
    smooth = build_counts(RatingPanel(r, K), "smoothed")
    # smoothing redistributes each origin's two-step mass without changing its total
    assert np.allclose(smooth.n2_t.sum(axis=1), direct.n2_t.sum(axis=1))
    assert np.all(smooth.n2_t >= 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cl1_equals_per_observation_sum(seed):
    rng = np.random.default_rng(seed)
    theta = random_params(rng, k=K)
    panel = simulate_panel(theta, int(rng.integers(1, 11)), int(rng.integers(2, 9)), seed=seed)
    row = theta.rebirth_row
    p = expected_matrix(theta)
    r = panel.ratings
    brute = math.fsum(math.log(p[r[i, t] - 1, r[i, t - 1] - 1])
                      for i in range(r.shape[0]) for t in range(1, r.shape[1]))
    assert cl1(build_counts(panel), theta, rebirth=row) == pytest.approx(brute, abs=1e-10)


def test_cl2_and_cl12_per_observation(design3):
    panel = simulate_panel(design3, 30, 10, seed=2)
    counts = build_counts(panel)
    row = design3.rebirth_row
    gh = GaussHermite(40)
    p1 = expected_matrix(design3)
    p2 = horizon2_matrix(design3, gh)
    r = panel.ratings
    brute2 = math.fsum(math.log(p2[r[i, t] - 1, r[i, t - 2] - 1])
                       for i in range(30) for t in range(2, 10))
    brute1 = math.fsum(math.log(p1[r[i, t] - 1, r[i, t - 1] - 1])
                       for i in range(30) for t in range(1, 10))
    assert cl2(counts, design3, gh, rebirth=row) == pytest.approx(brute2, abs=1e-9)
    assert cl12(counts, design3, gh, rebirth=row) == pytest.approx(brute1 + brute2, abs=1e-9)


def test_conditional_loglik_per_observation(design3):
    panel = simulate_panel(design3, 20, 8, seed=4)
    counts = build_counts(panel)
    f = panel.factor.f
    r = panel.ratings
    brute = math.fsum(math.log(conditional_matrix(design3, f[t])[r[i, t] - 1, r[i, t - 1] - 1])
                      for i in range(20) for t in range(1, 8))
    got = conditional_loglik(counts, design3, panel.factor, rebirth=design3.rebirth_row)
    assert got == pytest.approx(brute, abs=1e-9)
    with pytest.raises(ValueError):
        conditional_loglik(counts, design3, f[:-1])


def test_reduced_and_full_parameters_agree(design3):
    counts = build_counts(simulate_panel(design3, 50, 12, seed=1))
    assert cl1(counts, design3) == cl1(counts, cl1_reduce(design3))


def test_empirical_rebirth_row_is_default():
    theta = random_params(np.random.default_rng(0), k=K)
    r = np.array([[5, 1, 2], [5, 2, 2], [1, 1, 1]])
    counts = build_counts(RatingPanel(r, K))
    assert np.allclose(counts.rebirth_frequencies(), [0.5, 0.5, 0, 0, 0])
    p = expected_matrix(theta)
    brute = math.log(0.5) * 2 + math.log(p[1, 0]) + math.log(p[1, 1]) + math.log(p[0, 0]) * 2
    assert cl1(counts, theta) == pytest.approx(brute, abs=1e-12)


def test_zero_probability_cells():
    theta = random_params(np.random.default_rng(1), k=K)
    row = np.array([1.0, 0, 0, 0, 0])
    r = np.array([[5, 3]])  # re-entry into 3 has zero probability under row
    counts = build_counts(RatingPanel(r, K))
    with pytest.raises(ZeroProbabilityError):
        cl1(counts, theta, rebirth=row, strict=True)
    val = cl1(counts, theta, rebirth=row)
    assert np.isfinite(val) and val < -600


def test_counts_csv_round_trip(tmp_path, design3):
    counts = build_counts(simulate_panel(design3, 40, 6, seed=0))
    write_counts_csv(counts, tmp_path / "c.csv")
    back = read_counts_csv(tmp_path / "c.csv", 8, counts.n_dates)
    assert np.array_equal(back, counts.n1_t)
    with pytest.raises(ValueError):
        write_counts_csv(counts, tmp_path / "c.csv", lag=3)


def test_counts_validation():
    with pytest.raises(ValueError):
        build_counts(RatingPanel(np.array([[1], [2]]), K))
    with pytest.raises(ValueError):
        build_counts(RatingPanel(np.array([[1, 2]]), K), "other")
    short = build_counts(RatingPanel(np.array([[1, 2]]), K))
    assert short.n2_t is None
    with pytest.raises(ValueError):
        short.n2
