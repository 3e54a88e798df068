"""Migration matrices implied by the factor ordered-probit model.

All matrices are column-stochastic: entry ``(k, l)`` (0-based ``k-1, l-1``)
is the probability of moving to destination ``k`` from origin ``l``. A
distribution vector ``x`` therefore evolves as ``P @ x``. The CSV helpers
transpose to the conventional printed layout (origin rows).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr

from .params import ModelParams


@dataclass(frozen=True)
class GaussHermite:
    """Probabilists' Gauss-Hermite rule for integrals against N(0, 1)."""

    n_nodes: int = 40

    def __post_init__(self):
        if self.n_nodes < 8:
            raise ValueError("n_nodes must be at least 8")


@dataclass(frozen=True)
class MonteCarlo:
    """Plain Monte-Carlo integration with ``n_paths`` standard normal draws."""

    n_paths: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")


@lru_cache(maxsize=16)
def gauss_hermite_rule(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights with ``sum(w * g(x)) ~ E[g(Z)]``, Z ~ N(0, 1).

    Weights are renormalized to sum to one exactly so that integrating a
    constant is exact to rounding.
    """
    x, w = hermegauss(n_nodes)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def interval_probs(thresholds: np.ndarray, mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Probabilities that ``N(mean, scale**2)`` falls in each threshold cell.

    ``mean`` and ``scale`` broadcast to shape ``(..., L)``; the result has
    shape ``(..., K, L)`` with ``K = len(thresholds) - 1``. Upper-tail cells
    are computed from survival functions to keep relative accuracy far in
    the right tail.
    """
    mean = np.asarray(mean, dtype=float)
    scale = np.asarray(scale, dtype=float)
    z = (thresholds[:, None] - mean[..., None, :]) / scale[..., None, :]
    tail = ndtr(-np.abs(z))
    pos = z > 0
    cdf = np.where(pos, 1.0 - tail, tail)
    sf = np.where(pos, tail, 1.0 - tail)
    upper = sf[..., :-1, :] - sf[..., 1:, :]
    lower = cdf[..., 1:, :] - cdf[..., :-1, :]
    return np.where(pos[..., :-1, :], upper, lower)


def _default_column(theta, adjusted: bool) -> np.ndarray:
    if adjusted:
        return np.asarray(theta.rebirth_row, dtype=float)
    col = np.zeros(theta.k_states)
    col[-1] = 1.0
    return col


def _assemble(body: np.ndarray, theta, adjusted: bool) -> np.ndarray:
    """Append the default-origin column to a ``(..., K, K-1)`` block."""
    col = _default_column(theta, adjusted)
    col = np.broadcast_to(col[:, None], body.shape[:-1] + (1,))
    return np.concatenate((body, col), axis=-1)


def conditional_matrices(theta: ModelParams, f, adjusted: bool = True) -> np.ndarray:
    """Conditional matrices ``P(f)`` for an array of factor values.

    Returns shape ``f.shape + (K, K)``.
    """
    f = np.asarray(f, dtype=float)
    mean = theta.delta + theta.beta * f[..., None]
    scale = np.broadcast_to(theta.sigma, mean.shape)
    return _assemble(interval_probs(theta.thresholds, mean, scale), theta, adjusted)


def conditional_matrix(theta: ModelParams, f: float, adjusted: bool = True) -> np.ndarray:
    """Transition matrix given the factor value ``f``."""
    return conditional_matrices(theta, float(f), adjusted)


def expected_matrix(theta, adjusted: bool = True) -> np.ndarray:
    """Factor-integrated one-step matrix in closed form.

    Accepts :class:`ModelParams` or any object exposing ``thresholds``,
    ``delta``, ``gamma`` and ``rebirth_row`` (e.g. reduced CL1 parameters).
    """
    gamma = theta.gamma
    body = interval_probs(theta.thresholds, np.asarray(theta.delta), np.asarray(gamma))
    return _assemble(body, theta, adjusted)


def _lead_matrices(theta: ModelParams, f: np.ndarray, adjusted: bool) -> np.ndarray:
    """``E[P(f_{t+1}) | f_t = f]`` for each value of ``f``."""
    mean = theta.delta + (theta.beta * theta.rho) * f[..., None]
    scale = np.broadcast_to(theta.gamma_cl2, mean.shape)
    return _assemble(interval_probs(theta.thresholds, mean, scale), theta, adjusted)


def horizon2_matrix(theta: ModelParams, method: GaussHermite | MonteCarlo | None = None,
                    adjusted: bool = True) -> np.ndarray:
    """Expected two-step matrix ``E[P(f_{t+1}) P(f_t)]``.

    Conditioning on ``f_t = f`` reduces the expectation to a one-dimensional
    integral of ``A(f) @ P(f)`` against the standard normal density, where
    ``A(f)`` integrates out the next factor innovation analytically.
    """
    method = GaussHermite() if method is None else method
    if isinstance(method, GaussHermite):
        nodes, weights = gauss_hermite_rule(method.n_nodes)
    elif isinstance(method, MonteCarlo):
        rng = np.random.default_rng(np.random.SeedSequence(method.seed))
        nodes = rng.standard_normal(method.n_paths)
        weights = np.full(method.n_paths, 1.0 / method.n_paths)
    else:
        raise TypeError("method must be GaussHermite or MonteCarlo")
    a = _lead_matrices(theta, nodes, adjusted)
    b = conditional_matrices(theta, nodes, adjusted)
    k = a.shape[-1]
    lhs = (weights[:, None, None] * a).transpose(1, 0, 2).reshape(k, -1)
    return lhs @ b.reshape(-1, k)


def simulate_factor_paths(rho: float, length: int, n_paths: int, seed: int) -> np.ndarray:
    """Stationary AR(1) paths with unit variance, shape ``(n_paths, length)``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    eta = rng.standard_normal((length, n_paths))
    f = np.empty((length, n_paths))
    f[0] = eta[0]
    scale = np.sqrt(1.0 - rho**2)
    for t in range(1, length):
        f[t] = rho * f[t - 1] + scale * eta[t]
    return f.T


def horizon_matrices(theta: ModelParams, horizons: Iterable[int], n_paths: int = 5000,
                     seed: int = 0, adjusted: bool = True) -> dict[int, np.ndarray]:
    """Monte-Carlo ``E[P(f_h) ... P(f_1)]`` for several horizons at once.

    All horizons share the same simulated factor paths. The last factor of
    each product is integrated out analytically given the previous one
    (``E[P(f_h) | f_{h-1}]`` has a closed form), which removes part of the
    simulation noise; horizon 1 is therefore exact.
    """
    horizons = sorted({int(h) for h in horizons})
    if not horizons or horizons[0] < 1:
        raise ValueError("horizons must be positive integers")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    out = {}
    if horizons[0] == 1:
        out[1] = expected_matrix(theta, adjusted)
    if horizons[-1] == 1:
        return out
    paths = simulate_factor_paths(theta.rho, horizons[-1] - 1, n_paths, seed)
    k = theta.k_states
    prod = np.broadcast_to(np.eye(k), (n_paths, k, k)).copy()
    wanted = set(horizons)
    for t in range(horizons[-1] - 1):
        prod = conditional_matrices(theta, paths[:, t], adjusted) @ prod
        if t + 2 in wanted:
            lead = _lead_matrices(theta, paths[:, t], adjusted)
            out[t + 2] = (lead @ prod).mean(axis=0)
    return out


def horizon_h_matrix(theta: ModelParams, h: int, n_paths: int = 5000, seed: int = 0,
                     adjusted: bool = True) -> np.ndarray:
    """Monte-Carlo expected ``h``-step matrix."""
    return horizon_matrices(theta, [h], n_paths, seed, adjusted)[int(h)]


@dataclass
class ExpectedMatrices:
    p1: np.ndarray
    p2: np.ndarray
    adjusted: bool


def expected_matrices(theta: ModelParams, method=None, adjusted: bool = True) -> ExpectedMatrices:
    return ExpectedMatrices(
        p1=expected_matrix(theta, adjusted),
        p2=horizon2_matrix(theta, method, adjusted),
        adjusted=adjusted,
    )


class NonUniqueStationaryError(ValueError):
    """The chain has no unique invariant distribution."""


@dataclass
class StationaryDistribution:
    pi: np.ndarray

    def conditional_nondefault(self) -> np.ndarray:
        """Invariant distribution restricted to the non-default states."""
        p = self.pi[:-1].copy()
        return p / p.sum()


def stationary_distribution(p: np.ndarray, tol: float = 1e-10) -> StationaryDistribution:
    """Invariant distribution of a column-stochastic matrix: ``P pi = pi``."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(p < -tol) or np.max(np.abs(p.sum(axis=0) - 1.0)) > 1e-8:
        raise ValueError("matrix must be column-stochastic")
    k = p.shape[0]
    a = np.eye(k) - p
    sv = np.linalg.svd(a, compute_uv=False)
    if k > 1 and sv[-2] <= tol * max(1.0, sv[0]):
        raise NonUniqueStationaryError("chain is reducible: invariant distribution not unique")
    system = np.vstack((a, np.ones((1, k))))
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    pi = pi / pi.sum()
    return StationaryDistribution(pi=pi)


# -- CSV -----------------------------------------------------------------------

def format_value(x: float, paper_format: bool = False) -> str:
    if paper_format:
        return f"{100.0 * x:.2f}"
    return repr(float(x))


def write_matrix_csv(path, p: np.ndarray, paper_format: bool = False) -> None:
    """Write ``p`` with one row per origin state and one column per destination."""
    k = p.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin"] + [f"to_{j}" for j in range(1, k + 1)])
        for l in range(k):
            w.writerow([l + 1] + [format_value(v, paper_format) for v in p[:, l]])


def read_matrix_csv(path) -> np.ndarray:
    """Inverse of :func:`write_matrix_csv` (percent files are not rescaled)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return body.T.copy()


def matrix_to_rows(p: np.ndarray) -> list[list[float]]:
    """Printed layout: row per origin."""
    return np.asarray(p).T.tolist()

