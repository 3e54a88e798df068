"""Sandwich covariance of composite likelihood estimators.

The per-date score is a count-weighted sum of cell scores
``g_kl = d log p_kl / d theta`` (natural parameter units, finite
differences). With ``n`` firms and ``T`` transition dates:

* ``J = sum_kl n_kl / (n T) g_kl g_kl'`` (outer-product form),
* ``I_h = (1/T) sum_t s_t s_{t+h}'`` with
  ``s_t = sum_kl (n_kl,t / n - mean_t(n_kl,t / n)) g_kl``,
* ``Sigma = J^{-1} (I_0 + sum_h k(h / B_T) (I_h + I_h')) J^{-1}``,

and standard errors are ``sqrt(diag(Sigma) / T)``. ``k`` is the quadratic
spectral kernel and ``B_T = 4 (T / 100)^(2/9)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import EstimationResult, finite_diff_jacobian
from .kernel import GaussHermite
from .likelihood import TransitionCounts, one_step_matrix, two_step_matrix
from .params import from_natural, natural_vector, param_names


def qs_kernel(x):
    """Quadratic spectral kernel, ``k(0) = 1``."""
    x = np.asarray(x, dtype=float)
    z = 6.0 * np.pi * np.abs(x) / 5.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 25.0 / (12.0 * np.pi**2 * x**2) * (np.sin(z) / z - np.cos(z))
    out = np.where(x == 0, 1.0, val)
    return float(out) if out.ndim == 0 else out


def default_bandwidth(t_len: float) -> float:
    """``4 (T / 100)^(2/9)``."""
    if t_len <= 0:
        raise ValueError("T must be positive")
    return 4.0 * (t_len / 100.0) ** (2.0 / 9.0)


@dataclass
class HacConfig:
    bandwidth: float | None = None
    max_lag: int | None = None
    n_nodes: int = 40

    def __post_init__(self):
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


@dataclass
class CovarianceEstimate:
    names: list
    sigma: np.ndarray
    j_hat: np.ndarray
    i_hats: list
    se: np.ndarray
    t_len: int
    bandwidth: float
    lags_used: int
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "se": dict(zip(self.names, self.se.tolist())),
            "sigma": self.sigma.tolist(),
            "t_len": self.t_len,
            "bandwidth": self.bandwidth,
            "lags_used": self.lags_used,
            "flags": list(self.flags),
        }


def _components(counts: TransitionCounts, mode: str):
    """Per-date count arrays and the cell-probability map for each objective term."""
    if mode == "cl1":
        return [("lag1", counts.n1_t)]
    if mode in ("cl2", "two_step"):
        return [("lag2", counts.n2_t)]
    if mode == "cl12":
        return [("lag1", counts.n1_t), ("lag2", counts.n2_t)]
    raise ValueError(f"unknown mode {mode!r}")


def cell_scores(theta_hat, mode: str, kind: str, n_nodes: int = 40) -> np.ndarray:
    """``d log p_kl / d theta`` for every cell, shape ``(K, K, d)``.

    Cells with zero probability get a zero score.
    """
    pmode = "cl1" if mode == "cl1" else "cl2"
    k = theta_hat.k_states
    x0 = natural_vector(theta_hat, pmode)
    row = np.asarray(theta_hat.rebirth_row, dtype=float)
    integ = GaussHermite(n_nodes)

    def probs(x):
        th = from_natural(x, pmode, k, rebirth_row=row, check=False)
        if kind == "lag1":
            return one_step_matrix(th, row)
        return two_step_matrix(th, integ, row)

    def logp(x):
        return np.log(np.maximum(probs(x), 1e-300))

    jac = finite_diff_jacobian(logp, x0)
    live = probs(x0) > 1e-250
    return np.where(live[..., None], jac, 0.0)


def j_from_scores(weights: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Outer-product information ``sum_kl w_kl g_kl g_kl'``."""
    gf = g.reshape(-1, g.shape[-1])
    return gf.T @ (weights.reshape(-1)[:, None] * gf)


def estimate_j(counts: TransitionCounts, theta_hat, mode: str, n_nodes: int = 40) -> np.ndarray:
    """Outer-product estimate of the expected negative Hessian per firm-date."""
    n = counts.n_firms
    d = natural_vector(theta_hat, "cl1" if mode == "cl1" else "cl2").size
    j = np.zeros((d, d))
    for kind, nt in _components(counts, mode):
        if nt is None:
            raise ValueError("two-step counts required")
        g = cell_scores(theta_hat, mode, kind, n_nodes)
        j += j_from_scores(nt.sum(axis=0) / (n * nt.shape[0]), g)
    return (j + j.T) / 2


def score_series(counts: TransitionCounts, theta_hat, mode: str, n_nodes: int = 40) -> np.ndarray:
    """Demeaned per-date scores ``s_t``, shape ``(T, d)``.

    Terms with different lags are aligned on their final date.
    """
    n = counts.n_firms
    parts = []
    for kind, nt in _components(counts, mode):
        g = cell_scores(theta_hat, mode, kind, n_nodes)
        share = nt / n
        share = share - share.mean(axis=0)
        parts.append(np.einsum("tkl,kld->td", share, g))
    t_len = min(p.shape[0] for p in parts)
    return sum(p[-t_len:] for p in parts)


def lag_covariances(s: np.ndarray, max_lag: int) -> list[np.ndarray]:
    """``I_h = (1/T) sum_t s_t s_{t+h}'`` for ``h = 0..max_lag``."""
    t_len = s.shape[0]
    return [s[: t_len - h].T @ s[h:] / t_len for h in range(max_lag + 1)]


def _long_run(i_hats, bandwidth, lags):
    omega = i_hats[0].copy()
    for h in range(1, lags + 1):
        w = qs_kernel(h / bandwidth)
        omega += w * (i_hats[h] + i_hats[h].T)
    return omega


def hac_covariance(counts: TransitionCounts, result: EstimationResult | object,
                   cfg: HacConfig | None = None, mode: str | None = None) -> CovarianceEstimate:
    """Sandwich covariance and standard errors at a fitted parameter.

    ``result`` is an :class:`EstimationResult` or a parameter object (then
    ``mode`` is required).
    """
    cfg = cfg or HacConfig()
    if isinstance(result, EstimationResult):
        theta, mode = result.theta_hat, result.mode
    else:
        theta = result
        if mode is None:
            raise ValueError("mode is required when passing parameters")
    flags = []
    s = score_series(counts, theta, mode, cfg.n_nodes)
    t_len = s.shape[0]
    if t_len < 5:
        raise ValueError("need at least 5 dates for HAC estimation")
    bandwidth = cfg.bandwidth or default_bandwidth(t_len)
    max_lag = t_len - 1 if cfg.max_lag is None else min(cfg.max_lag, t_len - 1)
    i_hats = lag_covariances(s, max_lag)

    j = estimate_j(counts, theta, mode, cfg.n_nodes)
    if np.linalg.matrix_rank(j) < j.shape[0]:
        flags.append("singular_j_pseudo_inverse")
        j_inv = np.linalg.pinv(j)
    else:
        j_inv = np.linalg.inv(j)

    lags = max_lag
    while True:
        sigma = j_inv @ _long_run(i_hats, bandwidth, lags) @ j_inv
        sigma = (sigma + sigma.T) / 2
        if np.all(np.diag(sigma) >= 0) or lags == 0:
            break
        lags -= 1
    if lags < max_lag:
        flags.append(f"lag_sum_truncated_at_{lags}")
    se = np.sqrt(np.maximum(np.diag(sigma), 0.0) / t_len)
    names = param_names("cl1" if mode == "cl1" else "cl2", theta.k_states)
    return CovarianceEstimate(names=names, sigma=sigma, j_hat=j, i_hats=i_hats, se=se,
                              t_len=t_len, bandwidth=bandwidth, lags_used=lags, flags=flags)


def t_statistics(estimates, cov: CovarianceEstimate, null) -> np.ndarray:
    """``(estimate - null) / se``; entries with zero standard error are NaN."""
    est = np.asarray(getattr(estimates, "estimates", estimates), dtype=float)
    null = np.asarray(null, dtype=float)
    if est.shape != null.shape or est.shape != cov.se.shape:
        raise ValueError("dimension mismatch between estimates, null and standard errors")
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (est - null) / cov.se
    return np.where(cov.se > 0, t, math.nan)
