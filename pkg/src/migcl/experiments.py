"""Monte-Carlo batteries and risk measures.

A battery simulates ``n_replications`` independent panels from a design,
fits each with the configured estimator, computes sandwich standard errors
and t-statistics against the true parameters, and averages the results.
Replication ``r`` draws all of its randomness from the substreams keyed by
``(r,)`` under the battery seed (see :mod:`migcl.simulate`), so results do
not depend on how replications are spread across worker processes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .designs import DesignConfig, design_params
from .estimator import OptimizerConfig, fit
from .hac import HacConfig, hac_covariance, t_statistics
from .kernel import (GaussHermite, expected_matrix, format_value, horizon2_matrix,
                     horizon_matrices)
from .likelihood import build_counts
from .params import ModelParams, cl1_reduce, natural_vector, normalize_cl2, param_names
from .simulate import simulate_panel

RISK_SEED = 20240101
RATING_A = 3
DEFAULT_PD_HORIZONS = (1, 12, 24, 36)


@dataclass
class RiskMeasures:
    """Downgrade and default probabilities for a firm currently in ``origin``."""

    dp1: float
    dp2: float
    pd: dict = field(default_factory=dict)
    origin: int = RATING_A

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [("DP1", self.dp1), ("DP2", self.dp2)]
        rows += [(f"PD{h}", v) for h, v in sorted(self.pd.items())]
        return rows


def risk_measures(theta: ModelParams, horizons: Sequence[int] = DEFAULT_PD_HORIZONS,
                  n_paths: int = 5000, seed: int = RISK_SEED, origin: int = RATING_A,
                  n_nodes: int = 64) -> RiskMeasures:
    """Term structure of downgrade and default risk from rating ``origin``.

    Horizon 1 is closed form, horizon 2 uses quadrature and longer horizons
    the factor-path Monte Carlo of :func:`migcl.kernel.horizon_matrices`. All
    matrices include re-entry of defaulted firms, so ``PD(h)`` is the
    probability of being in default at date ``h``.
    """
    k = theta.k_states
    if not 1 <= origin < k - 1:
        raise ValueError("origin must be a non-default rating with worse ratings below it")
    o = origin - 1
    p1 = expected_matrix(theta, adjusted=True)
    p2 = horizon2_matrix(theta, GaussHermite(n_nodes), adjusted=True)
    mats = {1: p1, 2: p2}
    long = [h for h in horizons if h > 2]
    if long:
        mats.update({h: m for h, m in horizon_matrices(theta, long, n_paths, seed).items() if h > 2})
    return RiskMeasures(
        dp1=float(p1[o + 1:, o].sum()),
        dp2=float(p2[o + 1:, o].sum()),
        pd={int(h): float(mats[h][-1, o]) for h in horizons},
        origin=origin,
    )


def true_natural(theta: ModelParams, mode: str) -> np.ndarray:
    """True parameter vector in the normalization used by ``mode``."""
    if mode == "cl1":
        return natural_vector(cl1_reduce(theta).normalized(), "cl1")
    return natural_vector(normalize_cl2(theta), "cl2")


def _replicate(args) -> dict:
    cfg, rep = args
    theta0 = design_params(cfg)
    out = {"rep": rep, "error": None}
    try:
        panel = simulate_panel(theta0, cfg.n_firms, cfg.t_len, seed=cfg.seed, key=(rep,))
        counts = build_counts(panel, cfg.two_step_counts)
        opt = OptimizerConfig(seed=cfg.seed, n_nodes=cfg.n_nodes)
        res = fit(counts, cfg.mode, opt)
        cov = hac_covariance(counts, res, HacConfig(n_nodes=cfg.n_nodes))
        truth = true_natural(theta0, cfg.mode)
        out.update(
            estimates=res.estimates.tolist(), se=cov.se.tolist(),
            tstats=t_statistics(res.estimates, cov, truth).tolist(),
            converged=bool(res.converged), flags=list(cov.flags),
        )
        if cfg.mode == "cl1":
            p1 = expected_matrix(res.theta_hat, adjusted=True)
            out["risk"] = {"DP1": float(p1[RATING_A:, RATING_A - 1].sum())}
        else:
            horizons = DEFAULT_PD_HORIZONS if cfg.risk_paths > 0 else (1,)
            rm = risk_measures(res.theta_hat, horizons, max(cfg.risk_paths, 1),
                               RISK_SEED)
            out["risk"] = dict(rm.as_rows())
    except Exception as exc:  # recorded, the battery goes on
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


@dataclass
class McSummary:
    names: list
    true_values: np.ndarray
    mean_abs_bias: np.ndarray
    mean_se: np.ndarray
    coverage: np.ndarray
    estimates: np.ndarray
    se: np.ndarray
    tstats: np.ndarray
    risk_true: dict
    risk_mean: dict
    n_converged: int
    failures: list
    config: dict

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def bias_of(self, name: str) -> float:
        return float(self.mean_abs_bias[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "true_values": self.true_values.tolist(),
            "mean_abs_bias": self.mean_abs_bias.tolist(),
            "mean_se": self.mean_se.tolist(),
            "coverage": self.coverage.tolist(),
            "risk_true": self.risk_true,
            "risk_mean": self.risk_mean,
            "n_converged": self.n_converged,
            "failures": self.failures,
            "config": self.config,
        }

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "true", "mean_abs_bias", "mean_se", "share_abs_t_le_1.96"])
            for i, name in enumerate(self.names):
                w.writerow([name, repr(float(self.true_values[i])), repr(float(self.mean_abs_bias[i])),
                            repr(float(self.mean_se[i])), repr(float(self.coverage[i]))])

    def write_tstats_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replication"] + list(self.names))
            for r, row in enumerate(self.tstats):
                w.writerow([r] + [repr(float(v)) for v in row])

    def write_risk_csv(self, path, paper_format: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["measure", "true", "mean_estimate"])
            for name, val in self.risk_true.items():
                est = self.risk_mean.get(name, math.nan)
                w.writerow([name, format_value(val, paper_format), format_value(est, paper_format)])


def _fmean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else math.nan


def run_battery(cfg: DesignConfig, workers: int | None = None) -> McSummary:
    """Run all replications of ``cfg`` and summarize them.

    Failed replications are listed in ``failures`` and excluded from the
    averages.
    """
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, r) for r in range(cfg.n_replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_replicate, jobs))
    else:
        outs = [_replicate(j) for j in jobs]

    theta0 = design_params(cfg)
    pmode = "cl1" if cfg.mode == "cl1" else "cl2"
    names = param_names(pmode, cfg.k_states)
    truth = true_natural(theta0, cfg.mode)
    ok = [o for o in outs if o["error"] is None]
    failures = [{"replication": o["rep"], "error": o["error"]} for o in outs if o["error"]]
    d = len(names)
    est = np.array([o["estimates"] for o in ok]).reshape(len(ok), d)
    se = np.array([o["se"] for o in ok]).reshape(len(ok), d)
    ts = np.array([o["tstats"] for o in ok]).reshape(len(ok), d)
    bias = np.array([_fmean(np.abs(est[:, j] - truth[j])) for j in range(d)])
    mean_se = np.array([math.sqrt(_fmean(se[:, j] ** 2)) if ok else math.nan for j in range(d)])
    cover = np.array([_fmean(np.abs(ts[:, j]) <= 1.96) for j in range(d)])

    if cfg.mode == "cl1":
        p1 = expected_matrix(theta0, adjusted=True)
        risk_true = {"DP1": float(p1[RATING_A:, RATING_A - 1].sum())}
    else:
        horizons = DEFAULT_PD_HORIZONS if cfg.risk_paths > 0 else (1,)
        risk_true = dict(risk_measures(theta0, horizons, max(cfg.risk_paths, 1)).as_rows())
    risk_mean = {name: _fmean(o["risk"][name] for o in ok) for name in risk_true}
    return McSummary(
        names=names, true_values=truth, mean_abs_bias=bias, mean_se=mean_se, coverage=cover,
        estimates=est, se=se, tstats=ts, risk_true=risk_true, risk_mean=risk_mean,
        n_converged=sum(o["converged"] for o in ok), failures=failures, config=cfg.to_dict(),
    )
