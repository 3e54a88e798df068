"""Maximum composite likelihood estimation.

Every fit maximizes a per-observation composite log-likelihood over
unconstrained coordinates with BFGS and a central finite-difference
gradient. The normalizations are built into the coordinates (see
:mod:`migcl.params`), so the optimizer never sees a constraint.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri
from sklearn.base import BaseEstimator

from .kernel import GaussHermite, MonteCarlo, horizon2_matrix
from .likelihood import (TransitionCounts, build_counts, one_step_matrix, two_step_matrix,
                         weighted_log_sum)
from .params import (ModelParams, ReducedParamsCL1, default_rebirth_row, from_unconstrained,
                     natural_vector, normalize_cl2, param_names, to_unconstrained)
from .validation import check_panel

MODES = ("cl1", "cl2", "cl12", "two_step")


@dataclass
class OptimizerConfig:
    """Settings shared by all fits.

    ``gtol`` bounds the sup-norm of the gradient of the per-observation
    objective at convergence; ``ftol`` stops a run whose objective changes
    by less than ``ftol`` over an iteration (reported as not converged unless
    the gradient test also passes). A run that ends without meeting ``gtol``
    is resumed from its last iterate with a fresh curvature estimate up to
    ``refreshes`` times. ``restarts`` adds randomly perturbed starting points.
    """

    max_iter: int = 500
    gtol: float = 1e-6
    ftol: float = 1e-14
    refreshes: int = 3
    restarts: int = 0
    restart_scale: float = 0.1
    seed: int = 0
    n_nodes: int = 40
    mc_paths: int | None = None

    def __post_init__(self):
        if self.gtol <= 0 or self.ftol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.restarts < 0 or self.refreshes < 0:
            raise ValueError("max_iter must be positive and restarts non-negative")

    def integration(self):
        if self.mc_paths:
            return MonteCarlo(self.mc_paths, self.seed)
        return GaussHermite(self.n_nodes)


@dataclass
class EstimationResult:
    mode: str
    theta_hat: ModelParams | ReducedParamsCL1
    objective: float
    grad_norm: float
    n_iter: int
    converged: bool
    message: str = ""
    history: list = field(default_factory=list)
    unidentified: list = field(default_factory=list)
    fingerprint: str = ""
    config: dict = field(default_factory=dict)
    covariance: object = None
    extra: dict = field(default_factory=dict)

    @property
    def param_mode(self) -> str:
        return "cl1" if self.mode == "cl1" else "cl2"

    @property
    def names(self) -> list[str]:
        return param_names(self.param_mode, self.theta_hat.k_states)

    @property
    def estimates(self) -> np.ndarray:
        return natural_vector(self.theta_hat, self.param_mode)

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "theta_hat": self.theta_hat.to_dict(),
            "estimates": dict(zip(self.names, self.estimates.tolist())),
            "objective": self.objective,
            "grad_norm": self.grad_norm,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "message": self.message,
            "unidentified": list(self.unidentified),
            "fingerprint": self.fingerprint,
            "config": self.config,
        }
        if self.covariance is not None:
            out["covariance"] = self.covariance.to_dict()
        if self.extra:
            out["extra"] = self.extra
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)


def counts_fingerprint(counts: TransitionCounts) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(counts.n1_t, dtype=float).tobytes())
    if counts.n2_t is not None:
        h.update(np.ascontiguousarray(counts.n2_t, dtype=float).tobytes())
    h.update(counts.two_step_mode.encode())
    return h.hexdigest()


# -- numerical derivatives ------------------------------------------------------

_FD_SCALE = np.finfo(float).eps ** (1.0 / 3.0)


def fd_steps(v: np.ndarray) -> np.ndarray:
    return _FD_SCALE * np.maximum(1.0, np.abs(v))


def finite_diff_gradient(objective: Callable[[np.ndarray], float], v) -> np.ndarray:
    """Central-difference gradient with step ``cbrt(eps) * max(1, |v_j|)``."""
    v = np.asarray(v, dtype=float)
    h = fd_steps(v)
    g = np.empty_like(v)
    for j in range(v.size):
        up = v.copy()
        dn = v.copy()
        up[j] += h[j]
        dn[j] -= h[j]
        fu, fd = objective(up), objective(dn)
        if not (math.isfinite(fu) and math.isfinite(fd)):
            raise FloatingPointError(f"objective not finite in the stencil of coordinate {j}")
        g[j] = (fu - fd) / (up[j] - dn[j])
    return g


def finite_diff_jacobian(fun: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
    """Central-difference Jacobian of an array-valued function.

    Returns shape ``fun(x).shape + (len(x),)``.
    """
    x = np.asarray(x, dtype=float)
    h = fd_steps(x)
    cols = []
    for j in range(x.size):
        up = x.copy()
        dn = x.copy()
        up[j] += h[j]
        dn[j] -= h[j]
        cols.append((fun(up) - fun(dn)) / (up[j] - dn[j]))
    return np.stack(cols, axis=-1)


# -- initial values ---------------------------------------------------------------

def moment_init(counts: TransitionCounts, min_gap: float = 0.05) -> ReducedParamsCL1:
    """Probit inversion of the empirical one-step frequencies with unit scales.

    With ``gamma_l = 1`` each cumulative frequency gives a linear equation
    ``c_{k+1} - delta_l = Phi^{-1}(F_l(k))``. The equations from all origins
    are solved jointly by weighted least squares (weights from the delta
    method), with a small ridge toward unit spacing for cells without
    information.
    """
    k = counts.k_states
    n1 = counts.n1[:, : k - 1]
    tot = n1.sum(axis=0)
    cum = np.cumsum(n1, axis=0)[: k - 1]
    m = k - 2
    n_par = m + (k - 1)
    rows, rhs, wts = [], [], []
    for l in range(k - 1):
        if tot[l] == 0:
            continue
        for j in range(k - 1):
            if cum[j, l] <= 0 or cum[j, l] >= tot[l]:
                continue
            fhat = cum[j, l] / tot[l]
            z = ndtri(fhat)
            a = np.zeros(n_par)
            if j > 0:
                a[j - 1] = 1.0
            a[m + l] = -1.0
            rows.append(a)
            rhs.append(z)
            dens = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
            wts.append(tot[l] * dens**2 / (fhat * (1 - fhat)))
    prior = np.concatenate((np.arange(1, m + 1, dtype=float), np.arange(k - 1) - 0.5))
    ridge = 1e-6 * (max(wts) if wts else 1.0)
    a = np.vstack(rows + [np.eye(n_par)]) if rows else np.eye(n_par)
    b = np.concatenate((rhs, prior)) if rows else prior
    w = np.sqrt(np.concatenate((wts, np.full(n_par, ridge)))) if rows else np.ones(n_par)
    sol, *_ = np.linalg.lstsq(a * w[:, None], b * w, rcond=None)
    c = np.concatenate(([0.0], sol[:m]))
    for i in range(1, c.size):
        c[i] = max(c[i], c[i - 1] + min_gap)
    return ReducedParamsCL1(c=c, delta=sol[m:], gamma=np.ones(k - 1))


def rho_init(counts: TransitionCounts, bound: float = 0.9) -> float:
    """Lag-1 autocorrelation of the per-date mean rating change."""
    k = counts.k_states
    states = np.arange(1, k + 1, dtype=float)
    n = counts.n1_t[:, :, : k - 1]
    occ = n.sum(axis=(1, 2))
    if counts.n_dates < 4 or np.any(occ == 0):
        return 0.0
    move = (states[:, None] - states[None, : k - 1])
    x = (n * move).sum(axis=(1, 2)) / occ
    x = x - x.mean()
    den = float(np.dot(x, x))
    if den <= 0:
        return 0.0
    return float(np.clip(np.dot(x[1:], x[:-1]) / den, -bound, bound))


def split_reduced(r: ReducedParamsCL1, rho: float, angle=np.pi / 4) -> ModelParams:
    """Full parameters with ``beta_l = gamma_l sin a``, ``sigma_l = gamma_l cos a``,
    rescaled to the CL2 normalization."""
    angle = np.broadcast_to(np.asarray(angle, dtype=float), r.gamma.shape)
    theta = ModelParams(c=r.c, delta=r.delta, beta=r.gamma * np.sin(angle),
                        sigma=r.gamma * np.cos(angle), rho=rho, rebirth_row=r.rebirth_row)
    return normalize_cl2(theta)


# -- optimizer driver ---------------------------------------------------------------

def _optimize(objective, v0: np.ndarray, cfg: OptimizerConfig, free: np.ndarray | None = None):
    """Minimize ``objective`` from ``v0`` (plus optional restarts).

    ``free`` masks the coordinates to optimize; the rest stay at ``v0``.
    Returns ``(v, f, grad_norm, n_iter, message, history)`` of the best run.
    """
    free = np.ones(v0.size, dtype=bool) if free is None else free
    base = v0.copy()

    def expand(x):
        v = base.copy()
        v[free] = x
        return v

    def fun(x):
        val = objective(expand(x))
        return val if math.isfinite(val) else 1e300

    def grad(x):
        return finite_diff_gradient(fun, x)

    starts = [v0[free]]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(99,)))
    for _ in range(cfg.restarts):
        starts.append(v0[free] + cfg.restart_scale * rng.standard_normal(free.sum()))

    best = None
    for x0 in starts:
        history = [fun(x0)]

        def callback(intermediate_result):
            f_new = float(intermediate_result.fun)
            change = history[-1] - f_new
            history.append(f_new)
            if 0 <= change < cfg.ftol:
                raise StopIteration

        x, nit = x0, 0
        for _ in range(cfg.refreshes + 1):
            res = minimize(fun, x, jac=grad, method="BFGS", callback=callback,
                           options={"maxiter": cfg.max_iter, "gtol": cfg.gtol})
            x, nit = res.x, nit + int(res.nit)
            g = grad(x)
            gnorm = float(np.max(np.abs(g))) if g.size else 0.0
            if gnorm <= cfg.gtol or res.nit == 0:
                break
        cand = (float(res.fun), expand(x), gnorm, nit, str(res.message), history)
        if best is None or cand[0] < best[0]:
            best = cand
    f, v, gnorm, nit, msg, history = best
    return v, f, gnorm, nit, msg, history


def _unidentified_origins(counts: TransitionCounts) -> list[int]:
    occ = counts.n1.sum(axis=0)[:-1]
    return [l for l in range(occ.size) if occ[l] == 0]


def _result(mode, theta, f_scaled, scale, gnorm, nit, msg, history, counts, cfg, unident,
            extra=None) -> EstimationResult:
    return EstimationResult(
        mode=mode, theta_hat=theta, objective=-f_scaled * scale, grad_norm=gnorm,
        n_iter=nit, converged=gnorm <= cfg.gtol, message=msg,
        history=[-h * scale for h in history], unidentified=unident,
        fingerprint=counts_fingerprint(counts), config=asdict(cfg), extra=extra or {},
    )


def _rebirth_row(counts: TransitionCounts, k: int):
    row = counts.rebirth_frequencies()
    return default_rebirth_row(k) if row is None else row


def fit_cl1(counts: TransitionCounts, cfg: OptimizerConfig | None = None,
            init: ReducedParamsCL1 | None = None) -> EstimationResult:
    """Maximize the lag-1 composite likelihood over ``(c, delta, gamma)``.

    Origins never visited leave their ``(delta_l, gamma_l)`` unidentified;
    those coordinates are held at their initial values and listed in
    ``result.unidentified``.
    """
    cfg = cfg or OptimizerConfig()
    k = counts.k_states
    row = _rebirth_row(counts, k)
    scale = float(counts.n1.sum())
    if scale <= 0:
        raise ValueError("no transitions in counts")
    r0 = init.normalized() if init is not None else moment_init(counts)
    r0 = ReducedParamsCL1(c=r0.c, delta=r0.delta, gamma=r0.gamma, rebirth_row=row)
    v0 = to_unconstrained(r0, "cl1")

    n1 = counts.n1

    def objective(v):
        r = from_unconstrained(v, "cl1", k, rebirth_row=row)
        return -weighted_log_sum(n1, one_step_matrix(r, row)) / scale

    missing = _unidentified_origins(counts)
    free = np.ones(v0.size, dtype=bool)
    m = k - 2
    names = param_names("cl1", k)
    unident = []
    for l in missing:
        free[m + l] = False
        unident.append(names[m + l])
        if l >= 1:
            free[2 * m + l] = False
            unident.append(names[2 * m + l])
    v, f, gnorm, nit, msg, history = _optimize(objective, v0, cfg, free)
    theta = from_unconstrained(v, "cl1", k, rebirth_row=row)
    return _result("cl1", theta, f, scale, gnorm, nit, msg, history, counts, cfg, unident)


@dataclass
class WarmStart:
    """Initialize a full-parameter fit from reduced CL1 estimates."""

    reduced: ReducedParamsCL1
    rho: float | None = None


def _full_init(counts, init, row) -> ModelParams:
    if isinstance(init, ModelParams):
        return normalize_cl2(init.replace(rebirth_row=row))
    if isinstance(init, WarmStart):
        r = init.reduced.normalized()
        rho = rho_init(counts) if init.rho is None else init.rho
    elif init is None or init == "moment":
        r = moment_init(counts)
        rho = rho_init(counts)
    else:
        raise ValueError("init must be 'moment', WarmStart or ModelParams")
    r = ReducedParamsCL1(c=r.c, delta=r.delta, gamma=r.gamma, rebirth_row=row)
    return split_reduced(r, rho)


def _require_two_step(counts):
    if counts.n2_t is None or counts.n2.sum() <= 0:
        raise ValueError("two-step counts required (panel needs at least 3 dates)")


RHO_CURVATURE_FLOOR = 1e-7


def rho_curvature(counts: TransitionCounts, theta: ModelParams, lag1: bool = False,
                  lag2: bool = True, n_nodes: int = 40, step: float = 1e-3) -> float:
    """Second difference of the per-observation objective in ``rho`` alone.

    A value near zero means the data carry no information on ``rho`` at
    ``theta`` (for instance when every loading is zero).
    """
    row = np.asarray(theta.rebirth_row, dtype=float)
    integ = GaussHermite(n_nodes)
    scale = float((counts.n1.sum() if lag1 else 0.0) + (counts.n2.sum() if lag2 else 0.0))
    rho0 = float(np.clip(theta.rho, -1 + 2 * step, 1 - 2 * step))

    def value(rho):
        th = theta.replace(rho=rho)
        val = 0.0
        if lag1:
            val += weighted_log_sum(counts.n1, one_step_matrix(th, row))
        if lag2:
            val += weighted_log_sum(counts.n2, horizon2_matrix(th, integ, adjusted=True))
        return -val / scale

    return (value(rho0 + step) - 2 * value(rho0) + value(rho0 - step)) / step**2


def _flag_rho(res: EstimationResult, counts, lag1: bool, n_nodes: int) -> EstimationResult:
    curv = rho_curvature(counts, res.theta_hat, lag1=lag1, n_nodes=n_nodes)
    res.extra["rho_curvature"] = curv
    if abs(curv) < RHO_CURVATURE_FLOOR:
        res.unidentified = list(res.unidentified) + ["rho"]
    return res


def _full_fit(mode, counts, cfg, init, lag1: bool, lag2: bool) -> EstimationResult:
    _require_two_step(counts)
    k = counts.k_states
    row = _rebirth_row(counts, k)
    integ = cfg.integration()
    n1 = counts.n1
    n2 = counts.n2
    scale = float((n1.sum() if lag1 else 0.0) + (n2.sum() if lag2 else 0.0))
    theta0 = _full_init(counts, init, row)
    v0 = to_unconstrained(theta0, "cl2")

    def objective(v):
        theta = from_unconstrained(v, "cl2", k, rebirth_row=row)
        val = 0.0
        if lag1:
            val += weighted_log_sum(n1, one_step_matrix(theta, row))
        if lag2:
            val += weighted_log_sum(n2, horizon2_matrix(theta, integ, adjusted=True))
        return -val / scale

    missing = _unidentified_origins(counts)
    names = param_names("cl2", k)
    unident = []
    free = np.ones(v0.size, dtype=bool)
    m = k - 2
    for l in missing:
        idx = [m + l, 2 * m + 1 + (k - 2) + l]
        if l >= 1:
            idx.append(2 * m + l)
        for i in idx:
            free[i] = False
        unident.extend(names[i] for i in sorted(idx))
    v, f, gnorm, nit, msg, history = _optimize(objective, v0, cfg, free)
    theta = from_unconstrained(v, "cl2", k, rebirth_row=row)
    res = _result(mode, theta, f, scale, gnorm, nit, msg, history, counts, cfg, unident)
    return _flag_rho(res, counts, lag1, cfg.n_nodes)


def fit_cl2(counts: TransitionCounts, cfg: OptimizerConfig | None = None,
            init="moment") -> EstimationResult:
    """Maximize the lag-2 composite likelihood over all structural parameters.

    ``init`` is ``"moment"``, a :class:`WarmStart` or :class:`ModelParams`.
    """
    return _full_fit("cl2", counts, cfg or OptimizerConfig(), init, False, True)


def fit_cl12(counts: TransitionCounts, cfg: OptimizerConfig | None = None,
             init="moment") -> EstimationResult:
    """Maximize the sum of the lag-1 and lag-2 composite likelihoods."""
    return _full_fit("cl12", counts, cfg or OptimizerConfig(), init, True, True)


def fit_two_step(counts: TransitionCounts, cfg: OptimizerConfig | None = None) -> EstimationResult:
    """Lag-1 fit of ``(c, delta, gamma)``, then lag-2 fit of the rest.

    The second step keeps the first-step thresholds, intercepts and total
    volatilities and chooses, for every origin, the angle splitting
    ``gamma_l`` into ``beta_l = gamma_l sin a_l`` and
    ``sigma_l = gamma_l cos a_l``, together with ``rho``. The first angle is
    restricted to ``(0, pi/2)`` to fix the sign of the factor. The result is
    reported in the CL2 normalization.
    """
    cfg = cfg or OptimizerConfig()
    _require_two_step(counts)
    step1 = fit_cl1(counts, cfg)
    r = step1.theta_hat
    k = counts.k_states
    row = r.rebirth_row
    integ = cfg.integration()
    n2 = counts.n2
    scale = float(n2.sum())

    def assemble(w) -> ModelParams:
        angles = 0.5 * np.pi * np.tanh(w[: k - 1])
        angles[0] = 0.25 * np.pi * (1.0 + np.tanh(w[0]))
        rho = float(np.tanh(w[-1]))
        return ModelParams(c=r.c, delta=r.delta, beta=r.gamma * np.sin(angles),
                           sigma=r.gamma * np.cos(angles), rho=rho, rebirth_row=row)

    def objective(w):
        try:
            theta = assemble(w)
        except ValueError:
            return math.inf
        return -weighted_log_sum(n2, horizon2_matrix(theta, integ, adjusted=True)) / scale

    w0 = np.zeros(k)
    w0[: k - 1] = np.arctanh(0.5)
    w0[-1] = np.arctanh(rho_init(counts))
    w0[0] = 0.0
    v, f, gnorm, nit, msg, history = _optimize(objective, w0, cfg)
    theta = normalize_cl2(assemble(v))
    res = _result("two_step", theta, f, scale, gnorm, nit, msg, history, counts, cfg,
                  list(step1.unidentified),
                  extra={"step1_objective": step1.objective, "step1_converged": step1.converged,
                         "step2_dimension": int(v.size)})
    res.converged = res.converged and step1.converged
    return _flag_rho(res, counts, False, cfg.n_nodes)


def fit(counts: TransitionCounts, mode: str = "cl1", cfg: OptimizerConfig | None = None,
        **kwargs) -> EstimationResult:
    if mode == "cl1":
        return fit_cl1(counts, cfg, **kwargs)
    if mode == "cl2":
        return fit_cl2(counts, cfg, **kwargs)
    if mode == "cl12":
        return fit_cl12(counts, cfg, **kwargs)
    if mode == "two_step":
        return fit_two_step(counts, cfg)
    raise ValueError(f"unknown estimator mode {mode!r}")


# -- estimator object ---------------------------------------------------------------

class CompositeLikelihoodMigration(BaseEstimator):
    """Factor ordered-probit migration model fitted by composite likelihood.

    Parameters
    ----------
    mode : {"cl1", "cl2", "cl12", "two_step"}
    k_states : int
        Number of rating categories; the last one is default.
    two_step_counts : {"direct", "smoothed"}
    n_nodes : int
        Quadrature nodes for the two-step matrix.
    max_iter, gtol, restarts, seed
        Optimizer settings, see :class:`OptimizerConfig`.
    hac : bool
        Compute sandwich standard errors after fitting.

    Examples
    --------
    >>> est = CompositeLikelihoodMigration(mode="cl1").fit(ratings)  # doctest: +SKIP
    >>> est.transition_matrix()  # doctest: +SKIP
    """

    def __init__(self, mode="cl1", k_states=8, two_step_counts="direct", n_nodes=40,
                 max_iter=500, gtol=1e-6, restarts=0, seed=0, hac=True):
        self.mode = mode
        self.k_states = k_states
        self.two_step_counts = two_step_counts
        self.n_nodes = n_nodes
        self.max_iter = max_iter
        self.gtol = gtol
        self.restarts = restarts
        self.seed = seed
        self.hac = hac

    def _config(self) -> OptimizerConfig:
        return OptimizerConfig(max_iter=self.max_iter, gtol=self.gtol, restarts=self.restarts,
                               seed=self.seed, n_nodes=self.n_nodes)

    def fit(self, X, y=None):
        """Fit on an ``(n_firms, n_dates)`` rating matrix or a RatingPanel."""
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        panel = check_panel(X, self.k_states)
        counts = build_counts(panel, self.two_step_counts)
        result = fit(counts, self.mode, self._config())
        if self.hac:
            from .hac import hac_covariance
            result.covariance = hac_covariance(counts, result)
        self.counts_ = counts
        self.result_ = result
        self.theta_ = result.theta_hat
        self.n_features_in_ = panel.t_len
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise AttributeError("estimator is not fitted yet; call fit first")

    def transition_matrix(self, horizon: int = 1) -> np.ndarray:
        """Fitted expected migration matrix (column = origin)."""
        self._check_fitted()
        if horizon == 1:
            return one_step_matrix(self.theta_, self.theta_.rebirth_row)
        if horizon == 2 and isinstance(self.theta_, ModelParams):
            return two_step_matrix(self.theta_, GaussHermite(self.n_nodes), self.theta_.rebirth_row)
        raise ValueError("horizon must be 1, or 2 for full-parameter modes")

    def _current_ratings(self, X) -> np.ndarray:
        x = np.asarray(getattr(X, "ratings", X))
        if x.ndim == 2:
            x = x[:, -1]
        x = x.astype(np.int64).reshape(-1)
        if x.size and (x.min() < 1 or x.max() > self.k_states):
            raise ValueError(f"ratings must lie in 1..{self.k_states}")
        return x

    def predict_proba(self, X) -> np.ndarray:
        """Next-period rating distribution for each firm's latest rating."""
        self._check_fitted()
        cur = self._current_ratings(X)
        return self.transition_matrix(1)[:, cur - 1].T

    def predict(self, X) -> np.ndarray:
        """Most likely next-period rating."""
        return np.argmax(self.predict_proba(X), axis=1) + 1

    def score(self, X, y=None) -> float:
        """Mean lag-1 composite log-likelihood per transition of ``X``."""
        self._check_fitted()
        counts = build_counts(check_panel(X, self.k_states), self.two_step_counts)
        p = self.transition_matrix(1)
        return weighted_log_sum(counts.n1, p) / counts.n1.sum()
