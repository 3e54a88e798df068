"""Structural parameters of the factor ordered-probit migration model.

Ratings are numbered ``1..K``; state ``K`` is default. Coefficients indexed
by origin state (``delta``, ``beta``, ``sigma``) have one entry per
non-default state, i.e. length ``K - 1``. Thresholds are stored as
``c_2..c_K`` (``c_1 = -inf`` and ``c_{K+1} = +inf`` are implicit) and the
location normalization pins ``c_2 = 0``.

Two normalizations of the latent scale are used:

* CL1: ``gamma_1 = sqrt(sigma_1**2 + beta_1**2) = 1``; only ``(c, delta,
  gamma)`` are identified.
* CL2: ``sigma_1**2 + beta_1**2 * (1 - rho**2) = 1`` and ``beta_1 > 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

Mode = Literal["cl1", "cl2"]

_ATOL = 1e-10


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float, copy=True).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def default_rebirth_row(k_states: int) -> np.ndarray:
    """Assignment row for new entries: (0.5, 0.3, 0.2, 0, ..., 0)."""
    if k_states < 4:
        raise ValueError("default rebirth row needs at least 4 states")
    row = np.zeros(k_states)
    row[:3] = (0.5, 0.3, 0.2)
    return row


@dataclass
class ModelParams:
    """Full structural parameter set ``(c, delta, beta, sigma, rho)``.

    Parameters
    ----------
    c : array_like, shape (K-1,)
        Thresholds ``c_2..c_K``, strictly increasing.
    delta, beta, sigma : array_like, shape (K-1,)
        Intercepts, factor loadings and idiosyncratic volatilities per
        non-default origin state.
    rho : float
        Factor autocorrelation, ``|rho| < 1``.
    rebirth_row : array_like, shape (K,), optional
        Rating distribution of firms replacing defaulted ones. Defaults to
        ``(0.5, 0.3, 0.2, 0, ...)``.
    """

    c: np.ndarray
    delta: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    rho: float = 0.0
    rebirth_row: np.ndarray | None = None

    def __post_init__(self):
        self.c = _as_vector(self.c, "c")
        self.delta = _as_vector(self.delta, "delta")
        self.beta = _as_vector(self.beta, "beta")
        self.sigma = _as_vector(self.sigma, "sigma")
        self.rho = float(self.rho)
        k = self.c.size + 1
        if k < 3:
            raise ValueError("need at least 3 rating states")
        for name in ("delta", "beta", "sigma"):
            if getattr(self, name).size != k - 1:
                raise ValueError(f"{name} must have length K-1={k - 1}")
        if self.rebirth_row is None:
            self.rebirth_row = default_rebirth_row(k)
        self.rebirth_row = _as_vector(self.rebirth_row, "rebirth_row")
        if self.rebirth_row.size != k:
            raise ValueError(f"rebirth_row must have length K={k}")
        self.validate()

    @property
    def k_states(self) -> int:
        return self.c.size + 1

    @property
    def thresholds(self) -> np.ndarray:
        """All K+1 thresholds including the infinite end points."""
        return np.concatenate(([-np.inf], self.c, [np.inf]))

    @property
    def gamma(self) -> np.ndarray:
        """Total score volatility ``sqrt(sigma**2 + beta**2)`` per origin."""
        return np.sqrt(self.sigma**2 + self.beta**2)

    @property
    def gamma_cl2(self) -> np.ndarray:
        """Conditional volatility ``sqrt(sigma**2 + beta**2 (1 - rho**2))``."""
        return np.sqrt(self.sigma**2 + self.beta**2 * (1.0 - self.rho**2))

    def validate(self) -> "ModelParams":
        if np.any(np.diff(self.c) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be < 1")
        if np.any(self.rebirth_row < 0) or abs(self.rebirth_row.sum() - 1) > 1e-12:
            raise ValueError("rebirth_row must be a probability vector")
        return self

    def is_identified(self, mode: Mode = "cl2", atol: float = _ATOL) -> bool:
        """Check the location, scale and sign normalizations for ``mode``."""
        if self.c[0] != 0.0:
            return False
        if mode == "cl1":
            return abs(self.gamma[0] - 1.0) <= atol
        return self.beta[0] > 0 and abs(self.gamma_cl2[0] - 1.0) <= atol

    def replace(self, **changes) -> "ModelParams":
        fields = dict(
            c=self.c, delta=self.delta, beta=self.beta, sigma=self.sigma,
            rho=self.rho, rebirth_row=self.rebirth_row,
        )
        fields.update(changes)
        return ModelParams(**fields)

    def to_dict(self) -> dict:
        return {
            "k_states": self.k_states,
            "c": self.c.tolist(),
            "delta": self.delta.tolist(),
            "beta": self.beta.tolist(),
            "sigma": self.sigma.tolist(),
            "rho": self.rho,
            "rebirth_row": self.rebirth_row.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        p = cls(
            c=d["c"], delta=d["delta"], beta=d["beta"], sigma=d["sigma"],
            rho=d.get("rho", 0.0), rebirth_row=d.get("rebirth_row"),
        )
        if "k_states" in d and int(d["k_states"]) != p.k_states:
            raise ValueError("k_states inconsistent with array lengths")
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass
class ReducedParamsCL1:
    """Parameters identified by the lag-1 composite likelihood.

    ``gamma`` holds all K-1 total volatilities; the scale normalization sets
    ``gamma[0] == 1`` (see :meth:`normalized`). ``c`` holds ``c_2..c_K`` with
    ``c_2 == 0``.
    """

    c: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    rebirth_row: np.ndarray | None = None

    def __post_init__(self):
        self.c = _as_vector(self.c, "c")
        self.delta = _as_vector(self.delta, "delta")
        self.gamma = _as_vector(self.gamma, "gamma")
        k = self.c.size + 1
        if self.delta.size != k - 1 or self.gamma.size != k - 1:
            raise ValueError("delta and gamma must have length K-1")
        if np.any(np.diff(self.c) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(self.gamma <= 0):
            raise ValueError("gamma must be positive")
        if self.rebirth_row is None:
            self.rebirth_row = default_rebirth_row(k)
        self.rebirth_row = _as_vector(self.rebirth_row, "rebirth_row")

    @property
    def k_states(self) -> int:
        return self.c.size + 1

    @property
    def thresholds(self) -> np.ndarray:
        return np.concatenate(([-np.inf], self.c, [np.inf]))

    def normalized(self) -> "ReducedParamsCL1":
        """Rescale so that ``c_2 = 0`` and ``gamma_1 = 1``."""
        shift = self.c[0]
        scale = self.gamma[0]
        return ReducedParamsCL1(
            c=(self.c - shift) / scale,
            delta=(self.delta - shift) / scale,
            gamma=self.gamma / scale,
            rebirth_row=self.rebirth_row,
        )

    def to_dict(self) -> dict:
        return {
            "k_states": self.k_states,
            "c": self.c.tolist(),
            "delta": self.delta.tolist(),
            "gamma": self.gamma.tolist(),
            "rebirth_row": self.rebirth_row.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReducedParamsCL1":
        return cls(c=d["c"], delta=d["delta"], gamma=d["gamma"],
                   rebirth_row=d.get("rebirth_row"))


def cl1_reduce(p: ModelParams) -> ReducedParamsCL1:
    """Collapse ``(beta, sigma)`` into ``gamma = sqrt(sigma**2 + beta**2)``."""
    return ReducedParamsCL1(c=p.c, delta=p.delta, gamma=p.gamma,
                            rebirth_row=p.rebirth_row)


def beta1_from_constraint(sigma1: float, rho: float) -> float:
    """Positive ``beta_1`` solving ``sigma_1**2 + beta_1**2 (1 - rho**2) = 1``."""
    if not 0 < sigma1 < 1:
        raise ValueError("sigma1 must lie in (0, 1) for a real beta1")
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    return float(np.sqrt((1.0 - sigma1**2) / (1.0 - rho**2)))


def normalize_cl2(p: ModelParams) -> ModelParams:
    """Rescale an arbitrary parameterization to the CL2 normalization.

    The latent score is defined up to an increasing affine map and a sign of
    the factor, so shifting by ``c_2``, dividing by ``gamma_cl2[0]`` and
    flipping the loadings' sign leaves every transition probability
    unchanged.
    """
    shift = p.c[0]
    scale = p.gamma_cl2[0]
    sign = -1.0 if p.beta[0] < 0 else 1.0
    return p.replace(
        c=(p.c - shift) / scale,
        delta=(p.delta - shift) / scale,
        beta=sign * p.beta / scale,
        sigma=p.sigma / scale,
    )


# -- unconstrained optimizer coordinates -------------------------------------

def _logit(x):
    return np.log(x) - np.log1p(-x)


def _expit(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def n_free(mode: Mode, k_states: int) -> int:
    if mode == "cl1":
        return 3 * k_states - 5
    return 4 * k_states - 5


def to_unconstrained(p, mode: Mode) -> np.ndarray:
    """Map normalized parameters to a flat real vector.

    CL1 layout: ``[log diff(c), delta, log gamma_2..]``.
    CL2 layout: ``[log diff(c), delta, beta_2.., logit sigma_1,
    log sigma_2.., atanh rho]``; ``beta_1`` is implied by the constraint.
    """
    if p.c[0] != 0.0:
        raise ValueError("c_2 must be 0")
    head = [np.log(np.diff(p.c)), p.delta]
    if mode == "cl1":
        if isinstance(p, ModelParams):
            p = cl1_reduce(p)
        if abs(p.gamma[0] - 1.0) > _ATOL:
            raise ValueError("gamma_1 must be 1; call normalized() first")
        v = np.concatenate(head + [np.log(p.gamma[1:])])
    elif mode == "cl2":
        if not isinstance(p, ModelParams):
            raise TypeError("CL2 coordinates need full ModelParams")
        if not p.is_identified("cl2"):
            raise ValueError("params violate the CL2 normalization")
        v = np.concatenate(head + [
            p.beta[1:], [_logit(p.sigma[0])], np.log(p.sigma[1:]),
            [np.arctanh(p.rho)],
        ])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameters map to non-finite coordinates")
    return v


def from_unconstrained(v, mode: Mode, k_states: int,
                       rebirth_row: Sequence[float] | None = None):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != n_free(mode, k_states):
        raise ValueError(f"expected {n_free(mode, k_states)} coordinates, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("unconstrained vector must be finite")
    m = k_states - 2
    c = np.concatenate(([0.0], np.cumsum(np.exp(v[:m]))))
    delta = v[m:2 * m + 1]
    rest = v[2 * m + 1:]
    if mode == "cl1":
        gamma = np.concatenate(([1.0], np.exp(rest)))
        return ReducedParamsCL1(c=c, delta=delta, gamma=gamma, rebirth_row=rebirth_row)
    if mode != "cl2":
        raise ValueError(f"unknown mode {mode!r}")
    beta_rest = rest[:m]
    sigma1 = float(_expit(rest[m]))
    sigma_rest = np.exp(rest[m + 1:2 * m + 1])
    rho = float(np.tanh(rest[-1]))
    if not 0 < sigma1 < 1 or not abs(rho) < 1:
        raise ValueError("coordinates saturate the sigma_1 or rho map")
    beta1 = beta1_from_constraint(sigma1, rho)
    return ModelParams(
        c=c, delta=delta,
        beta=np.concatenate(([beta1], beta_rest)),
        sigma=np.concatenate(([sigma1], sigma_rest)),
        rho=rho, rebirth_row=rebirth_row,
    )


# -- natural coordinates (reported estimates, standard errors) ---------------

def param_names(mode: Mode, k_states: int) -> list[str]:
    k = k_states
    names = [f"c{j}" for j in range(3, k + 1)]
    names += [f"delta{j}" for j in range(1, k)]
    if mode == "cl1":
        names += [f"gamma{j}" for j in range(2, k)]
    else:
        names += [f"beta{j}" for j in range(2, k)]
        names += [f"sigma{j}" for j in range(1, k)]
        names += ["rho"]
    return names


def natural_vector(p, mode: Mode) -> np.ndarray:
    """Free parameters in model units, ordered as :func:`param_names`."""
    if mode == "cl1":
        r = cl1_reduce(p) if isinstance(p, ModelParams) else p
        return np.concatenate((r.c[1:], r.delta, r.gamma[1:]))
    return np.concatenate((p.c[1:], p.delta, p.beta[1:], p.sigma, [p.rho]))


def from_natural(x, mode: Mode, k_states: int, rebirth_row=None, check: bool = True):
    """Inverse of :func:`natural_vector`.

    With ``check=False`` the ordering and positivity checks are skipped so that
    finite-difference stencils may step slightly outside the parameter set;
    the result is then a lightweight namespace, not a validated dataclass.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    m = k_states - 2
    c = np.concatenate(([0.0], x[:m]))
    delta = x[m:2 * m + 1]
    rest = x[2 * m + 1:]
    if mode == "cl1":
        gamma = np.concatenate(([1.0], rest))
        if check:
            return ReducedParamsCL1(c=c, delta=delta, gamma=gamma, rebirth_row=rebirth_row)
        return _Raw(c=c, delta=delta, gamma=gamma, rebirth_row=rebirth_row)
    beta_rest = rest[:m]
    sigma = rest[m:2 * m + 1]
    rho = float(rest[-1])
    beta1 = np.sqrt(max(1.0 - sigma[0] ** 2, 0.0) / (1.0 - rho**2))
    beta = np.concatenate(([beta1], beta_rest))
    if check:
        return ModelParams(c=c, delta=delta, beta=beta, sigma=sigma, rho=rho,
                           rebirth_row=rebirth_row)
    return _Raw(c=c, delta=delta, beta=beta, sigma=sigma, rho=rho, rebirth_row=rebirth_row)


class _Raw:
    """Unvalidated parameter bundle used inside finite-difference stencils."""

    def __init__(self, c, delta, beta=None, sigma=None, gamma=None, rho=0.0, rebirth_row=None):
        self.c = c
        self.delta = delta
        self.beta = beta
        self.sigma = sigma
        self._gamma = gamma
        self.rho = rho
        self.rebirth_row = rebirth_row

    @property
    def k_states(self) -> int:
        return self.c.size + 1

    @property
    def thresholds(self) -> np.ndarray:
        return np.concatenate(([-np.inf], self.c, [np.inf]))

    @property
    def gamma(self) -> np.ndarray:
        if self._gamma is not None:
            return self._gamma
        return np.sqrt(self.sigma**2 + self.beta**2)

    @property
    def gamma_cl2(self) -> np.ndarray:
        return np.sqrt(self.sigma**2 + self.beta**2 * (1.0 - self.rho**2))
