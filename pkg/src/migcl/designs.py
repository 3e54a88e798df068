"""Reference parameter designs for simulation experiments."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .params import ModelParams, default_rebirth_row

DEFAULT_THRESHOLDS = (0.0, 1.5, 3.0, 4.5, 6.0, 7.5, 9.0)
DEFAULT_INTERCEPTS = (-0.5, 1.0, 2.5, 4.0, 5.5, 7.0, 8.5)


@dataclass
class DesignConfig:
    """Simulation design and Monte-Carlo battery settings.

    Designs differ in how the loadings and idiosyncratic volatilities grow
    with the origin rating (``growth`` is the per-notch growth rate):

    1. ``sigma_l = beta_l = (1+growth)**(l-1) / sqrt(2)``
    2. ``sigma_l = beta_l = (1+growth)**(l-1) / sqrt(2 - rho**2)``
    3. ``beta_l = 1 / sqrt(2 - rho**2)``, ``sigma_l = beta_l (1+growth)**(l-1)``
    """

    design: int = 1
    rho: float = 0.0
    growth: float = 0.05
    thresholds: tuple = DEFAULT_THRESHOLDS
    intercepts: tuple = DEFAULT_INTERCEPTS
    rebirth_row: tuple | None = None
    n_firms: int = 500
    t_len: int = 120
    n_replications: int = 25
    seed: int = 0
    mode: str = "cl1"
    two_step_counts: str = "direct"
    n_nodes: int = 40
    risk_paths: int = 5000
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.design not in (1, 2, 3):
            raise ValueError(f"unknown design id {self.design!r}")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be < 1")
        self.thresholds = tuple(float(x) for x in self.thresholds)
        self.intercepts = tuple(float(x) for x in self.intercepts)
        if len(self.intercepts) != len(self.thresholds):
            raise ValueError("need one intercept per non-default state")
        if self.rebirth_row is not None:
            self.rebirth_row = tuple(float(x) for x in self.rebirth_row)
        if self.mode not in ("cl1", "cl2", "cl12", "two_step"):
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        for name in ("n_firms", "t_len", "n_replications", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def k_states(self) -> int:
        return len(self.thresholds) + 1

    def to_dict(self) -> dict:
        """Settings that determine results (the worker count does not)."""
        out = asdict(self)
        out.pop("workers")
        return out


def design_params(cfg: DesignConfig) -> ModelParams:
    """Structural parameters of the configured design."""
    k = cfg.k_states
    growth = (1.0 + cfg.growth) ** np.arange(k - 1)
    rho = cfg.rho
    if cfg.design == 1:
        beta = sigma = growth / np.sqrt(2.0)
    elif cfg.design == 2:
        beta = sigma = growth / np.sqrt(2.0 - rho**2)
    elif cfg.design == 3:
        beta = np.full(k - 1, 1.0 / np.sqrt(2.0 - rho**2))
        sigma = beta * growth
    else:
        raise ValueError(f"unknown design id {cfg.design!r}")
    rebirth = cfg.rebirth_row if cfg.rebirth_row is not None else default_rebirth_row(k)
    return ModelParams(
        c=cfg.thresholds, delta=cfg.intercepts, beta=beta.copy(), sigma=sigma.copy(),
        rho=rho, rebirth_row=rebirth,
    )
