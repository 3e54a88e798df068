"""Simulation of rating panels driven by a common AR(1) factor.

Random streams
--------------
Every draw comes from a ``numpy.random.SeedSequence(base, spawn_key=key)``
where ``key = (*prefix, stream)``. The prefix is empty for a standalone
simulation and ``(replication,)`` inside a Monte-Carlo battery. Streams:

* 0: factor innovations
* 1: initial ratings
* 2: idiosyncratic score shocks (drawn as a full ``N x T`` block)
* 3: uniforms for the re-entry rating of defaulted firms

Each stream is consumed in a fixed order that does not depend on the
simulated outcomes, so a given key always yields the same panel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .kernel import conditional_matrices, expected_matrix, stationary_distribution
from .params import ModelParams

STREAM_FACTOR, STREAM_INIT, STREAM_SHOCKS, STREAM_REBIRTH = range(4)

InitSpec = Union[str, int, Sequence[float], np.ndarray]


def make_rng(base: int, key: Sequence[int] = (), stream: int = 0) -> np.random.Generator:
    """Generator for one documented substream of ``base``."""
    ss = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in key) + (int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class FactorPath:
    f: np.ndarray
    rho: float
    seed: int | None = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).reshape(-1)

    def __len__(self) -> int:
        return self.f.size


def simulate_factor(rho: float, t_len: int, seed: int = 0, key: Sequence[int] = ()) -> FactorPath:
    """Stationary Gaussian AR(1) path of length ``t_len`` with unit variance."""
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    if t_len < 1:
        raise ValueError("t_len must be positive")
    eta = make_rng(seed, key, STREAM_FACTOR).standard_normal(t_len)
    f = np.empty(t_len)
    f[0] = eta[0]
    scale = np.sqrt(1.0 - rho**2)
    for t in range(1, t_len):
        f[t] = rho * f[t - 1] + scale * eta[t]
    return FactorPath(f=f, rho=rho, seed=seed)


@dataclass
class RatingPanel:
    """Balanced panel of ratings in ``1..K``; column ``t`` is date ``t``.

    Date 0 holds the initial ratings, so a panel with ``T`` columns carries
    ``T - 1`` one-step transitions per firm. ``factor.f[t]`` drives the move
    into date ``t``.
    """

    ratings: np.ndarray
    k_states: int
    scores: np.ndarray | None = None
    factor: FactorPath | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ratings = np.asarray(self.ratings)
        if self.ratings.ndim != 2:
            raise ValueError("ratings must be an N x T matrix")
        if not np.issubdtype(self.ratings.dtype, np.integer):
            if not np.all(self.ratings == np.round(self.ratings)):
                raise ValueError("ratings must be integers")
            self.ratings = self.ratings.astype(np.int64)
        if self.ratings.size and (self.ratings.min() < 1 or self.ratings.max() > self.k_states):
            raise ValueError(f"ratings must lie in 1..{self.k_states}")
        if self.factor is not None and len(self.factor) != self.ratings.shape[1]:
            raise ValueError("factor path length must equal the number of dates")

    @property
    def n_firms(self) -> int:
        return self.ratings.shape[0]

    @property
    def t_len(self) -> int:
        return self.ratings.shape[1]


def _initial_distribution(theta: ModelParams, init: InitSpec) -> np.ndarray:
    k = theta.k_states
    if isinstance(init, str):
        if init != "stationary":
            raise ValueError(f"unknown init mode {init!r}")
        pi = stationary_distribution(expected_matrix(theta, adjusted=True))
        return np.append(pi.conditional_nondefault(), 0.0)
    if np.isscalar(init):
        r = int(init)
        if not 1 <= r <= k:
            raise ValueError(f"fixed initial rating must lie in 1..{k}")
        dist = np.zeros(k)
        dist[r - 1] = 1.0
        return dist
    dist = np.asarray(init, dtype=float)
    if dist.shape != (k,) or np.any(dist < 0) or abs(dist.sum() - 1) > 1e-10:
        raise ValueError("initial distribution must be a probability vector of length K")
    return dist


def _draw_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    return np.searchsorted(cum, u, side="right") + 1


def simulate_panel(theta: ModelParams, n_firms: int, t_len: int, init: InitSpec = "stationary",
                   seed: int = 0, keep_scores: bool = False, key: Sequence[int] = (),
                   factor: FactorPath | None = None) -> RatingPanel:
    """Simulate ``n_firms`` rating histories over ``t_len`` dates.

    A firm in default at date ``t-1`` re-enters at date ``t`` with a rating
    drawn from ``theta.rebirth_row``; the panel slot keeps its index.

    Parameters
    ----------
    init : {"stationary"} or int or array_like
        ``"stationary"`` draws from the invariant distribution of the
        adjusted expected matrix conditional on non-default; an int fixes
        every firm's initial rating; an array gives the initial law.
    factor : FactorPath, optional
        Use this path instead of simulating one.
    """
    if n_firms < 1 or t_len < 1:
        raise ValueError("n_firms and t_len must be positive")
    k = theta.k_states
    if factor is None:
        factor = simulate_factor(theta.rho, t_len, seed, key)
    elif len(factor) != t_len:
        raise ValueError("factor path length must equal t_len")
    f = factor.f

    dist0 = _initial_distribution(theta, init)
    u0 = make_rng(seed, key, STREAM_INIT).random(n_firms)
    shocks = make_rng(seed, key, STREAM_SHOCKS).standard_normal((t_len, n_firms))
    reborn_u = make_rng(seed, key, STREAM_REBIRTH).random((t_len, n_firms))

    ratings = np.empty((t_len, n_firms), dtype=np.int64)
    ratings[0] = _draw_categorical(dist0, u0)
    scores = np.full((t_len, n_firms), np.nan) if keep_scores else None

    delta = np.append(theta.delta, 0.0)
    beta = np.append(theta.beta, 0.0)
    sigma = np.append(theta.sigma, 1.0)
    rebirth_cum = np.cumsum(theta.rebirth_row)
    rebirth_cum[-1] = 1.0
    for t in range(1, t_len):
        prev = ratings[t - 1] - 1
        y = delta[prev] + beta[prev] * f[t] + sigma[prev] * shocks[t]
        new = np.searchsorted(theta.c, y, side="right") + 1
        dead = prev == k - 1
        if dead.any():
            new[dead] = np.searchsorted(rebirth_cum, reborn_u[t, dead], side="right") + 1
            y[dead] = np.nan
        ratings[t] = new
        if keep_scores:
            scores[t] = y

    meta = {"seed": int(seed), "key": [int(x) for x in key], "n_firms": n_firms,
            "t_len": t_len, "k_states": k}
    return RatingPanel(
        ratings=ratings.T.copy(), k_states=k,
        scores=None if scores is None else scores.T.copy(),
        factor=factor, meta=meta,
    )


def stability_series(panel: RatingPanel, theta: ModelParams, firm: int) -> np.ndarray:
    """Conditional probability of keeping the previous rating, per date.

    Entry ``t`` is ``P[y_t = l | y_{t-1} = l, f_t]`` with ``l`` the firm's
    rating at ``t-1``; entry 0 is NaN.
    """
    if panel.factor is None:
        raise ValueError("panel has no factor path")
    if not 0 <= firm < panel.n_firms:
        raise IndexError(f"firm index {firm} out of range")
    prev = panel.ratings[firm, :-1] - 1
    mats = conditional_matrices(theta, panel.factor.f[1:], adjusted=True)
    out = np.full(panel.t_len, np.nan)
    out[1:] = mats[np.arange(prev.size), prev, prev]
    return out


# -- CSV -----------------------------------------------------------------------

def write_panel_csv(panel: RatingPanel, path, include_scores: bool = True) -> None:
    """Long format ``firm,t,rating[,score]`` with 0-based firm and date."""
    with_scores = include_scores and panel.scores is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm", "t", "rating"] + (["score"] if with_scores else []))
        for i in range(panel.n_firms):
            for t in range(panel.t_len):
                row = [i, t, int(panel.ratings[i, t])]
                if with_scores:
                    s = panel.scores[i, t]
                    row.append("" if np.isnan(s) else repr(float(s)))
                w.writerow(row)


def read_panel_csv(path, k_states: int | None = None) -> RatingPanel:
    """Read a balanced long-format panel.

    ``k_states`` defaults to the largest observed rating.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"firm", "t", "rating"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"panel CSV lacks columns: {sorted(missing)}")
        rows = []
        for n, r in enumerate(reader, start=2):
            try:
                rows.append((int(r["firm"]), int(r["t"]), int(r["rating"]),
                             float(r["score"]) if r.get("score") else np.nan))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"malformed panel row at line {n}: {exc}") from None
    if not rows:
        raise ValueError("panel CSV is empty")
    arr = np.array(rows)
    firms, fi = np.unique(arr[:, 0].astype(np.int64), return_inverse=True)
    dates, ti = np.unique(arr[:, 1].astype(np.int64), return_inverse=True)
    if len(rows) != firms.size * dates.size:
        raise ValueError("panel must be balanced: every firm observed at every date")
    ratings = np.zeros((firms.size, dates.size), dtype=np.int64)
    scores = np.full((firms.size, dates.size), np.nan)
    seen = np.zeros_like(ratings, dtype=bool)
    ratings[fi, ti] = arr[:, 2].astype(np.int64)
    scores[fi, ti] = arr[:, 3]
    seen[fi, ti] = True
    if not seen.all():
        raise ValueError("duplicate (firm, t) rows in panel CSV")
    k = int(ratings.max()) if k_states is None else int(k_states)
    return RatingPanel(ratings=ratings, k_states=k,
                       scores=None if np.all(np.isnan(scores)) else scores)


def write_factor_csv(path_obj: FactorPath, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "f"])
        for t, v in enumerate(path_obj.f):
            w.writerow([t, repr(float(v))])


def read_factor_csv(path, rho: float = float("nan")) -> FactorPath:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or ()) < {"t", "f"}:
            raise ValueError("factor CSV needs columns t,f")
        pairs = sorted((int(r["t"]), float(r["f"])) for r in reader)
    if [t for t, _ in pairs] != list(range(len(pairs))):
        raise ValueError("factor CSV dates must be 0..T-1")
    return FactorPath(f=[v for _, v in pairs], rho=rho)
