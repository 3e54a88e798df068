"""Migration counts and composite log-likelihoods.

The objectives depend on a panel only through its transition counts. All
matrices follow the kernel convention: index ``[k, l]`` is destination
``k``, origin ``l`` (0-based).

Transitions out of default are not governed by the structural parameters.
They enter every objective through a re-entry row, by default the empirical
frequencies observed in the counts, which adds a parameter-free constant to
the one-step objective.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .kernel import (GaussHermite, MonteCarlo, conditional_matrices, expected_matrix,
                     horizon2_matrix)
from .params import ModelParams, cl1_reduce

TwoStepMode = Literal["direct", "smoothed"]

LOG_FLOOR = 1e-300


class ZeroProbabilityError(ArithmeticError):
    """A cell with positive count has zero model probability."""


@dataclass
class TransitionCounts:
    """One- and two-step migration counts of a balanced panel.

    Attributes
    ----------
    n1_t : ndarray, shape (T-1, K, K)
        ``n1_t[s, k, l]`` counts moves from ``l`` at date ``s`` to ``k`` at
        date ``s+1``.
    nl_t : ndarray, shape (T-1, K)
        Origin occupancy at date ``s``.
    n2_t : ndarray, shape (T-2, K, K) or None
        Two-step counts ending at date ``s+2``.
    n_firms : int
    two_step_mode : {"direct", "smoothed"}
    """

    n1_t: np.ndarray
    nl_t: np.ndarray
    n2_t: np.ndarray | None
    n_firms: int
    two_step_mode: str = "direct"

    @property
    def k_states(self) -> int:
        return self.n1_t.shape[1]

    @property
    def n_dates(self) -> int:
        """Number of one-step transition dates (``T - 1``)."""
        return self.n1_t.shape[0]

    @property
    def n1(self) -> np.ndarray:
        return self.n1_t.sum(axis=0)

    @property
    def n2(self) -> np.ndarray:
        if self.n2_t is None:
            raise ValueError("two-step counts unavailable (need at least 3 dates)")
        return self.n2_t.sum(axis=0)

    def rebirth_frequencies(self, fallback=None) -> np.ndarray | None:
        """Empirical destination law of moves out of default."""
        col = self.n1[:, -1]
        total = col.sum()
        if total > 0:
            return col / total
        return None if fallback is None else np.asarray(fallback, dtype=float)

    def scaled(self, factor: float) -> "TransitionCounts":
        return TransitionCounts(
            n1_t=self.n1_t * factor, nl_t=self.nl_t * factor,
            n2_t=None if self.n2_t is None else self.n2_t * factor,
            n_firms=self.n_firms, two_step_mode=self.two_step_mode,
        )


def _tally(pairs_to: np.ndarray, pairs_from: np.ndarray, k: int) -> np.ndarray:
    """Per-date ``K x K`` counts from aligned ``(dates, firms)`` arrays."""
    n_dates = pairs_to.shape[0]
    date = np.broadcast_to(np.arange(n_dates)[:, None], pairs_to.shape)
    code = (date * k + (pairs_to - 1)) * k + (pairs_from - 1)
    flat = np.bincount(code.ravel(), minlength=n_dates * k * k)
    return flat.reshape(n_dates, k, k).astype(float)


def build_counts(panel, two_step_mode: TwoStepMode = "direct") -> TransitionCounts:
    """Tally one-step and two-step transitions.

    ``"direct"`` counts pairs ``(y_t, y_{t-2})``. ``"smoothed"`` forms
    ``sum_j phat_{kj,t} n_{jl,t-1}`` with ``phat_{kj,t} = n_{kj,t} / n_{j,t-1}``
    (zero when the origin is empty), which preserves the origin totals.
    """
    if two_step_mode not in ("direct", "smoothed"):
        raise ValueError(f"unknown two-step mode {two_step_mode!r}")
    r = np.asarray(panel.ratings)
    k = int(panel.k_states)
    if r.ndim != 2 or r.shape[1] < 2:
        raise ValueError("panel needs at least 2 dates")
    if r.min() < 1 or r.max() > k:
        raise ValueError(f"ratings must lie in 1..{k}")
    rt = r.T
    n1_t = _tally(rt[1:], rt[:-1], k)
    nl_t = n1_t.sum(axis=1)
    n2_t = None
    if rt.shape[0] >= 3:
        if two_step_mode == "direct":
            n2_t = _tally(rt[2:], rt[:-2], k)
        else:
            occ = nl_t[1:]
            phat = np.divide(n1_t[1:], occ[:, None, :], out=np.zeros_like(n1_t[1:]),
                             where=occ[:, None, :] > 0)
            n2_t = phat @ n1_t[:-1]
    return TransitionCounts(n1_t=n1_t, nl_t=nl_t, n2_t=n2_t, n_firms=r.shape[0],
                            two_step_mode=two_step_mode)


def weighted_log_sum(n: np.ndarray, p: np.ndarray, strict: bool = False) -> float:
    """``sum n log p`` over cells with ``n > 0``.

    Zero probabilities in such cells raise :class:`ZeroProbabilityError`
    when ``strict``; otherwise ``p`` is floored at ``LOG_FLOOR`` so that the
    value stays finite (and very negative).
    """
    mask = n > 0
    pm = p[mask]
    if strict and np.any(pm <= 0):
        raise ZeroProbabilityError("positive count in a zero-probability cell")
    return float(np.dot(n[mask], np.log(np.maximum(pm, LOG_FLOOR))))


def _rebirth(counts: TransitionCounts, rebirth, fallback) -> np.ndarray:
    if rebirth is not None:
        return np.asarray(rebirth, dtype=float)
    return counts.rebirth_frequencies(fallback=fallback)


def _with_rebirth(theta, row):
    if dataclasses.is_dataclass(theta):
        return dataclasses.replace(theta, rebirth_row=row)
    out = copy.copy(theta)
    out.rebirth_row = row
    return out


def one_step_matrix(theta, rebirth) -> np.ndarray:
    p = expected_matrix(theta, adjusted=False)
    p[:, -1] = rebirth
    return p


def cl1(counts: TransitionCounts, r, rebirth=None, strict: bool = False) -> float:
    """Lag-1 composite log-likelihood ``sum n_kl log p_kl``.

    ``r`` may be reduced CL1 parameters or full :class:`ModelParams` (which
    are reduced first).
    """
    if isinstance(r, ModelParams):
        r = cl1_reduce(r)
    p = one_step_matrix(r, _rebirth(counts, rebirth, r.rebirth_row))
    return weighted_log_sum(counts.n1, p, strict)


def two_step_matrix(theta: ModelParams, integ, rebirth) -> np.ndarray:
    return horizon2_matrix(_with_rebirth(theta, rebirth), integ, adjusted=True)


def cl2(counts: TransitionCounts, theta: ModelParams, integ: GaussHermite | MonteCarlo | None = None,
        rebirth=None, strict: bool = False) -> float:
    """Lag-2 composite log-likelihood ``sum n2_kl log p_kl(2)``."""
    row = _rebirth(counts, rebirth, theta.rebirth_row)
    return weighted_log_sum(counts.n2, two_step_matrix(theta, integ, row), strict)


def cl12(counts: TransitionCounts, theta: ModelParams, integ=None, rebirth=None,
         strict: bool = False) -> float:
    """Sum of the lag-1 and lag-2 objectives at the same parameters."""
    return (cl1(counts, cl1_reduce(theta), rebirth, strict)
            + cl2(counts, theta, integ, rebirth, strict))


def conditional_loglik(counts: TransitionCounts, theta: ModelParams, f_path, rebirth=None,
                       strict: bool = False) -> float:
    """Log-likelihood of the one-step counts given the factor path.

    ``f_path`` has one value per panel date; ``f_path[s+1]`` drives the
    moves counted in ``counts.n1_t[s]``.
    """
    f = np.asarray(getattr(f_path, "f", f_path), dtype=float).reshape(-1)
    if f.size != counts.n_dates + 1:
        raise ValueError("factor path length must equal the number of panel dates")
    row = _rebirth(counts, rebirth, theta.rebirth_row)
    mats = conditional_matrices(_with_rebirth(theta, row), f[1:], adjusted=True)
    return weighted_log_sum(counts.n1_t, mats, strict)


# -- CSV -----------------------------------------------------------------------

def write_counts_csv(counts: TransitionCounts, path, lag: int = 1) -> None:
    """Nonzero per-date counts as ``t,k,l,count`` (1-based states).

    ``t`` is the destination date.
    """
    if lag == 1:
        arr, offset = counts.n1_t, 1
    elif lag == 2:
        arr, offset = counts.n2_t, 2
        if arr is None:
            raise ValueError("two-step counts unavailable")
    else:
        raise ValueError("lag must be 1 or 2")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "k", "l", "count"])
        for s, k, l in zip(*np.nonzero(arr)):
            v = arr[s, k, l]
            w.writerow([s + offset, k + 1, l + 1, int(v) if float(v).is_integer() else repr(float(v))])


def read_counts_csv(path, k_states: int, n_dates: int | None = None) -> np.ndarray:
    """Per-date one-step counts from ``t,k,l,count`` rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or ()) < {"t", "k", "l", "count"}:
            raise ValueError("counts CSV needs columns t,k,l,count")
        rows = [(int(r["t"]), int(r["k"]), int(r["l"]), float(r["count"])) for r in reader]
    t_max = max((r[0] for r in rows), default=0)
    n = t_max if n_dates is None else n_dates
    out = np.zeros((n, k_states, k_states))
    for t, k, l, c in rows:
        out[t - 1, k - 1, l - 1] += c
    return out
