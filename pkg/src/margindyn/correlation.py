"""Rank correlations for comparing margin dynamics with error dynamics.

Both coefficients measure agreement of two series up to a monotone
transform. Constant series have no ranking information; they are reported
as NaN with an explicit flag, never silently as zero.
"""

from dataclasses import dataclass

import numpy as np

from .validation import check_series_pair


@dataclass(frozen=True)
class CorrelationResult:
    spearman_rho: float
    kendall_tau: float
    n_points: int
    constant_x: bool = False
    constant_y: bool = False

    @property
    def defined(self):
        return not (self.constant_x or self.constant_y)


def _midranks(x):
    """Ranks starting at 1, ties receiving the average of their positions."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    sx = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y):
    """Pearson correlation of mid-ranks; NaN when either series is constant."""
    x, y = check_series_pair(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    rx = _midranks(x)
    ry = _midranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        return float("nan")
    return float((rx * ry).sum() / denom)


def kendall_tau(x, y):
    """Tie-corrected (tau-b) Kendall correlation by direct pair counting.

    Quadratic in the series length, which is fine at the epoch counts this
    package deals with.
    """
    x, y = check_series_pair(x, y)
    n = x.shape[0]
    concordant = 0
    discordant = 0
    for i in range(n - 1):
        dx = np.sign(x[i + 1 :] - x[i])
        dy = np.sign(y[i + 1 :] - y[i])
        prod = dx * dy
        concordant += int((prod > 0).sum())
        discordant += int((prod < 0).sum())
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(x)
    n2 = _tie_pairs(y)
    if n0 == n1 or n0 == n2:
        return float("nan")
    return float((concordant - discordant) / np.sqrt((n0 - n1) * (n0 - n2)))


def _tie_pairs(x):
    _, counts = np.unique(x, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def rank_correlations(x, y):
    """Both coefficients at once, with constant-series flags."""
    x, y = check_series_pair(x, y)
    cx = bool(np.all(x == x[0]))
    cy = bool(np.all(y == y[0]))
    return CorrelationResult(
        spearman_rho=spearman_rho(x, y) if not (cx or cy) else float("nan"),
        kendall_tau=kendall_tau(x, y) if not (cx or cy) else float("nan"),
        n_points=int(x.shape[0]),
        constant_x=cx,
        constant_y=cy,
    )
