"""Dynamics diagnostics: correlation heatmaps, phase transitions, early stopping.

Everything here consumes MarginDynamics and produces plain data objects.
The shared theme: training margin-error curves at well-chosen thresholds
track the test-error curve up to a monotone transform, so rank correlations
identify good thresholds, curve extrema suggest stopping epochs, and the
absence of a phase transition in training margins while test error turns
upward is the failure mode flagged as the Breiman dilemma.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correlation import _midranks, kendall_tau, spearman_rho
from .errors import AnalysisError, DataError
from .margins import inverse_quantile_curve, margin_error_curve, quantile_margin_curve
from .validation import as_float_array

DEFAULT_WINDOW = 5
DEFAULT_PROMINENCE = 0.05
DEFAULT_GRID_SIZE = 40
DEFAULT_Q_SET = (0.5, 0.7, 0.9, 0.95)
THREADS_ENV_VAR = "MARGINDYN_THREADS"


def _thread_count(threads=None):
    if threads is not None:
        return max(int(threads), 1)
    env = os.environ.get(THREADS_ENV_VAR)
    return max(int(env), 1) if env else 1


def pooled_margin_grid(dyn, size=DEFAULT_GRID_SIZE, include_test=True):
    """Threshold grid at evenly spaced quantiles of the pooled normalized margins.

    Pools margins across all epochs (train plus test when present) and takes
    quantile levels from 0 to 1, so the grid spans min to max; duplicate
    values collapse.
    """
    if size < 1:
        raise DataError(f"grid size must be >= 1, got {size}")
    pools = [a for a in dyn.train]
    if include_test and dyn.test is not None:
        pools.extend(a for a in dyn.test if a is not None)
    pooled = np.sort(np.concatenate(pools))
    levels = np.linspace(0.0, 1.0, size) if size > 1 else np.array([0.5])
    idx = np.minimum((levels * (pooled.size - 1)).round().astype(int), pooled.size - 1)
    return np.unique(pooled[idx])


@dataclass(frozen=True)
class CorrelationHeatmap:
    """Rank correlations between test margin-error dynamics (rows, gamma1)
    and train margin-error dynamics (columns, gamma2)."""

    gamma1_grid: np.ndarray
    gamma2_grid: np.ndarray
    values: np.ndarray  # Spearman rho; NaN marks a constant-series cell
    kendall: np.ndarray = None  # companion matrix, same shape, optional
    method: str = "spearman_rho"


def correlation_heatmap(dyn, gamma1_grid=None, gamma2_grid=None, grid_size=DEFAULT_GRID_SIZE,
                        with_kendall=True, threads=None):
    """Grid of rank correlations between per-threshold train and test error curves.

    Cell (i, j) correlates, across epochs, the test margin-error curve at
    gamma1_grid[i] with the train margin-error curve at gamma2_grid[j].
    """
    if not dyn.has_test:
        raise AnalysisError("correlation heatmap needs test margins on every epoch")
    if gamma1_grid is None:
        gamma1_grid = pooled_margin_grid(dyn, grid_size)
    if gamma2_grid is None:
        gamma2_grid = pooled_margin_grid(dyn, grid_size)
    gamma1_grid = as_float_array(gamma1_grid, "gamma1 grid", ndim=1, allow_empty=False)
    gamma2_grid = as_float_array(gamma2_grid, "gamma2 grid", ndim=1, allow_empty=False)
    for name, grid in (("gamma1", gamma1_grid), ("gamma2", gamma2_grid)):
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise DataError(f"{name} grid must be strictly increasing")
    if dyn.num_epochs < 2:
        raise AnalysisError("correlations need at least 2 epochs")

    test_curves = np.stack([margin_error_curve(dyn, g, "test") for g in gamma1_grid])
    train_curves = np.stack([margin_error_curve(dyn, g, "train") for g in gamma2_grid])

    # Spearman over all cells at once: center the mid-ranks, then one matmul.
    def centered_ranks(curves):
        ranks = np.stack([_midranks(c) for c in curves])
        ranks -= ranks.mean(axis=1, keepdims=True)
        norms = np.sqrt((ranks * ranks).sum(axis=1))
        constant = norms == 0.0
        norms[constant] = 1.0
        return ranks, norms, constant

    r1, n1, c1 = centered_ranks(test_curves)
    r2, n2, c2 = centered_ranks(train_curves)
    values = (r1 @ r2.T) / np.outer(n1, n2)
    values[c1, :] = np.nan
    values[:, c2] = np.nan

    kendall = None
    if with_kendall:
        kendall = np.empty_like(values)

        def fill_row(i):
            for j in range(gamma2_grid.size):
                kendall[i, j] = kendall_tau(test_curves[i], train_curves[j])

        workers = _thread_count(threads)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(fill_row, range(gamma1_grid.size)))
        else:
            for i in range(gamma1_grid.size):
                fill_row(i)

    return CorrelationHeatmap(
        gamma1_grid=gamma1_grid, gamma2_grid=gamma2_grid, values=values, kendall=kendall
    )


@dataclass(frozen=True)
class PhaseSummary:
    """Classification of one curve's training-time shape."""

    direction: str  # increase-then-decrease | monotone-up | monotone-down | flat
    transition_index: int = None  # curve index of the peak, when one fires
    prominence: float = 0.0  # peak height over the lower endpoint, in range units
    smoothed: np.ndarray = field(default=None, repr=False)


def moving_average(curve, window):
    """Centered moving average; the window shrinks symmetrically at the edges."""
    curve = as_float_array(curve, "curve", ndim=1)
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    if window == 1:
        return curve.copy()
    half = window // 2
    out = np.empty_like(curve)
    n = curve.shape[0]
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = curve[lo:hi].mean()
    return out


def detect_phase_transition(curve, window=DEFAULT_WINDOW, prominence=DEFAULT_PROMINENCE):
    """Classify a curve as peaked (increase-then-decrease), monotone, or flat.

    The curve is smoothed with a centered moving average; a transition is
    reported when the smoothed maximum sits strictly inside the range and
    rises above the lower endpoint by at least `prominence` times the
    smoothed range. The rule only compares range-relative quantities, so the
    classification is invariant under positive affine rescaling.
    """
    curve = as_float_array(curve, "curve", ndim=1)
    if curve.shape[0] < 3:
        raise DataError(f"phase detection needs at least 3 points, got {curve.shape[0]}")
    smoothed = moving_average(curve, window)
    span = float(smoothed.max() - smoothed.min())
    if span == 0.0:
        return PhaseSummary(direction="flat", smoothed=smoothed)
    peak = int(np.argmax(smoothed))
    score = float(smoothed[peak] - min(smoothed[0], smoothed[-1]))
    if 0 < peak < smoothed.shape[0] - 1 and score >= prominence * span:
        return PhaseSummary(
            direction="increase-then-decrease",
            transition_index=peak,
            prominence=score / span,
            smoothed=smoothed,
        )
    if smoothed[-1] > smoothed[0]:
        direction = "monotone-up"
    elif smoothed[-1] < smoothed[0]:
        direction = "monotone-down"
    else:
        direction = "flat"
    return PhaseSummary(direction=direction, prominence=score / span, smoothed=smoothed)


def interior_minimum(curve, window=DEFAULT_WINDOW, prominence=DEFAULT_PROMINENCE):
    """Index of a prominent interior minimum (via peak detection on the negated
    curve), or None."""
    summary = detect_phase_transition(-as_float_array(curve, "curve", ndim=1), window, prominence)
    if summary.direction == "increase-then-decrease":
        return summary.transition_index
    return None


@dataclass(frozen=True)
class DilemmaReport:
    """Uniform-margin-improvement flag with its per-quantile evidence."""

    flag: bool
    per_quantile: dict  # q -> PhaseSummary of the train quantile-margin curve
    test_minimum_index: int = None
    test_checked: bool = False


def breiman_dilemma_flag(dyn, q_set=DEFAULT_Q_SET, window=DEFAULT_WINDOW,
                         prominence=DEFAULT_PROMINENCE):
    """Flag runs whose training margins improve monotonically at every quantile.

    The flag fires only on unanimity: every quantile-margin curve in q_set
    must classify as monotone-up, and, when test margins exist, the test
    error curve must additionally show an interior minimum (generalization
    got worse while training margins kept improving). Evidence is returned
    per quantile either way.
    """
    if not q_set:
        raise DataError("q_set must be non-empty")
    evidence = {}
    all_up = True
    for q in q_set:
        summary = detect_phase_transition(quantile_margin_curve(dyn, q), window, prominence)
        evidence[float(q)] = summary
        if summary.direction != "monotone-up":
            all_up = False
    test_min = None
    test_checked = dyn.has_test
    flag = all_up
    if flag and test_checked:
        test_min = interior_minimum(margin_error_curve(dyn, 0.0, "test"), window, prominence)
        flag = test_min is not None
    return DilemmaReport(
        flag=flag, per_quantile=evidence, test_minimum_index=test_min, test_checked=test_checked
    )


@dataclass(frozen=True)
class PredictorSelection:
    """Threshold and quantile whose training curves best track the test error."""

    gamma: float = None
    gamma_rho: float = None
    q: float = None
    q_rho: float = None
    constant_test_error: bool = False


def select_predictor(dyn, gamma_grid=None, q_grid=None, grid_size=DEFAULT_GRID_SIZE):
    """Pick gamma* and q* maximizing rank correlation with the test error curve.

    gamma* maximizes, over the threshold grid, the Spearman correlation
    between the train margin-error curve at that threshold and the test
    error curve (test margin error at 0). q* does the same over inverse
    quantile-margin curves. Constant test error carries no ranking signal,
    so no selection is made and the result says so.
    """
    if not dyn.has_test:
        raise AnalysisError("predictor selection needs test margins on every epoch")
    if dyn.num_epochs < 2:
        raise AnalysisError("predictor selection needs at least 2 epochs")
    test_err = margin_error_curve(dyn, 0.0, "test")
    if np.all(test_err == test_err[0]):
        return PredictorSelection(constant_test_error=True)
    if gamma_grid is None:
        gamma_grid = pooled_margin_grid(dyn, grid_size)
    if q_grid is None:
        q_grid = np.linspace(0.05, 0.99, grid_size)

    best_gamma, best_gamma_rho = None, None
    for g in np.asarray(gamma_grid, dtype=float):
        rho = spearman_rho(margin_error_curve(dyn, g, "train"), test_err)
        if np.isnan(rho):
            continue
        if best_gamma_rho is None or rho > best_gamma_rho:
            best_gamma, best_gamma_rho = float(g), float(rho)

    best_q, best_q_rho = None, None
    for q in np.asarray(q_grid, dtype=float):
        curve = inverse_quantile_curve(dyn, q)
        mask = np.isfinite(curve)
        if mask.sum() < 2:
            continue
        rho = spearman_rho(curve[mask], test_err[mask])
        if np.isnan(rho):
            continue
        if best_q_rho is None or rho > best_q_rho:
            best_q, best_q_rho = float(q), float(rho)

    return PredictorSelection(
        gamma=best_gamma, gamma_rho=best_gamma_rho, q=best_q, q_rho=best_q_rho
    )


@dataclass(frozen=True)
class StopSuggestion:
    """Suggested stopping epoch (global proxy minimum) plus all local minima."""

    epoch: int
    index: int
    local_minima_indices: tuple
    local_minima_epochs: tuple
    curve: np.ndarray = field(repr=False, default=None)


def _local_minima(values):
    """First indices of strictly-lower plateaus (endpoints included)."""
    n = values.shape[0]
    minima = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[j + 1] == values[i]:
            j += 1
        left_higher = i == 0 or values[i - 1] > values[i]
        right_higher = j == n - 1 or values[j + 1] > values[i]
        if left_higher and right_higher and not (i == 0 and j == n - 1):
            minima.append(i)
        i = j + 1
    return minima


def suggest_stop_from_curve(curve, epochs):
    """Earliest global minimum of a proxy curve, with all local minima listed.

    NaN entries mark epochs where the proxy is undefined and are skipped.
    """
    curve = np.asarray(curve, dtype=float)
    epochs = tuple(int(e) for e in epochs)
    if curve.shape[0] != len(epochs):
        raise DataError("curve and epochs must align")
    valid = np.isfinite(curve)
    if valid.sum() < 3:
        raise AnalysisError("early-stopping proxy must be defined on at least 3 epochs")
    vals = curve[valid]
    valid_idx = np.flatnonzero(valid)
    best = int(valid_idx[int(np.argmin(vals))])
    minima = [int(valid_idx[i]) for i in _local_minima(vals)]
    return StopSuggestion(
        epoch=epochs[best],
        index=best,
        local_minima_indices=tuple(minima),
        local_minima_epochs=tuple(epochs[i] for i in minima),
        curve=curve,
    )


def suggest_early_stop(dyn, q=None, gamma=None):
    """Early-stopping epoch from the inverse quantile-margin curve (given q)
    or from the train margin-error curve (given gamma)."""
    if (q is None) == (gamma is None):
        raise DataError("provide exactly one of q or gamma")
    if q is not None:
        proxy = inverse_quantile_curve(dyn, q)
    else:
        proxy = margin_error_curve(dyn, gamma, "train")
    return suggest_stop_from_curve(proxy, dyn.epochs)
