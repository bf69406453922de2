"""Margins, ramp loss, margin-error statistics, and generalization-bound evaluators.

The margin of a prediction is the correct-class logit minus the largest
other-class logit; it is negative exactly when the prediction is wrong (a
tie counts as an error under the <= threshold convention used throughout).
Margins become comparable across epochs once divided by the network's
Lipschitz scale; MarginDynamics holds those normalized margins per epoch.

Threshold convention: margin error, the empirical CDF, and the quantile
margin all use <= (right-continuous step functions). With continuous
margins the choice is measure-zero, but it is fixed here once and used
consistently.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError, DataError, ShapeError
from .validation import as_float_array, check_probability, check_sorted


def margin(logits, label):
    """Correct-class logit minus the largest other-class logit."""
    logits = as_float_array(logits, "logits", ndim=1)
    k = logits.shape[0]
    if k < 2:
        raise DataError(f"margins need at least 2 classes, got {k}")
    label = int(label)
    if not 0 <= label < k:
        raise DataError(f"label {label} out of range for {k} classes")
    others = np.delete(logits, label)
    return float(logits[label] - others.max())


def margins_from_logits(logits, labels):
    """Vectorized margins for a (n, K) logit matrix and integer labels."""
    logits = as_float_array(logits, "logits", ndim=2)
    n, k = logits.shape
    if k < 2:
        raise DataError(f"margins need at least 2 classes, got {k}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError("labels out of class range")
    rows = np.arange(n)
    own = logits[rows, labels]
    masked = logits.copy()
    masked[rows, labels] = -np.inf
    return own - masked.max(axis=1)


@dataclass(frozen=True)
class RampParams:
    """Two thresholds gamma2 > gamma1 >= 0 and their gap delta."""

    gamma1: float
    gamma2: float

    def __post_init__(self):
        g1, g2 = float(self.gamma1), float(self.gamma2)
        if not (g2 > g1 >= 0):
            raise DataError(f"need gamma2 > gamma1 >= 0, got ({g1}, {g2})")
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "gamma2", g2)

    @property
    def delta(self):
        return self.gamma2 - self.gamma1


def ramp_loss(zeta, params):
    """Piecewise-linear loss: 1 below gamma1, 0 above gamma2, linear between."""
    z = float(zeta)
    if z < params.gamma1:
        return 1.0
    if z > params.gamma2:
        return 0.0
    return -(z - params.gamma2) / params.delta


def margin_error(zeta, gamma):
    """Indicator that the margin is at most gamma (at gamma=0: classification error)."""
    return 1.0 if float(zeta) <= float(gamma) else 0.0


def empirical_margin_cdf(margins_sorted, gamma):
    """Fraction of margins <= gamma, by binary search over the sorted array."""
    arr = check_sorted(margins_sorted)
    return float(np.searchsorted(arr, float(gamma), side="right")) / arr.shape[0]


def quantile_margin(margins_sorted, q):
    """Smallest sample value at which the empirical margin CDF reaches q.

    q=0 gives the smallest margin. Agrees exactly with scanning every sample
    value for the first one whose CDF is >= q.
    """
    arr = check_sorted(margins_sorted)
    q = check_probability(q, "quantile level")
    n = arr.shape[0]
    k = int(math.ceil(q * n)) - 1
    k = min(max(k, 0), n - 1)
    # settle float rounding of q*n against the defining comparison (k+1)/n >= q
    while k > 0 and k / n >= q:
        k -= 1
    while k < n - 1 and (k + 1) / n < q:
        k += 1
    return float(arr[k])


@dataclass(frozen=True)
class MarginDynamics:
    """Per-epoch sorted normalized margins for train (and optionally test) sets.

    test may be None (no test margins anywhere) or a tuple with one entry
    per epoch, where individual entries may be None for epochs that were not
    evaluated on the test set.
    """

    epochs: tuple
    train: tuple  # sorted ndarray per epoch
    lipschitz: tuple  # scale used for each epoch's normalization
    test: tuple = None  # sorted ndarray (or None) per epoch, or None entirely

    def __post_init__(self):
        if len(self.epochs) == 0:
            raise DataError("dynamics need at least one epoch")
        if not (len(self.train) == len(self.epochs) == len(self.lipschitz)):
            raise DataError("epochs, train margins, and scales must align")
        if self.test is not None and len(self.test) != len(self.epochs):
            raise DataError("test margins must align with epochs")
        object.__setattr__(self, "epochs", tuple(int(e) for e in self.epochs))
        object.__setattr__(self, "lipschitz", tuple(float(s) for s in self.lipschitz))

    @property
    def num_epochs(self):
        return len(self.epochs)

    @property
    def has_test(self):
        """True when every epoch carries test margins."""
        return self.test is not None and all(a is not None for a in self.test)

    def epoch_index(self, epoch):
        try:
            return self.epochs.index(int(epoch))
        except ValueError:
            raise DataError(f"epoch {epoch} not present in dynamics") from None


def normalize_run(records):
    """Build MarginDynamics from raw per-epoch records by dividing margins by the scale.

    Each record must expose epoch, train_margins, lipschitz, and optionally
    test_margins. Epochs keep their input order; duplicates are rejected.
    Epochs without test margins are allowed; analyses that need the test set
    reject such runs themselves.
    """
    epochs, train, test, scales = [], [], [], []
    seen = set()
    for rec in records:
        epoch = int(rec.epoch)
        if epoch in seen:
            raise DataError(f"duplicate epoch {epoch} in run")
        seen.add(epoch)
        scale = float(rec.lipschitz) if rec.lipschitz is not None else None
        if scale is None or scale <= 0 or not math.isfinite(scale):
            raise DataError(f"epoch {epoch}: normalization scale must be positive, got {scale}")
        tr = as_float_array(rec.train_margins, f"epoch {epoch} train margins", ndim=1)
        if tr.size == 0:
            raise DataError(f"epoch {epoch}: empty train margins")
        rec_test = getattr(rec, "test_margins", None)
        epochs.append(epoch)
        scales.append(scale)
        train.append(np.sort(tr / scale))
        if rec_test is None:
            test.append(None)
        else:
            te = as_float_array(rec_test, f"epoch {epoch} test margins", ndim=1)
            if te.size == 0:
                raise DataError(f"epoch {epoch}: empty test margins")
            test.append(np.sort(te / scale))
    if not epochs:
        raise DataError("run has no epochs")
    return MarginDynamics(
        epochs=tuple(epochs),
        train=tuple(train),
        lipschitz=tuple(scales),
        test=tuple(test) if any(a is not None for a in test) else None,
    )


def margin_error_curve(dyn, gamma, which="train"):
    """Per-epoch fraction of normalized margins <= gamma (NaN where absent)."""
    if which == "train":
        arrays = dyn.train
    elif which == "test":
        if dyn.test is None:
            raise AnalysisError("dynamics carry no test margins")
        arrays = dyn.test
    else:
        raise DataError(f"which must be 'train' or 'test', got {which!r}")
    return np.array(
        [empirical_margin_cdf(a, gamma) if a is not None else np.nan for a in arrays]
    )


def quantile_margin_curve(dyn, q, which="train"):
    """Per-epoch quantile margin (NaN where the set is absent)."""
    if which == "train":
        arrays = dyn.train
    else:
        if dyn.test is None:
            raise AnalysisError("dynamics carry no test margins")
        arrays = dyn.test
    return np.array([quantile_margin(a, q) if a is not None else np.nan for a in arrays])


def inverse_quantile_curve(dyn, q, which="train"):
    """Per-epoch 1 / quantile margin; NaN where the quantile margin is <= 0.

    The argmin of this curve is the early-stopping candidate.
    """
    gammas = quantile_margin_curve(dyn, q, which)
    out = np.full(gammas.shape, np.nan)
    positive = gammas > 0
    out[positive] = 1.0 / gammas[positive]
    return out


@dataclass(frozen=True)
class BoundParams:
    """Knobs shared by the bound evaluators.

    complexity_constant stands in for the class-complexity term, which is
    not computable here; the default 0 turns the evaluators into pure
    empirical-trend diagnostics. input_bound is the radius M assumed for
    inputs, depth is the layer count, tau the quantile-margin floor.
    """

    num_classes: int = 2
    n: int = 1
    delta: float = 0.05
    complexity_constant: float = 0.0
    tau: float = 0.01
    input_bound: float = 1.0
    depth: int = 1

    def __post_init__(self):
        if int(self.n) < 1:
            raise DataError(f"sample count must be >= 1, got {self.n}")
        if int(self.num_classes) < 2:
            raise DataError(f"num_classes must be >= 2, got {self.num_classes}")
        # delta = 1 is allowed so the confidence term can be switched off
        if not (0.0 < float(self.delta) <= 1.0):
            raise DataError(f"delta must lie in (0, 1], got {self.delta}")
        if float(self.complexity_constant) < 0:
            raise DataError("complexity_constant must be >= 0")
        if float(self.tau) <= 0:
            raise DataError(f"tau must be > 0, got {self.tau}")
        if float(self.input_bound) <= 0:
            raise DataError(f"input_bound must be > 0, got {self.input_bound}")
        if int(self.depth) < 1:
            raise DataError(f"depth must be >= 1, got {self.depth}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "depth", int(self.depth))
        for name in ("delta", "complexity_constant", "tau", "input_bound"):
            object.__setattr__(self, name, float(getattr(self, name)))


@dataclass(frozen=True)
class FixedThresholdBound:
    """Margin-error bound at a fixed threshold pair, with its three terms exposed.

    value = empirical_term + complexity_term + confidence_term, where the
    empirical term is the training margin error at gamma2, the complexity
    term is complexity_constant / (gamma2 - gamma1), and the confidence term
    is sqrt(log(1/delta) / (2n)). The empirical and complexity terms move in
    opposite directions as gamma2 grows, which is the trade-off this
    breakdown makes visible.
    """

    value: float
    empirical_term: float
    complexity_term: float
    confidence_term: float
    epoch: int
    params: RampParams


def fixed_threshold_bound(dyn, epoch, ramp, params):
    """Evaluate the fixed-threshold margin bound at one epoch of the dynamics."""
    idx = dyn.epoch_index(epoch)
    empirical = empirical_margin_cdf(dyn.train[idx], ramp.gamma2)
    complexity = params.complexity_constant / ramp.delta
    confidence = math.sqrt(math.log(1.0 / params.delta) / (2.0 * params.n))
    return FixedThresholdBound(
        value=empirical + complexity + confidence,
        empirical_term=empirical,
        complexity_term=complexity,
        confidence_term=confidence,
        epoch=int(epoch),
        params=ramp,
    )


@dataclass(frozen=True)
class QuantileMarginBound:
    """Quantile-margin bound value with its constant broken out.

    value = base_constant + complexity_term, where base_constant
    = q + sqrt(log(2/delta) / (2n)) + sqrt(log(log2(4(M + depth)/tau)) / n)
    and complexity_term = complexity_constant / quantile_margin. If the
    epoch's quantile margin does not exceed tau, the bound's precondition is
    violated and the flag says so; the value is still reported.
    """

    value: float
    base_constant: float
    complexity_term: float
    quantile: float
    quantile_margin: float
    precondition_ok: bool
    epoch: int


def quantile_margin_bound(dyn, epoch, q, params):
    """Evaluate the quantile-margin bound at one epoch of the dynamics.

    Logarithms are natural except for the inner log2, matching the constant's
    definition. Raises if the quantile margin is not positive, since the
    complexity term is meaningless there.
    """
    idx = dyn.epoch_index(epoch)
    q = check_probability(q, "quantile level")
    gamma_hat = quantile_margin(dyn.train[idx], q)
    if gamma_hat <= 0:
        raise AnalysisError(
            f"epoch {epoch}: quantile margin at q={q} is {gamma_hat:.6g}; "
            "the bound needs a positive quantile margin"
        )
    inner = math.log2(4.0 * (params.input_bound + params.depth) / params.tau)
    if inner <= 1.0:
        raise DataError(
            "input_bound, depth, and tau make the iterated logarithm non-positive"
        )
    base = (
        q
        + math.sqrt(math.log(2.0 / params.delta) / (2.0 * params.n))
        + math.sqrt(math.log(inner) / params.n)
    )
    complexity = params.complexity_constant / gamma_hat
    return QuantileMarginBound(
        value=base + complexity,
        base_constant=base,
        complexity_term=complexity,
        quantile=q,
        quantile_margin=gamma_hat,
        precondition_ok=gamma_hat > params.tau,
        epoch=int(epoch),
    )
