"""Estimator-style wrappers so the analyses compose with scikit-learn tooling.

Each class follows the usual conventions: constructor stores hyperparameters
verbatim, fit() learns and returns self, learned state lands in trailing-
underscore attributes, and get_params/set_params come from BaseEstimator.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator

from . import analysis as _analysis
from .errors import AnalysisError, DataError
from .margins import (
    BoundParams,
    MarginDynamics,
    RampParams,
    fixed_threshold_bound,
    inverse_quantile_curve,
    margin_error_curve,
    margins_from_logits,
    normalize_run,
    quantile_margin,
    quantile_margin_bound,
    quantile_margin_curve,
)
from .network import NetworkSpec
from .norms import DEFAULT_MAX_ITERS, DEFAULT_SEED, DEFAULT_TOL, network_lipschitz
from .trainer import BlobSpec, TrainConfig, forward, train


class LipschitzEstimator(BaseEstimator):
    """Estimate a network's Lipschitz scale; transform divides margins by it.

    Parameters mirror network_lipschitz: method 'power' or 'l1', batchnorm
    folding mode, and the power-iteration knobs.
    """

    def __init__(self, method="power", bn_mode="rescale", max_iters=DEFAULT_MAX_ITERS,
                 tol=DEFAULT_TOL, seed=DEFAULT_SEED):
        self.method = method
        self.bn_mode = bn_mode
        self.max_iters = max_iters
        self.tol = tol
        self.seed = seed

    def fit(self, network, y=None):
        if not isinstance(network, NetworkSpec):
            raise DataError("LipschitzEstimator.fit expects a NetworkSpec")
        kwargs = {}
        if self.method == "power":
            kwargs = {"max_iters": self.max_iters, "tol": self.tol, "seed": self.seed}
        self.scale_, self.layer_estimates_ = network_lipschitz(
            network, method=self.method, bn_mode=self.bn_mode, **kwargs
        )
        return self

    def transform(self, raw_margins):
        """Normalize raw margins by the fitted scale."""
        if not hasattr(self, "scale_"):
            raise AnalysisError("LipschitzEstimator is not fitted")
        if self.scale_ <= 0:
            raise AnalysisError(f"fitted scale {self.scale_} is not positive")
        return np.asarray(raw_margins, dtype=np.float64) / self.scale_

    def fit_transform(self, network, raw_margins):
        return self.fit(network).transform(raw_margins)


class MarginDynamicsAnalyzer(BaseEstimator):
    """Full margin-dynamics diagnosis of one training run.

    fit() accepts either a MarginDynamics or an iterable of per-epoch
    records (anything exposing epoch / train_margins / lipschitz /
    test_margins). With gamma='auto' the threshold and quantile are selected
    by rank correlation against the test error curve, which requires test
    margins; otherwise the configured q and gamma are used as given.
    """

    def __init__(self, q=0.95, gamma="auto", grid_size=_analysis.DEFAULT_GRID_SIZE,
                 window=_analysis.DEFAULT_WINDOW, prominence=_analysis.DEFAULT_PROMINENCE,
                 q_set=_analysis.DEFAULT_Q_SET, complexity_constant=0.0, delta=0.05,
                 tau=0.01, input_bound=1.0, depth=1):
        self.q = q
        self.gamma = gamma
        self.grid_size = grid_size
        self.window = window
        self.prominence = prominence
        self.q_set = q_set
        self.complexity_constant = complexity_constant
        self.delta = delta
        self.tau = tau
        self.input_bound = input_bound
        self.depth = depth

    def fit(self, run, y=None, num_classes=None):
        dyn = run if isinstance(run, MarginDynamics) else normalize_run(run)
        self.dynamics_ = dyn
        self.num_classes_ = int(num_classes) if num_classes else 2

        # threshold/quantile selection
        self.selection_ = None
        self.auto_selection_unavailable_ = False
        q_used, gamma_used = self.q, None
        if self.gamma == "auto":
            if dyn.has_test and dyn.num_epochs >= 2:
                self.selection_ = _analysis.select_predictor(dyn, grid_size=self.grid_size)
                if self.selection_.gamma is not None:
                    gamma_used = self.selection_.gamma
                if self.selection_.q is not None:
                    q_used = self.selection_.q
            else:
                self.auto_selection_unavailable_ = True
        elif self.gamma is not None:
            gamma_used = float(self.gamma)
        self.q_used_ = float(q_used)
        self.gamma_used_ = gamma_used

        # curves
        self.quantile_margin_curve_ = quantile_margin_curve(dyn, self.q_used_)
        self.inverse_quantile_curve_ = inverse_quantile_curve(dyn, self.q_used_)
        self.train_error_curve_ = margin_error_curve(dyn, 0.0, "train")
        self.gamma_curve_ = (
            margin_error_curve(dyn, gamma_used, "train") if gamma_used is not None else None
        )
        self.test_error_curve_ = (
            margin_error_curve(dyn, 0.0, "test") if dyn.has_test else None
        )

        # phase transitions and the dilemma flag
        self.phase_ = None
        self.dilemma_ = None
        self.stop_ = None
        if dyn.num_epochs >= 3:
            self.phase_ = _analysis.detect_phase_transition(
                self.quantile_margin_curve_, self.window, self.prominence
            )
            self.dilemma_ = _analysis.breiman_dilemma_flag(
                dyn, self.q_set, self.window, self.prominence
            )
            if np.isfinite(self.inverse_quantile_curve_).sum() >= 3:
                self.stop_ = _analysis.suggest_stop_from_curve(
                    self.inverse_quantile_curve_, dyn.epochs
                )
        self.stop_epoch_ = self.stop_.epoch if self.stop_ is not None else None
        return self

    def _require_fitted(self):
        if not hasattr(self, "dynamics_"):
            raise AnalysisError("MarginDynamicsAnalyzer is not fitted")

    def heatmap(self, grid_size=None, with_kendall=True, threads=None):
        self._require_fitted()
        return _analysis.correlation_heatmap(
            self.dynamics_,
            grid_size=grid_size or self.grid_size,
            with_kendall=with_kendall,
            threads=threads,
        )

    def bound_params(self):
        self._require_fitted()
        n = max(len(a) for a in self.dynamics_.train)
        return BoundParams(
            num_classes=max(2, getattr(self, "num_classes_", 2)),
            n=n,
            delta=self.delta,
            complexity_constant=self.complexity_constant,
            tau=self.tau,
            input_bound=self.input_bound,
            depth=self.depth,
        )

    def bound_tables(self):
        """Per-epoch bound evaluations at the analyzer's threshold and quantile."""
        self._require_fitted()
        dyn = self.dynamics_
        params = self.bound_params()
        fixed_rows, quantile_rows = [], []
        gamma = self.gamma_used_
        for epoch in dyn.epochs:
            if gamma is not None and gamma > 0:
                fb = fixed_threshold_bound(dyn, epoch, RampParams(0.0, gamma), params)
                fixed_rows.append(
                    {
                        "epoch": epoch,
                        "value": fb.value,
                        "empirical_term": fb.empirical_term,
                        "complexity_term": fb.complexity_term,
                        "confidence_term": fb.confidence_term,
                    }
                )
            idx = dyn.epoch_index(epoch)
            gamma_hat = quantile_margin(dyn.train[idx], self.q_used_)
            if gamma_hat > 0:
                qb = quantile_margin_bound(dyn, epoch, self.q_used_, params)
                quantile_rows.append(
                    {
                        "epoch": epoch,
                        "value": qb.value,
                        "base_constant": qb.base_constant,
                        "complexity_term": qb.complexity_term,
                        "quantile_margin": qb.quantile_margin,
                        "precondition_ok": qb.precondition_ok,
                    }
                )
            else:
                quantile_rows.append(
                    {"epoch": epoch, "value": None, "quantile_margin": gamma_hat,
                     "precondition_ok": False}
                )
        return {"fixed_threshold": fixed_rows, "quantile": quantile_rows}

    def report(self, include_bounds=True):
        """Plain-dict summary suitable for JSON serialization."""
        self._require_fitted()
        dyn = self.dynamics_

        def clean(v):
            if v is None:
                return None
            v = float(v)
            return v if math.isfinite(v) else None

        report = {
            "schema_version": 1,
            "epochs": list(dyn.epochs),
            "q": self.q_used_,
            "gamma": clean(self.gamma_used_),
            "selection": None,
            "stop": None,
            "phase": None,
            "dilemma": None,
        }
        if self.selection_ is not None:
            report["selection"] = {
                "gamma": clean(self.selection_.gamma),
                "gamma_rho": clean(self.selection_.gamma_rho),
                "q": clean(self.selection_.q),
                "q_rho": clean(self.selection_.q_rho),
                "constant_test_error": self.selection_.constant_test_error,
            }
        if self.stop_ is not None:
            report["stop"] = {
                "epoch": self.stop_.epoch,
                "local_minima_epochs": list(self.stop_.local_minima_epochs),
                "proxy": "inverse-quantile-margin",
            }
        if self.phase_ is not None:
            report["phase"] = {
                "direction": self.phase_.direction,
                "transition_epoch": (
                    dyn.epochs[self.phase_.transition_index]
                    if self.phase_.transition_index is not None
                    else None
                ),
                "prominence": clean(self.phase_.prominence),
            }
        if self.dilemma_ is not None:
            report["dilemma"] = {
                "flag": self.dilemma_.flag,
                "test_checked": self.dilemma_.test_checked,
                "test_minimum_epoch": (
                    dyn.epochs[self.dilemma_.test_minimum_index]
                    if self.dilemma_.test_minimum_index is not None
                    else None
                ),
                "per_quantile": {
                    str(q): {
                        "direction": s.direction,
                        "transition_epoch": (
                            dyn.epochs[s.transition_index]
                            if s.transition_index is not None
                            else None
                        ),
                        "prominence": clean(s.prominence),
                    }
                    for q, s in self.dilemma_.per_quantile.items()
                },
            }
        if include_bounds:
            report["bounds"] = self.bound_tables()
        return report


class ToyNetClassifier(BaseEstimator):
    """The toy trainer behind a fit/predict interface.

    fit(X, y) runs the full seeded SGD loop; per-epoch snapshots (raw
    margins, Lipschitz scale, errors) land in snapshots_. Pass eval_X/eval_y
    to also capture test margins each epoch.
    """

    def __init__(self, hidden=(8,), conv_channels=0, conv_size=5, conv_stride=1,
                 epochs=50, learning_rate=0.05, batch_size=32, seed=0,
                 norm_method="power", with_bias=False):
        self.hidden = hidden
        self.conv_channels = conv_channels
        self.conv_size = conv_size
        self.conv_stride = conv_stride
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.norm_method = norm_method
        self.with_bias = with_bias

    def fit(self, X, y, eval_X=None, eval_y=None):
        from . import trainer as _trainer

        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError("X must be (n, dim) with one label per row")
        classes = np.unique(y)
        k = int(classes.max()) + 1
        if k < 2:
            raise DataError("need at least 2 classes")
        self.classes_ = np.arange(k)

        config = TrainConfig(
            data=BlobSpec(num_classes=k, n_train=X.shape[0], dim=X.shape[1]),
            hidden=tuple(self.hidden),
            conv_channels=self.conv_channels,
            conv_size=self.conv_size,
            conv_stride=self.conv_stride,
            corrupt_fraction=0.0,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.seed,
            norm_method=self.norm_method,
            with_bias=self.with_bias,
        )
        rng = np.random.default_rng(self.seed)
        net = _trainer.init_net(config, X.shape[1], k, rng)
        snapshots = []
        n = X.shape[0]
        for epoch in range(1, self.epochs + 1):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = perm[start : start + self.batch_size]
                _, conv_g, dense_g, bias_g = _trainer.backward(net, X[batch], y[batch])
                _trainer._apply_sgd(net, conv_g, dense_g, bias_g, self.learning_rate)
            logits = forward(net, X)
            margins = margins_from_logits(logits, y)
            snapshot = {
                "epoch": epoch,
                "train_margins": margins,
                "lipschitz": _trainer.lipschitz_scale(net, X.shape[1], k, self.norm_method),
                "train_error": float(np.mean(margins <= 0)),
            }
            if eval_X is not None and eval_y is not None:
                eval_logits = forward(net, np.asarray(eval_X, dtype=np.float64))
                eval_margins = margins_from_logits(eval_logits, np.asarray(eval_y))
                snapshot["test_margins"] = eval_margins
                snapshot["test_error"] = float(np.mean(eval_margins <= 0))
            snapshots.append(snapshot)
        self.net_ = net
        self.snapshots_ = snapshots
        return self

    def decision_function(self, X):
        if not hasattr(self, "net_"):
            raise AnalysisError("ToyNetClassifier is not fitted")
        return forward(self.net_, np.asarray(X, dtype=np.float64))

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)


def train_run(config):
    """Functional entry point: run the toy trainer on a TrainConfig."""
    return train(config)
