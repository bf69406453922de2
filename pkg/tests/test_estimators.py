import numpy as np
import pytest
from sklearn.base import clone

from margindyn import (
    AnalysisError,
    BlobSpec,
    DenseLayer,
    LipschitzEstimator,
    MarginDynamicsAnalyzer,
    NetworkSpec,
    RunRecord,
    ToyNetClassifier,
    make_blobs,
    normalize_run,
)


def tiny_network(scale=2.0):
    return NetworkSpec(
        layers=(DenseLayer(weights=scale * np.eye(3), name="d0"),),
        input_shape=(3,),
        num_classes=3,
    )


class TestLipschitzEstimator:
    def test_fit_sets_scale(self):
        est = LipschitzEstimator(method="power").fit(tiny_network(2.0))
        assert est.scale_ == pytest.approx(2.0, rel=1e-9)
        assert len(est.layer_estimates_) == 1

    def test_transform_normalizes(self):
        est = LipschitzEstimator().fit(tiny_network(4.0))
        np.testing.assert_allclose(est.transform([2.0, 8.0]), [0.5, 2.0], rtol=1e-9)

    def test_unfitted_transform_rejected(self):
        with pytest.raises(AnalysisError):
            LipschitzEstimator().transform([1.0])

    def test_get_set_params_round_trip(self):
        est = LipschitzEstimator(method="l1", tol=1e-7)
        params = est.get_params()
        assert params["method"] == "l1"
        cloned = clone(est)
        assert cloned.get_params() == params
        est.set_params(method="power")
        assert est.method == "power"


def synthetic_records(t=20, overfit_at=8):
    """Margins improve overall, but the top decile degrades after overfit_at
    while the test error curve turns upward there."""
    rng = np.random.default_rng(90)
    records = []
    base = np.sort(rng.uniform(-1.0, 1.0, 60))
    for epoch in range(1, t + 1):
        low_gain = 0.08 * epoch
        high_gain = 0.2 * min(epoch, overfit_at) - 0.08 * max(0, epoch - overfit_at)
        train = base + low_gain
        train[40:] = base[40:] + high_gain
        err = 0.3 - 0.02 * min(epoch, overfit_at) + 0.03 * max(0, epoch - overfit_at)
        k = max(1, int(round(err * 50)))
        test = np.concatenate([np.full(k, -0.5), np.full(50 - k, 1.0)])
        records.append(
            RunRecord(
                epoch=epoch,
                train_margins=list(np.sort(train)),
                test_margins=list(test),
                lipschitz=1.0 + 0.05 * epoch,
            )
        )
    return records


class TestMarginDynamicsAnalyzer:
    def test_fit_produces_report(self):
        analyzer = MarginDynamicsAnalyzer(q=0.9, gamma="auto", grid_size=12)
        analyzer.fit(synthetic_records(), num_classes=3)
        report = analyzer.report()
        assert report["schema_version"] == 1
        assert report["stop"] is not None
        assert report["dilemma"] is not None
        assert report["selection"] is not None
        assert analyzer.stop_epoch_ == report["stop"]["epoch"]
        assert report["bounds"]["quantile"], "quantile bound table should not be empty"

    def test_auto_without_test_falls_back(self):
        records = [
            RunRecord(epoch=i, train_margins=[0.1 * i, 0.2 * i + 0.1], lipschitz=1.0)
            for i in range(1, 6)
        ]
        analyzer = MarginDynamicsAnalyzer(q=0.8, gamma="auto").fit(records)
        assert analyzer.auto_selection_unavailable_
        assert analyzer.q_used_ == 0.8
        assert analyzer.gamma_used_ is None

    def test_explicit_gamma_respected(self):
        analyzer = MarginDynamicsAnalyzer(q=0.9, gamma=0.5).fit(synthetic_records())
        assert analyzer.gamma_used_ == 0.5
        assert analyzer.gamma_curve_ is not None

    def test_accepts_prebuilt_dynamics(self):
        dyn = normalize_run(synthetic_records())
        analyzer = MarginDynamicsAnalyzer(gamma=1.0).fit(dyn)
        assert analyzer.dynamics_ is dyn

    def test_heatmap_accessor(self):
        analyzer = MarginDynamicsAnalyzer(grid_size=6).fit(synthetic_records())
        heatmap = analyzer.heatmap(with_kendall=False)
        assert heatmap.values.shape[0] == heatmap.gamma1_grid.size

    def test_report_is_json_serializable(self):
        import json

        analyzer = MarginDynamicsAnalyzer(grid_size=8).fit(synthetic_records())
        json.dumps(analyzer.report())

    def test_params_clone(self):
        analyzer = MarginDynamicsAnalyzer(q=0.7, window=3)
        assert clone(analyzer).get_params()["q"] == 0.7


class TestToyNetClassifier:
    def test_fit_predict_separable(self):
        blobs = make_blobs(BlobSpec(num_classes=3, n_train=90, n_test=60, dim=6,
                                    separation=8.0, seed=11))
        clf = ToyNetClassifier(hidden=(16,), epochs=40, learning_rate=0.05, seed=1)
        clf.fit(blobs.x_train, blobs.y_train, eval_X=blobs.x_test, eval_y=blobs.y_test)
        accuracy = np.mean(clf.predict(blobs.x_test) == blobs.y_test)
        assert accuracy > 0.95
        assert len(clf.snapshots_) == 40
        assert clf.snapshots_[-1]["lipschitz"] > 0
        assert "test_margins" in clf.snapshots_[-1]

    def test_snapshots_feed_analyzer(self):
        blobs = make_blobs(BlobSpec(num_classes=2, n_train=40, n_test=20, dim=4,
                                    separation=6.0, seed=12))
        clf = ToyNetClassifier(hidden=(8,), epochs=10, seed=2)
        clf.fit(blobs.x_train, blobs.y_train, eval_X=blobs.x_test, eval_y=blobs.y_test)
        records = [
            RunRecord(
                epoch=s["epoch"],
                train_margins=list(s["train_margins"]),
                test_margins=list(s["test_margins"]),
                lipschitz=s["lipschitz"],
            )
            for s in clf.snapshots_
        ]
        dyn = normalize_run(records)
        assert dyn.num_epochs == 10

    def test_decision_function_shape(self):
        blobs = make_blobs(BlobSpec(num_classes=3, n_train=30, n_test=9, dim=5, seed=13))
        clf = ToyNetClassifier(hidden=(4,), epochs=2, seed=3)
        clf.fit(blobs.x_train, blobs.y_train)
        assert clf.decision_function(blobs.x_test).shape == (9, 3)

    def test_get_params(self):
        clf = ToyNetClassifier(hidden=(4,), epochs=7)
        assert clf.get_params()["epochs"] == 7
        assert clone(clf).get_params()["hidden"] == (4,)
