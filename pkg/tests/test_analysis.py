import math

import numpy as np
import pytest

from margindyn import (
    AnalysisError,
    DataError,
    RunRecord,
    breiman_dilemma_flag,
    correlation_heatmap,
    detect_phase_transition,
    normalize_run,
    margin_error_curve,
    pooled_margin_grid,
    select_predictor,
    spearman_rho,
    suggest_early_stop,
    suggest_stop_from_curve,
)
from margindyn.analysis import interior_minimum, moving_average


def dyn_from_margins(train_by_epoch, test_by_epoch=None):
    records = []
    for i, margins in enumerate(train_by_epoch):
        records.append(
            RunRecord(
                epoch=i + 1,
                train_margins=margins,
                lipschitz=1.0,
                test_margins=None if test_by_epoch is None else test_by_epoch[i],
            )
        )
    return normalize_run(records)


def shifted_margins(base, offsets):
    """Per-epoch margin arrays: the base sample shifted by each offset."""
    return [[v + off for v in base] for off in offsets]


class TestHeatmap:
    def test_identical_dynamics_diagonal_one(self):
        base = [-1.0, -0.2, 0.4, 1.3, 2.5]
        offsets = [0.0, 0.4, 1.0, 0.7, 0.2, -0.3]
        margins = shifted_margins(base, offsets)
        dyn = dyn_from_margins(margins, margins)
        grid = np.array([-0.5, 0.0, 0.8])
        heatmap = correlation_heatmap(dyn, grid, grid, with_kendall=True)
        for i in range(3):
            v = heatmap.values[i, i]
            assert math.isnan(v) or v == pytest.approx(1.0, abs=1e-12)
        assert any(
            heatmap.values[i, i] == pytest.approx(1.0, abs=1e-12) for i in range(3)
        )

    def test_reversed_dynamics_minus_one(self):
        # offsets chosen so the margin-error curve at 0.5 is strictly monotone
        base = [-2.0, -1.0, 0.0, 1.0]
        offsets = [0.0, 1.0, 2.0, 3.0]
        train = shifted_margins(base, offsets)
        test = shifted_margins(base, offsets[::-1])
        dyn = dyn_from_margins(train, test)
        grid = np.array([0.5])
        heatmap = correlation_heatmap(dyn, grid, grid, with_kendall=False)
        assert heatmap.values[0, 0] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_cell_by_cell_recomputation(self):
        rng = np.random.default_rng(60)
        train = [list(np.sort(rng.standard_normal(12))) for _ in range(8)]
        test = [list(np.sort(rng.standard_normal(9))) for _ in range(8)]
        dyn = dyn_from_margins(train, test)
        heatmap = correlation_heatmap(dyn, grid_size=7, with_kendall=True)
        for i, g1 in enumerate(heatmap.gamma1_grid):
            test_curve = margin_error_curve(dyn, g1, "test")
            for j, g2 in enumerate(heatmap.gamma2_grid):
                train_curve = margin_error_curve(dyn, g2, "train")
                want = spearman_rho(test_curve, train_curve)
                got = heatmap.values[i, j]
                if math.isnan(want):
                    assert math.isnan(got)
                else:
                    assert got == pytest.approx(want, abs=1e-12)

    def test_requires_test_margins(self):
        dyn = dyn_from_margins([[1.0, 2.0]] * 4)
        with pytest.raises(AnalysisError):
            correlation_heatmap(dyn)

    def test_grids_must_increase(self):
        margins = [[1.0, 2.0]] * 4
        dyn = dyn_from_margins(margins, margins)
        with pytest.raises(DataError):
            correlation_heatmap(dyn, np.array([1.0, 1.0]), np.array([0.0, 1.0]))

    def test_single_cell(self):
        base = [-1.0, 0.0, 1.0]
        offsets = [0.0, 0.5, 1.0, 0.2]
        margins = shifted_margins(base, offsets)
        dyn = dyn_from_margins(margins, margins)
        heatmap = correlation_heatmap(
            dyn, np.array([0.0]), np.array([0.0]), with_kendall=False
        )
        assert heatmap.values.shape == (1, 1)

    def test_thread_env_var_does_not_change_results(self, monkeypatch):
        rng = np.random.default_rng(67)
        margins = [list(np.sort(rng.standard_normal(10))) for _ in range(6)]
        dyn = dyn_from_margins(margins, margins)
        serial = correlation_heatmap(dyn, grid_size=5, with_kendall=True, threads=1)
        monkeypatch.setenv("MARGINDYN_THREADS", "4")
        threaded = correlation_heatmap(dyn, grid_size=5, with_kendall=True)
        np.testing.assert_array_equal(serial.values, threaded.values)
        np.testing.assert_array_equal(serial.kendall, threaded.kendall)

    def test_pooled_grid_strictly_increasing(self):
        rng = np.random.default_rng(61)
        margins = [list(np.sort(rng.standard_normal(20))) for _ in range(5)]
        dyn = dyn_from_margins(margins)
        grid = pooled_margin_grid(dyn, 15)
        assert np.all(np.diff(grid) > 0)
        pooled = np.concatenate(dyn.train)
        assert grid.min() == pooled.min() and grid.max() == pooled.max()


class TestPhaseDetection:
    def test_hand_peak(self):
        summary = detect_phase_transition([1.0, 2.0, 3.0, 2.0, 1.0], window=1)
        assert summary.direction == "increase-then-decrease"
        assert summary.transition_index == 2

    def test_monotone_up(self):
        summary = detect_phase_transition([1.0, 2.0, 3.0, 4.0, 5.0], window=1)
        assert summary.direction == "monotone-up"
        assert summary.transition_index is None

    def test_monotone_down(self):
        summary = detect_phase_transition([5.0, 4.0, 3.0, 2.0], window=1)
        assert summary.direction == "monotone-down"

    def test_flat(self):
        summary = detect_phase_transition([2.0, 2.0, 2.0], window=1)
        assert summary.direction == "flat"

    def test_noisy_hump_recovered_after_smoothing(self):
        rng = np.random.default_rng(62)
        t = np.arange(60, dtype=float)
        peak = 25
        curve = -((t - peak) ** 2) / 100.0 + rng.normal(0, 0.15, 60)
        summary = detect_phase_transition(curve, window=9, prominence=0.05)
        assert summary.direction == "increase-then-decrease"
        assert abs(summary.transition_index - peak) <= 1

    def test_scale_shift_invariance(self):
        rng = np.random.default_rng(63)
        for _ in range(30):
            curve = rng.integers(0, 20, size=12).astype(float)
            base = detect_phase_transition(curve, window=5)
            for a, b in ((2.0, 0.0), (0.5, 1.0), (4.0, -3.0)):
                other = detect_phase_transition(a * curve + b, window=5)
                assert other.direction == base.direction
                assert other.transition_index == base.transition_index

    def test_too_short_rejected(self):
        with pytest.raises(DataError):
            detect_phase_transition([1.0, 2.0])

    def test_window_smoothing(self):
        np.testing.assert_allclose(
            moving_average(np.array([0.0, 3.0, 6.0]), 3), [1.5, 3.0, 4.5]
        )

    def test_interior_minimum(self):
        assert interior_minimum([3.0, 1.0, 2.5], window=1) == 1
        assert interior_minimum([1.0, 2.0, 3.0], window=1) is None


class TestDilemmaFlag:
    def test_monotone_margins_and_u_shaped_test_error(self):
        # training margins improve linearly; test margins rise then collapse
        train = shifted_margins([0.0, 1.0, 2.0], np.linspace(0, 3, 9))
        test_offsets = [0.0, 0.5, 1.0, 1.5, 2.0, 1.5, 0.5, -0.5, -1.5]
        test = shifted_margins([-0.5, 0.5, 1.5], test_offsets)
        dyn = dyn_from_margins(train, test)
        report = breiman_dilemma_flag(dyn, q_set=(0.5, 0.9), window=1)
        assert report.flag
        assert report.test_minimum_index is not None
        assert all(s.direction == "monotone-up" for s in report.per_quantile.values())

    def test_interior_max_disables_flag(self):
        offsets = [0.0, 1.0, 2.0, 3.0, 2.0, 1.0]
        train = shifted_margins([0.0, 1.0, 2.0], offsets)
        test = shifted_margins([0.0, 1.0], [0.0] * 6)
        dyn = dyn_from_margins(train, test)
        report = breiman_dilemma_flag(dyn, q_set=(0.95,), window=1)
        assert not report.flag
        assert report.per_quantile[0.95].direction == "increase-then-decrease"

    def test_train_only_run_uses_unanimity_alone(self):
        train = shifted_margins([0.0, 1.0], np.linspace(0, 2, 6))
        dyn = dyn_from_margins(train)
        report = breiman_dilemma_flag(dyn, q_set=(0.5, 0.9), window=1)
        assert report.flag
        assert not report.test_checked

    def test_empty_qset_rejected(self):
        dyn = dyn_from_margins(shifted_margins([0.0, 1.0], [0, 1, 2]))
        with pytest.raises(DataError):
            breiman_dilemma_flag(dyn, q_set=())


class TestSelectPredictor:
    def test_planted_optimum(self):
        # test error rises then falls; train margins around gamma0=0 move so
        # that the train margin-error curve at 0 matches the test error exactly
        rng = np.random.default_rng(64)
        t_steps = 12
        test_error_target = np.array([5, 4, 3, 2, 1, 2, 3, 4, 5, 6, 7, 8]) / 10.0
        train, test = [], []
        for i in range(t_steps):
            k = int(round(test_error_target[i] * 10))
            margins = [-1.0] * k + [1.0] * (10 - k)
            train.append(margins)
            test.append(margins)
        dyn = dyn_from_margins(train, test)
        selection = select_predictor(dyn, gamma_grid=np.array([-2.0, 0.0, 2.0]))
        assert selection.gamma == 0.0
        assert selection.gamma_rho == pytest.approx(1.0)

    def test_constant_test_error_flagged(self):
        train = shifted_margins([0.0, 1.0], [0, 1, 2, 3])
        test = [[1.0, 2.0]] * 4
        dyn = dyn_from_margins(train, test)
        selection = select_predictor(dyn)
        assert selection.constant_test_error
        assert selection.gamma is None

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(65)
        train = [list(np.sort(rng.standard_normal(15))) for _ in range(10)]
        test = [list(np.sort(rng.standard_normal(15))) for _ in range(10)]
        dyn = dyn_from_margins(train, test)
        grid = pooled_margin_grid(dyn, 9)
        selection = select_predictor(dyn, gamma_grid=grid, q_grid=np.array([0.3, 0.6, 0.9]))
        test_err = margin_error_curve(dyn, 0.0, "test")
        best_gamma, best_rho = None, -np.inf
        for g in grid:
            rho = spearman_rho(margin_error_curve(dyn, g, "train"), test_err)
            if not math.isnan(rho) and rho > best_rho:
                best_gamma, best_rho = float(g), rho
        assert selection.gamma == best_gamma
        assert selection.gamma_rho == pytest.approx(best_rho, abs=1e-12)
        assert selection.q is not None and -1.0 <= selection.q_rho <= 1.0

    def test_requires_test(self):
        dyn = dyn_from_margins(shifted_margins([0.0, 1.0], [0, 1, 2]))
        with pytest.raises(AnalysisError):
            select_predictor(dyn)


class TestEarlyStop:
    def test_argmin(self):
        result = suggest_stop_from_curve(np.array([3.0, 1.0, 2.0]), (1, 2, 3))
        assert result.epoch == 2
        assert result.index == 1

    def test_tie_earliest(self):
        result = suggest_stop_from_curve(np.array([2.0, 1.0, 3.0, 1.0]), (1, 2, 3, 4))
        assert result.epoch == 2

    def test_w_shape_lists_both_minima(self):
        result = suggest_stop_from_curve(
            np.array([3.0, 1.0, 2.0, 0.5, 3.0]), (1, 2, 3, 4, 5)
        )
        assert result.local_minima_epochs == (2, 4)
        assert result.epoch == 4

    def test_nan_epochs_skipped(self):
        result = suggest_stop_from_curve(
            np.array([np.nan, 3.0, 1.0, 2.0]), (1, 2, 3, 4)
        )
        assert result.epoch == 3

    def test_all_undefined_rejected(self):
        with pytest.raises(AnalysisError):
            suggest_stop_from_curve(np.array([np.nan, np.nan, np.nan]), (1, 2, 3))

    def test_dyn_level_quantile_proxy(self):
        train = shifted_margins([1.0, 2.0], [0.0, 1.0, 2.0, 1.0, 0.5])
        dyn = dyn_from_margins(train)
        result = suggest_early_stop(dyn, q=0.9)
        # inverse quantile margin is smallest where margins are largest
        assert result.epoch == 3

    def test_dyn_level_gamma_proxy(self):
        train = [[0.5, 2.0], [1.5, 2.0], [0.2, 0.4]]
        dyn = dyn_from_margins(train)
        result = suggest_early_stop(dyn, gamma=1.0)
        assert result.epoch == 2

    def test_self_consistency_on_test_error(self):
        rng = np.random.default_rng(66)
        test = [list(np.sort(rng.standard_normal(30))) for _ in range(12)]
        train = [[1.0, 2.0]] * 12
        dyn = dyn_from_margins(train, test)
        curve = margin_error_curve(dyn, 0.0, "test")
        result = suggest_stop_from_curve(curve, dyn.epochs)
        assert result.index == int(np.argmin(curve))

    def test_exactly_one_proxy(self):
        dyn = dyn_from_margins(shifted_margins([1.0], [0, 1, 2]))
        with pytest.raises(DataError):
            suggest_early_stop(dyn)
        with pytest.raises(DataError):
            suggest_early_stop(dyn, q=0.5, gamma=1.0)
