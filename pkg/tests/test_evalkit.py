import numpy as np
import pandas as pd
import pytest
from scipy.optimize import linear_sum_assignment

from tidb.core.constants import SWEEP_CSV_HEADER
from tidb.core.errors import CoverageError, InputError
from tidb.engine.decoder import BarPointerDecoder
from tidb.engine.evalkit import (
    SweepModel, SweepTrack, bootstrap_ci, bpm_bucket, check_tempo_bins, check_tempo_generalisation, exclude_warmup,
    f_measure, match_events, run_sweep, score_track, summarize, tempo_bin_accuracy, uniform_baseline,
)
from tidb.engine.scaling import build_scale_grid
from tidb.models.config_models import EvalConfig

SMALL_GRID = dict(tau0=0.32, T=4, S=3, r=20, B=1, M=4)


def optimal_matches(est, ann, tol):
    if len(est) == 0 or len(ann) == 0:
        return 0
    cost = (np.abs(np.subtract.outer(est, ann)) > tol + 1e-9).astype(float)
    rows, cols = linear_sum_assignment(cost)
    return int((cost[rows, cols] == 0).sum())


class TestFMeasure:

    def test_identical(self):
        result = f_measure([1, 3, 5], [1, 3, 5])
        assert (result.precision, result.recall, result.f1) == (1.0, 1.0, 1.0)
        assert result.matched == 3

    def test_uniform_shift_within_tolerance(self):
        ann = [1.0, 3.0, 5.0]
        assert f_measure([t + 0.05 for t in ann], ann).f1 == 1.0

    def test_half_recall(self):
        result = f_measure([1, 2], [1, 2, 3, 4])
        assert result.precision == 1.0
        assert result.recall == 0.5
        assert result.f1 == pytest.approx(2 / 3)
        assert (result.false_pos, result.false_neg) == (0, 2)

    def test_tolerance_edge_is_closed(self):
        assert f_measure([1.07], [1.0]).matched == 1
        assert f_measure([1.0701], [1.0]).matched == 0

    def test_empty_conventions(self):
        assert f_measure([], []).f1 == 1.0
        assert f_measure([], [1.0]).f1 == 0.0
        assert f_measure([1.0], []).f1 == 0.0

    def test_one_to_one(self):
        result = f_measure([0.98, 1.0, 1.02], [1.0])
        assert result.matched == 1
        assert result.false_pos == 2

    def test_tie_goes_to_earlier_estimate(self):
        assert match_events(np.array([0.75, 1.25]), np.array([1.0]), tol=0.5) == [(0, 0)]

    def test_unsorted_input(self):
        with pytest.raises(InputError):
            f_measure([2.0, 1.0], [1.0])
        with pytest.raises(InputError):
            f_measure([1.0], [3.0, 2.0])

    def test_symmetry_and_optimal_gap(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            ann = np.sort(rng.uniform(0, 10, size=rng.integers(0, 15)))
            est = np.sort(rng.uniform(0, 10, size=rng.integers(0, 15)))
            forward = f_measure(est, ann)
            backward = f_measure(ann, est)
            assert forward.precision == backward.recall
            assert forward.recall == backward.precision
            best = optimal_matches(est, ann, 0.07)
            if len(est) + len(ann):
                optimal_f1 = 2 * best / (len(est) + len(ann))
                assert optimal_f1 - forward.f1 <= 0.02

    def test_adding_a_matched_estimate_keeps_recall(self):
        ann = [1.0, 2.0, 3.0]
        before = f_measure([1.0], ann)
        after = f_measure([1.0, 2.01], ann)
        assert after.recall >= before.recall

    def test_summarize_pools_counts(self):
        per_track = {"a": f_measure([1, 2], [1, 2]), "b": f_measure([1], [1, 2])}
        total = summarize(per_track)
        assert total.matched == 3 and total.false_neg == 1
        assert total.recall == pytest.approx(0.75)
        assert set(total.per_track) == {"a", "b"}


class TestWarmup:

    def test_first_downbeat_inside_warmup(self):
        est, ann = exclude_warmup([0.5, 2.5, 4.5], [0.52, 2.5, 4.5], warmup_seconds=2.0)
        assert ann == [2.5, 4.5]
        assert est == [2.5, 4.5]

    def test_first_downbeat_after_warmup(self):
        est, ann = exclude_warmup([3.0], [3.0], warmup_seconds=2.0)
        assert (est, ann) == ([3.0], [3.0])

    def test_score_track_ignores_warmup_miss(self):
        assert score_track([2.5, 4.5], [0.5, 2.5, 4.5], warmup_seconds=2.0).f1 == 1.0
        assert score_track([2.5, 4.5], [0.5, 2.5, 4.5]).f1 < 1.0


class TestBootstrap:

    def test_constant_scores(self):
        lo, hi = bootstrap_ci([0.7] * 20, iterations=500)
        assert lo == pytest.approx(0.7) and hi == pytest.approx(0.7)

    def test_binary_scores(self):
        scores = [0.0, 1.0] * 500
        lo, hi = bootstrap_ci(scores, iterations=2000, seed=1)
        assert 0.46 <= lo <= 0.48
        assert 0.52 <= hi <= 0.54
        lo_big, hi_big = bootstrap_ci(scores * 4, iterations=2000, seed=1)
        assert hi_big - lo_big < hi - lo

    def test_seeded(self):
        scores = np.random.default_rng(42).random(30)
        assert bootstrap_ci(scores, seed=3) == bootstrap_ci(scores, seed=3)

    def test_interval_contains_mean(self):
        scores = [0.0] * 19 + [1.0]
        lo, hi = bootstrap_ci(scores, iterations=200)
        assert lo <= np.mean(scores) <= hi

    def test_too_few_scores(self):
        with pytest.raises(InputError):
            bootstrap_ci([0.5])


class TestSweep:

    @pytest.fixture
    def decoder(self):
        return BarPointerDecoder(build_scale_grid(**SMALL_GRID), arch="noinv")

    def periodic_track(self, track_id, scale_index, bar_frames=30, n_frames=300):
        features = np.zeros((n_frames, 1))
        features[5::bar_frames, 0] = 1.0
        downbeats = [n / 20 for n in range(5, n_frames, bar_frames)]
        return SweepTrack(track_id, scale_index, 160.0 + scale_index, features, downbeats)

    def oracle_model(self, decoder):
        def predict(features):
            p = np.convolve(features[:, 0], np.ones(1), mode="same")
            return np.stack([p, 1 - p], axis=1)
        return SweepModel("oracle", predict, decoder)

    def test_rows_per_scale_and_bucket(self, decoder):
        tracks = [self.periodic_track(f"t{i}-{s}", s) for s in (-1, 0, 1) for i in range(3)]
        cfg = EvalConfig(bootstrap_iterations=200, exclude_warmup=False, bpm_bucket_width=10.0)
        table = run_sweep([self.oracle_model(decoder), uniform_baseline(decoder)], tracks, cfg,
                          required_scales=[-1, 0, 1], jobs=1)
        assert [row.scale_index for row in table.rows_for("oracle")] == [-1, 0, 1]
        assert all(row.mean_f1 == 1.0 and row.n_tracks == 3 for row in table.rows_for("oracle"))
        assert len(table.by_scale) == 6
        assert {row.effective_bpm_bucket for row in table.by_bpm} == {150.0, 160.0}
        assert len(table.track_scores) == 18

    def test_missing_scales(self, decoder):
        tracks = [self.periodic_track("t0", 0)]
        with pytest.raises(CoverageError) as err:
            run_sweep([uniform_baseline(decoder)], tracks, required_scales=range(-2, 3), jobs=1)
        assert err.value.missing == [-2, -1, 1, 2]

    def test_no_tracks(self, decoder):
        with pytest.raises(InputError):
            run_sweep([uniform_baseline(decoder)], [], jobs=1)

    def test_bucket(self):
        assert bpm_bucket(127.3, 10) == 120.0
        assert bpm_bucket(80.0, 10) == 80.0


SCALES = [-12, -8, -4, -1, 0, 1, 4, 8, 12]


def sweep_rows(curves):
    """Sweep-table frame from {model: {scale_index: mean_f1}}."""
    rows = [dict(model=model, scale_index=i, effective_bpm_bucket=None, mean_f1=f1, ci_lo=f1, ci_hi=f1, n_tracks=4)
            for model, curve in curves.items() for i, f1 in curve.items()]
    rows.append(dict(model="inv", scale_index=None, effective_bpm_bucket=120.0, mean_f1=0.5, ci_lo=0.5, ci_hi=0.5,
                     n_tracks=4))
    frame = pd.DataFrame(rows, columns=SWEEP_CSV_HEADER)
    frame["scale_index"] = frame["scale_index"].astype("Int64")
    return frame


def baseline_curve(i):
    if abs(i) >= 8:
        return 0.4
    if abs(i) == 4:
        return 0.6
    return 0.85 if i == 0 else 0.8


class TestAcceptanceChecks:

    @pytest.fixture
    def curves(self):
        return {
            "inv": {i: 0.85 for i in SCALES},
            "noinv": {i: baseline_curve(i) for i in SCALES},
            "noinv_aug": {i: 0.88 if abs(i) <= 1 else 0.6 for i in SCALES},
        }

    def test_all_pass(self, curves):
        results = check_tempo_generalisation(sweep_rows(curves), aug="noinv_aug")
        assert [r.name for r in results] == ["far_margin", "flatness", "train_tempo_gap", "aug_near_gain", "aug_far_trail"]
        assert all(r.passed for r in results)
        values = {r.name: r.value for r in results}
        assert values["far_margin"] == pytest.approx(0.45)
        assert values["flatness"] == pytest.approx(0.0)
        assert values["aug_near_gain"] == pytest.approx(0.88 - (0.8 + 0.85 + 0.8) / 3)

    def test_baseline_that_matches_inv_everywhere_fails_the_far_margin(self, curves):
        curves["noinv"] = dict(curves["inv"])
        results = check_tempo_generalisation(sweep_rows(curves))
        assert len(results) == 3
        assert [r.name for r in results if not r.passed] == ["far_margin"]

    def test_uneven_inv_curve_fails_flatness(self, curves):
        curves["inv"] = {i: 0.9 if i == 0 else 0.3 for i in SCALES}
        results = {r.name: r for r in check_tempo_generalisation(sweep_rows(curves))}
        assert not results["flatness"].passed
        assert results["flatness"].at_most

    def test_missing_flatness_scale(self, curves):
        del curves["inv"][-4]
        with pytest.raises(CoverageError):
            check_tempo_generalisation(sweep_rows(curves))

    def test_unknown_model(self, curves):
        with pytest.raises(InputError):
            check_tempo_generalisation(sweep_rows(curves), inv="nope")


class TestTempoBinAccuracy:

    @pytest.fixture
    def targets(self):
        t = np.zeros((10, 6))
        t[:, 5] = 1.0
        t[2:5, :5] = [0.0, 0.25, 0.5, 0.25, 0.0]
        t[2:5, 5] = 0.0
        return t

    @staticmethod
    def rolled(t, shift):
        return np.concatenate([np.roll(t[:, :-1], shift, axis=1), t[:, -1:]], axis=1)

    def test_targets_score_perfectly(self, targets):
        assert tempo_bin_accuracy([targets], [targets]) == 1.0

    def test_neighbouring_bin_is_tolerated(self, targets):
        assert tempo_bin_accuracy([self.rolled(targets, 1)], [targets]) == 1.0
        assert tempo_bin_accuracy([self.rolled(targets, 2)], [targets]) == 0.0

    def test_pooled_over_tracks(self, targets):
        assert tempo_bin_accuracy([targets, self.rolled(targets, 2)], [targets, targets]) == pytest.approx(0.5)
        assert check_tempo_bins([targets, self.rolled(targets, 2)], [targets, targets]).passed is False

    def test_no_downbeats(self):
        t = np.zeros((5, 4))
        t[:, 3] = 1.0
        with pytest.raises(InputError):
            tempo_bin_accuracy([t], [t])
