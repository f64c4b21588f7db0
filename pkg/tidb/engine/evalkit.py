# tidb/engine/evalkit.py
"""
Downbeat scoring (F-measure with a +-70 ms window), bootstrap intervals and the
tempo-generalisation sweep, plus the acceptance checks run on a finished sweep.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from ..core.constants import (
    AUG_FAR_TRAIL, AUG_NEAR_GAIN, EVAL_TOLERANCE, FAR_SCALE_INDEX, FLATNESS_MAX_STD, FLATNESS_SCALES,
    GENERALISATION_MARGIN, NEAR_SCALE_INDEX, TEMPO_BIN_MIN_ACCURACY, TRAIN_TEMPO_MAX_GAP,
)
from ..core.errors import CoverageError, InputError, ShapeError
from ..models.config_models import EvalConfig
from ..models.data_models import ArchitectureEnum, CriterionResult, EvalResult, SweepRow, SweepTable, TrackScore
from .decoder import BarPointerDecoder

_EDGE = 1e-9


def _as_sorted(times: Iterable[float], what: str) -> NDArray:
    arr = np.asarray(list(times), dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{what} must be a flat list of times")
    if arr.size > 1 and np.any(np.diff(arr) < 0):
        raise InputError(f"{what} must be sorted ascending")
    return arr


def match_events(est: NDArray, ann: NDArray, tol: float = EVAL_TOLERANCE) -> List[Tuple[int, int]]:
    """
    One-to-one matching of estimates to annotations within +-tol (closed), as (est, ann) index pairs.

    Annotations are visited in time order and each takes the earliest unmatched estimate inside
    its window. With equal-width windows this yields a maximum matching.
    """
    pairs = []
    j = 0
    for i, a in enumerate(ann):
        while j < est.size and est[j] < a - tol - _EDGE:
            j += 1
        if j < est.size and est[j] <= a + tol + _EDGE:
            pairs.append((j, i))
            j += 1
    return pairs


def f_measure(est: Iterable[float], ann: Iterable[float], tol: float = EVAL_TOLERANCE) -> EvalResult:
    """Precision, recall and F1; empty estimates against empty annotations score 1."""
    est = _as_sorted(est, "estimates")
    ann = _as_sorted(ann, "annotations")
    if est.size == 0 and ann.size == 0:
        return EvalResult(precision=1.0, recall=1.0, f1=1.0, matched=0, false_pos=0, false_neg=0)
    matched = len(match_events(est, ann, tol))
    return _result(matched, est.size - matched, ann.size - matched)


def _result(matched: int, false_pos: int, false_neg: int, per_track: Optional[Dict[str, EvalResult]] = None) -> EvalResult:
    n_est, n_ann = matched + false_pos, matched + false_neg
    precision = matched / n_est if n_est else 0.0
    recall = matched / n_ann if n_ann else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalResult(precision=precision, recall=recall, f1=f1, matched=matched,
                      false_pos=false_pos, false_neg=false_neg, per_track=per_track or {})


def summarize(per_track: Dict[str, EvalResult]) -> EvalResult:
    """Pooled counts over tracks, with the per-track results attached."""
    if not per_track:
        raise InputError("nothing to summarise")
    matched = sum(r.matched for r in per_track.values())
    false_pos = sum(r.false_pos for r in per_track.values())
    false_neg = sum(r.false_neg for r in per_track.values())
    if matched + false_pos + false_neg == 0:
        return EvalResult(precision=1.0, recall=1.0, f1=1.0, matched=0, false_pos=0, false_neg=0,
                          per_track=dict(per_track))
    return _result(matched, false_pos, false_neg, dict(per_track))


def exclude_warmup(est: Sequence[float], ann: Sequence[float], warmup_seconds: float,
                   tol: float = EVAL_TOLERANCE) -> Tuple[List[float], List[float]]:
    """
    Drops the first annotated downbeat when it falls inside the decoder warm-up, together with
    any estimate within tol of it.
    """
    est, ann = list(est), list(ann)
    if not ann or ann[0] >= warmup_seconds:
        return est, ann
    first = ann[0]
    return [t for t in est if abs(t - first) > tol + _EDGE], ann[1:]


def score_track(est: Sequence[float], ann: Sequence[float], tol: float = EVAL_TOLERANCE,
                warmup_seconds: Optional[float] = None) -> EvalResult:
    if warmup_seconds is not None:
        est, ann = exclude_warmup(est, ann, warmup_seconds, tol)
    return f_measure(est, ann, tol)


def bootstrap_ci(scores: Sequence[float], iterations: int = 10_000, level: float = 0.95,
                 seed: int = 0) -> Tuple[float, float]:
    """Percentile bootstrap of the mean over track-level resampling; the interval always contains the mean."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise InputError(f"bootstrap needs at least 2 scores, got {scores.size}")
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    means = np.empty(iterations)
    chunk = max(1, 2_000_000 // scores.size)
    for start in range(0, iterations, chunk):
        stop = min(iterations, start + chunk)
        idx = rng.integers(0, scores.size, size=(stop - start, scores.size))
        means[start:stop] = scores[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    mean = float(scores.mean())
    return min(float(lo), mean), max(float(hi), mean)


# --- Sweep ---

@dataclass
class SweepTrack:
    track_id: str
    scale_index: int
    effective_bpm: float
    features: NDArray
    downbeats: List[float]


@dataclass
class SweepModel:
    name: str
    predict: Callable[[NDArray], NDArray]     # features -> activation grid
    decoder: BarPointerDecoder


def uniform_baseline(decoder: BarPointerDecoder, name: str = "uniform") -> SweepModel:
    """Constant uniform activations: the chance level of the transition prior."""
    bins = decoder.grid.S + 1 if decoder.arch == ArchitectureEnum.INV else 2

    def predict(features: NDArray) -> NDArray:
        return np.full((features.shape[0], bins), 1.0 / bins)

    return SweepModel(name, predict, decoder)


def bpm_bucket(bpm: float, width: float) -> float:
    return math.floor(bpm / width) * width


def _aggregate(df: pd.DataFrame, key: str, cfg: EvalConfig, seed: int) -> List[SweepRow]:
    rows = []
    for (model, value), group in df.groupby(["model", key], sort=True):
        scores = group["f1"].to_numpy()
        mean = float(scores.mean())
        if scores.size >= 2:
            lo, hi = bootstrap_ci(scores, cfg.bootstrap_iterations, cfg.ci_level, seed)
        else:
            lo = hi = mean
        row = dict(model=model, mean_f1=mean, ci_lo=lo, ci_hi=hi, n_tracks=int(scores.size))
        row[key] = int(value) if key == "scale_index" else float(value)
        rows.append(SweepRow(**row))
    return rows


def run_sweep(models: Sequence[SweepModel], tracks: Sequence[SweepTrack], cfg: Optional[EvalConfig] = None,
              required_scales: Optional[Iterable[int]] = None, seed: int = 0, jobs: Optional[int] = None,
              on_track: Optional[Callable[[str, str], None]] = None) -> SweepTable:
    """
    Decodes every track with every model and tabulates mean F1 with bootstrap intervals per
    scale index and per effective-tempo bucket.
    """
    cfg = cfg if cfg is not None else EvalConfig()
    if not tracks:
        raise InputError("no test tracks to evaluate")
    present = {t.scale_index for t in tracks}
    missing = set(required_scales or ()) - present
    if missing:
        raise CoverageError(missing)

    scores: List[TrackScore] = []
    for model in models:
        activations = [model.predict(t.features) for t in tracks]
        estimates = model.decoder.decode_many(activations, jobs=jobs)
        warmup = model.decoder.warmup_seconds if cfg.exclude_warmup else None
        for track, est in zip(tracks, estimates):
            result = score_track(est, track.downbeats, cfg.tolerance, warmup)
            scores.append(TrackScore(model=model.name, track_id=track.track_id, scale_index=track.scale_index,
                                     effective_bpm=track.effective_bpm, f1=result.f1))
            if on_track is not None:
                on_track(model.name, track.track_id)

    df = pd.DataFrame([s.model_dump() for s in scores])
    df["effective_bpm_bucket"] = [bpm_bucket(b, cfg.bpm_bucket_width) for b in df["effective_bpm"]]
    return SweepTable(
        by_scale=_aggregate(df, "scale_index", cfg, seed),
        by_bpm=_aggregate(df, "effective_bpm_bucket", cfg, seed),
        track_scores=scores,
    )


# --- Acceptance checks ---

def _scale_means(frame: pd.DataFrame, model: str) -> pd.Series:
    rows = frame[(frame["model"] == model) & frame["scale_index"].notna()]
    if rows.empty:
        raise InputError(f"sweep table has no scale rows for model {model!r}")
    return rows.set_index(rows["scale_index"].astype(int))["mean_f1"].astype(float)


def _mean_over(means: pd.Series, scales: Iterable[int], model: str, what: str) -> float:
    scales = sorted(scales)
    if not scales:
        raise CoverageError([], f"sweep table has no {what} scale indices for {model!r}")
    missing = [i for i in scales if i not in means.index]
    if missing:
        raise CoverageError(missing, f"{model!r} has no rows at scale indices {missing}")
    return float(means.loc[scales].mean())


def _criterion(name: str, description: str, value: float, threshold: float, at_most: bool = False) -> CriterionResult:
    passed = value <= threshold + _EDGE if at_most else value >= threshold - _EDGE
    return CriterionResult(name=name, description=description, value=float(value), threshold=threshold,
                           at_most=at_most, passed=bool(passed))


def check_tempo_generalisation(frame: pd.DataFrame, inv: str = "inv", noinv: str = "noinv",
                               aug: Optional[str] = None) -> List[CriterionResult]:
    """
    Compares per-scale mean F1 of the invariant model, the plain baseline and (optionally) the
    tempo-augmented baseline in a sweep table.

    Far scales are |i| >= 8 and near scales |i| <= 1, taken from the scales both compared
    models were evaluated on. The flatness check uses the population standard deviation.
    """
    inv_means, noinv_means = _scale_means(frame, inv), _scale_means(frame, noinv)
    shared = sorted(set(inv_means.index) & set(noinv_means.index))
    far = [i for i in shared if abs(i) >= FAR_SCALE_INDEX]

    results = [
        _criterion("far_margin", f"{inv} - {noinv} mean F1 at |i| >= {FAR_SCALE_INDEX}",
                   _mean_over(inv_means, far, inv, "far") - _mean_over(noinv_means, far, noinv, "far"),
                   GENERALISATION_MARGIN),
        _criterion("flatness", f"std of {inv} per-scale mean F1 over {list(FLATNESS_SCALES)}",
                   float(np.std([_mean_over(inv_means, [i], inv, "flatness") for i in FLATNESS_SCALES])),
                   FLATNESS_MAX_STD, at_most=True),
        _criterion("train_tempo_gap", f"|{inv} - {noinv}| mean F1 at i = 0",
                   abs(_mean_over(inv_means, [0], inv, "training") - _mean_over(noinv_means, [0], noinv, "training")),
                   TRAIN_TEMPO_MAX_GAP, at_most=True),
    ]
    if aug is None:
        return results

    aug_means = _scale_means(frame, aug)
    near = [i for i in shared if abs(i) <= NEAR_SCALE_INDEX]
    results += [
        _criterion("aug_near_gain", f"{aug} - {noinv} mean F1 at |i| <= {NEAR_SCALE_INDEX}",
                   _mean_over(aug_means, near, aug, "near") - _mean_over(noinv_means, near, noinv, "near"),
                   AUG_NEAR_GAIN),
        _criterion("aug_far_trail", f"{inv} - {aug} mean F1 at |i| >= {FAR_SCALE_INDEX}",
                   _mean_over(inv_means, far, inv, "far") - _mean_over(aug_means, far, aug, "far"),
                   AUG_FAR_TRAIL),
    ]
    return results


def tempo_bin_accuracy(activations: Sequence[NDArray], targets: Sequence[NDArray], tolerance: int = 1) -> float:
    """
    Fraction of downbeat frames whose most active tempo bin lies within `tolerance` bins of the
    target's peak bin. Frames count as downbeats when their target puts mass on a tempo bin.
    """
    hits = total = 0
    for o, target in zip(activations, targets):
        if o.shape != target.shape:
            raise ShapeError(f"activations {o.shape} and targets {target.shape} differ")
        rows = target[:, -1] < 1.0 - 1e-9
        predicted = o[rows, :-1].argmax(axis=1)
        expected = target[rows, :-1].argmax(axis=1)
        hits += int((np.abs(predicted - expected) <= tolerance).sum())
        total += int(rows.sum())
    if total == 0:
        raise InputError("no downbeat frames to score tempo bins on")
    return hits / total


def check_tempo_bins(activations: Sequence[NDArray], targets: Sequence[NDArray]) -> CriterionResult:
    return _criterion("tempo_bins", "downbeat frames with argmax tempo bin within +-1 of the target",
                      tempo_bin_accuracy(activations, targets), TEMPO_BIN_MIN_ACCURACY)
