# tidb/synth/datasets.py
"""
The tempo experiment's datasets: which (pattern, scale, profile) renderings go into the train,
validation and test splits, how they are written to disk, and how they are read back.

On-disk layout under the output directory:
    manifest.json          DatasetManifest
    profiles.json          every RenderProfile used
    patterns/<id>.json     one DrumPattern per file
    features/<track>.tidb  FEAT container, N x 64
    annotations/<track>.txt  "time label" lines, label in {db, beat}
"""

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

from numpy.typing import NDArray
from pydantic import ValidationError

from ..core.constants import FEATURE_FRAME_RATE
from ..core.container import ContainerKind, read_container, write_container
from ..core.errors import ConfigError, FormatError, InputError
from ..engine.evalkit import SweepTrack
from ..engine.network import make_targets
from ..engine.scaling import ScaleGrid
from ..engine.trainer import TrainingExample, split_validation
from ..models.config_models import DataConfig, RunConfig
from ..models.data_models import (
    DatasetManifest, DrumPattern, ManifestEntry, RenderProfile, SplitEnum, TrackAnnotation,
)
from .patterns import canonical_patterns, generate_patterns, save_pattern
from .render import generate_profiles, make_profile, render_features, scale_factor

MANIFEST_NAME = "manifest.json"
PROFILES_NAME = "profiles.json"


@dataclass
class TrackSpec:
    track_id: str
    pattern: DrumPattern
    scale_index: int
    profile: RenderProfile
    split: SplitEnum
    render_seed: int

    @property
    def effective_bpm(self) -> float:
        return self.pattern.original_tempo * scale_factor(self.scale_index)


@dataclass
class ExperimentDatasets:
    train: List[TrackSpec]
    val: List[TrackSpec]
    test: List[TrackSpec]
    patterns: List[DrumPattern] = field(default_factory=list)
    train_profiles: List[RenderProfile] = field(default_factory=list)
    test_profiles: List[RenderProfile] = field(default_factory=list)
    train_scales: List[int] = field(default_factory=list)
    test_scales: List[int] = field(default_factory=list)

    @property
    def tracks(self) -> List[TrackSpec]:
        return self.train + self.val + self.test


def track_id_for(pattern_id: str, scale_index: int, profile_id: str) -> str:
    return f"{pattern_id}_s{scale_index:+03d}_{profile_id}"


def render_seed(seed: int, track_id: str) -> int:
    """Per-track RNG seed, independent of the order tracks are rendered in."""
    digest = hashlib.sha256(f"{seed}:{track_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def experiment_patterns(cfg: DataConfig, seed: int) -> List[DrumPattern]:
    """Canonical rhythms first (if enabled), topped up with generated patterns to n_patterns."""
    patterns = canonical_patterns()[:cfg.n_patterns] if cfg.use_canonical else []
    missing = cfg.n_patterns - len(patterns)
    if missing > 0:
        patterns += generate_patterns(seed, missing, cfg.style_mix, cfg.min_bpm, cfg.max_bpm)
    return patterns


def experiment_profiles(cfg: DataConfig, seed: int) -> Tuple[List[RenderProfile], List[RenderProfile]]:
    if cfg.train_profile_ids is not None:
        train = [make_profile(pid, seed) for pid in cfg.train_profile_ids]
    else:
        train = generate_profiles(seed, 0, cfg.profiles_train)
    if cfg.test_profile_ids is not None:
        test = [make_profile(pid, seed) for pid in cfg.test_profile_ids]
    else:
        test = generate_profiles(seed, cfg.profiles_train, cfg.profiles_test)
    overlap = {p.id for p in train} & {p.id for p in test}
    if overlap:
        raise ConfigError(f"train and test render profiles overlap: {sorted(overlap)}")
    if not train or not test:
        raise ConfigError("train and test need at least one render profile each")
    return train, test


def train_scale_indices(cfg: DataConfig) -> List[int]:
    scales = [-1, 0, 1] if cfg.aug else [0]
    return [i for i in scales if cfg.scale_min <= i <= cfg.scale_max] or [0]


def build_experiment_datasets(config: RunConfig) -> ExperimentDatasets:
    """
    Train: original tempo (plus the neighbouring scales with aug) on the train profiles.
    Test: every scale index in [scale_min, scale_max] on the held-out profiles.
    Validation tracks are split off the train tracks by hash of track id.
    """
    cfg = config.data
    patterns = experiment_patterns(cfg, config.seed)
    train_profiles, test_profiles = experiment_profiles(cfg, config.seed)
    train_scales = train_scale_indices(cfg)
    test_scales = list(range(cfg.scale_min, cfg.scale_max + 1))

    def specs(scales: Sequence[int], profiles: Sequence[RenderProfile], split: SplitEnum) -> List[TrackSpec]:
        out = []
        for pattern in patterns:
            for scale in scales:
                for profile in profiles:
                    tid = track_id_for(pattern.id, scale, profile.id)
                    out.append(TrackSpec(tid, pattern, scale, profile, split, render_seed(config.seed, tid)))
        return out

    train = specs(train_scales, train_profiles, SplitEnum.TRAIN)
    _, val_ids = split_validation([t.track_id for t in train], config.train.val_fraction)
    val_set = set(val_ids)
    val = [t for t in train if t.track_id in val_set]
    for t in val:
        t.split = SplitEnum.VAL
    train = [t for t in train if t.track_id not in val_set]
    test = specs(test_scales, test_profiles, SplitEnum.TEST)
    return ExperimentDatasets(train, val, test, patterns, train_profiles, test_profiles, train_scales, test_scales)


# --- Feature and annotation files ---

def save_features(path: Path | str, features: NDArray, frame_rate: float = FEATURE_FRAME_RATE,
                  track_id: Optional[str] = None) -> None:
    n, c = features.shape
    meta = {"n_frames": n, "n_bands": c, "frame_rate": frame_rate}
    if track_id is not None:
        meta["track_id"] = track_id
    write_container(path, ContainerKind.FEATURES, meta, {"features": features})


def load_features(path: Path | str) -> Tuple[NDArray, float]:
    """Returns (N x C features, frame rate)."""
    meta, arrays = read_container(path, ContainerKind.FEATURES)
    try:
        features = arrays["features"]
        frame_rate = float(meta["frame_rate"])
    except KeyError as e:
        raise FormatError(f"{path} is missing feature field {e}") from e
    if features.ndim != 2:
        raise FormatError(f"{path} holds a {features.ndim}-d array, expected N x C features")
    return features, frame_rate


def write_annotation(path: Path | str, annotation: TrackAnnotation) -> None:
    downbeats = {round(t, 6) for t in annotation.downbeats}
    times = annotation.beats or annotation.downbeats
    lines = [f"{t:.6f} {'db' if round(t, 6) in downbeats else 'beat'}\n" for t in times]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(lines), encoding="utf-8")


def read_annotation(path: Path | str, duration: Optional[float] = None) -> TrackAnnotation:
    """
    Reads "time label" lines (label db or beat). Lines with a time only count as downbeats,
    so plain downbeat lists read too.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"cannot read annotation file {path}: {e}") from e
    beats, downbeats = [], []
    labelled = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        try:
            t = float(fields[0])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: bad time {fields[0]!r}") from e
        label = fields[1].lower() if len(fields) > 1 else "db"
        if label not in ("db", "beat"):
            raise FormatError(f"{path}:{lineno}: unknown label {fields[1]!r}")
        labelled |= len(fields) > 1
        if label == "db":
            downbeats.append(t)
        beats.append(t)
    if duration is None:
        duration = beats[-1] if beats else 0.0
    try:
        return TrackAnnotation(downbeats=downbeats, beats=beats if labelled else [], duration=duration)
    except ValidationError as e:
        raise FormatError(f"{path} is not a valid annotation: {e}") from e


# --- Writing a dataset ---

def _render_to_disk(job: Tuple[TrackSpec, str, int]) -> str:
    spec, out_dir, repetitions = job
    root = Path(out_dir)
    features, annotation = render_features(spec.pattern, scale_factor(spec.scale_index), spec.profile,
                                           spec.render_seed, repetitions)
    save_features(root / "features" / f"{spec.track_id}.tidb", features, track_id=spec.track_id)
    write_annotation(root / "annotations" / f"{spec.track_id}.txt", annotation)
    return spec.track_id


def _manifest(config: RunConfig, datasets: ExperimentDatasets) -> DatasetManifest:
    entries = [
        ManifestEntry(track_id=t.track_id, pattern_id=t.pattern.id, scale_index=t.scale_index,
                      profile_id=t.profile.id, split=t.split, effective_bpm=round(t.effective_bpm, 6),
                      render_seed=t.render_seed, annotation_path=f"annotations/{t.track_id}.txt",
                      feature_path=f"features/{t.track_id}.tidb")
        for t in datasets.tracks
    ]
    return DatasetManifest(seed=config.seed, aug=config.data.aug, train_scales=datasets.train_scales,
                           test_scales=datasets.test_scales,
                           train_profiles=[p.id for p in datasets.train_profiles],
                           test_profiles=[p.id for p in datasets.test_profiles], entries=entries)


def write_dataset(config: RunConfig, out_dir: Path | str, force: bool = False, jobs: Optional[int] = None,
                  on_track: Optional[Callable[[str], None]] = None) -> Path:
    """Renders every track of the experiment into `out_dir` and returns the manifest path."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise ConfigError(f"{out_dir} exists and is not empty; pass --force to overwrite")
    datasets = build_experiment_datasets(config)

    out_dir.mkdir(parents=True, exist_ok=True)
    for pattern in datasets.patterns:
        save_pattern(pattern, out_dir / "patterns" / f"{pattern.id}.json")
    profiles = [p.model_dump(mode="json", by_alias=True) for p in datasets.train_profiles + datasets.test_profiles]
    (out_dir / PROFILES_NAME).write_text(json.dumps(profiles, indent=2), encoding="utf-8")

    jobs_list = [(spec, str(out_dir), config.data.repetitions) for spec in datasets.tracks]
    if jobs == 1 or len(jobs_list) <= 1:
        done = map(_render_to_disk, jobs_list)
        for track_id in done:
            if on_track is not None:
                on_track(track_id)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for track_id in pool.map(_render_to_disk, jobs_list, chunksize=8):
                if on_track is not None:
                    on_track(track_id)

    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(_manifest(config, datasets).model_dump_json(by_alias=True, indent=2), encoding="utf-8")
    return manifest_path


# --- Reading a dataset ---

def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise FormatError(f"cannot read manifest {path}: {e}") from e
    except ValidationError as e:
        raise FormatError(f"{path} is not a valid dataset manifest: {e}") from e


def _manifest_root(path: Path | str) -> Path:
    path = Path(path)
    return path if path.is_dir() else path.parent


def _load_entry(root: Path, entry: ManifestEntry) -> Tuple[NDArray, TrackAnnotation, float]:
    features, frame_rate = load_features(root / entry.feature_path)
    annotation = read_annotation(root / entry.annotation_path, duration=features.shape[0] / frame_rate)
    return features, annotation, frame_rate


def load_training_examples(manifest_path: Path | str, split: SplitEnum, grid: ScaleGrid,
                           window: float, beats_per_bar: int = 4,
                           scales: Optional[Sequence[int]] = None) -> List[TrainingExample]:
    """Features and target grids for every track of `split`, optionally restricted to some scale indices."""
    manifest = load_manifest(manifest_path)
    root = _manifest_root(manifest_path)
    wanted = set(scales) if scales is not None else None
    examples = []
    for entry in manifest.split(split):
        if wanted is not None and entry.scale_index not in wanted:
            continue
        features, annotation, frame_rate = _load_entry(root, entry)
        if not math.isclose(frame_rate, grid.r):
            raise InputError(f"{entry.track_id}: features at {frame_rate} fps, scale grid expects {grid.r}")
        targets, _ = make_targets(annotation, grid, features.shape[0], window, beats_per_bar)
        examples.append(TrainingExample(entry.track_id, features, targets))
    return examples


def load_sweep_tracks(manifest_path: Path | str, scales: Optional[Sequence[int]] = None) -> List[SweepTrack]:
    """The test split as sweep tracks, optionally restricted to some scale indices."""
    manifest = load_manifest(manifest_path)
    root = _manifest_root(manifest_path)
    wanted = set(scales) if scales is not None else None
    tracks = []
    for entry in manifest.split(SplitEnum.TEST):
        if wanted is not None and entry.scale_index not in wanted:
            continue
        features, annotation, _ = _load_entry(root, entry)
        tracks.append(SweepTrack(entry.track_id, entry.scale_index, entry.effective_bpm, features,
                                 list(annotation.downbeats)))
    return tracks
