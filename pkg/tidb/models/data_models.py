# tidb/models/data_models.py
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from ..core.constants import (
    MANIFEST_SCHEMA_VERSION, PATTERN_SCHEMA_VERSION, FEATURE_BANDS,
)


class InstrumentEnum(str, Enum):
    KICK = "kick"; SNARE = "snare"; HIHAT = "hihat"; TOM = "tom"; CRASH = "crash"


class SplitEnum(str, Enum):
    TRAIN = "train"; VAL = "val"; TEST = "test"


class ArchitectureEnum(str, Enum):
    INV = "inv"; NOINV = "noinv"


# --- Container header ---

class ArraySpec(BaseModel):
    name: str
    shape: List[int]


class ContainerHeader(BaseModel):
    kind: str
    meta: Dict[str, Any] = Field(default_factory=dict)
    arrays: List[ArraySpec] = Field(default_factory=list)


# --- Symbolic rhythm data ---

class DrumEvent(BaseModel):
    instrument: InstrumentEnum
    step: int = Field(ge=0)
    velocity: float = Field(gt=0.0, le=1.0)


class DrumPattern(BaseModel):
    schema_version: int = PATTERN_SCHEMA_VERSION
    id: str
    grid_resolution: int = Field(default=4, ge=1, alias="gridResolution")
    beats_per_bar: int = Field(default=4, ge=1, alias="beatsPerBar")
    bars: int = Field(default=4, ge=1)
    events: List[DrumEvent] = Field(default_factory=list)
    original_tempo: float = Field(gt=0.0, alias="originalTempo")  # BPM

    model_config = {"populate_by_name": True}

    @property
    def n_steps(self) -> int:
        return self.bars * self.beats_per_bar * self.grid_resolution

    @model_validator(mode="after")
    def _steps_within_pattern(self) -> "DrumPattern":
        for event in self.events:
            if event.step >= self.n_steps:
                raise ValueError(f"event step {event.step} outside pattern of {self.n_steps} steps")
        return self


class RenderProfile(BaseModel):
    """Synthetic timbre: one mel-band template and decay time per instrument."""
    id: str
    templates: Dict[InstrumentEnum, List[float]]
    decays: Dict[InstrumentEnum, float]
    noise_floor: float = Field(default=1e-3, ge=0.0, alias="noiseFloor")
    gain: float = Field(default=10.0, gt=0.0)

    model_config = {"populate_by_name": True}

    @field_validator("templates")
    @classmethod
    def _non_negative_templates(cls, value: Dict[InstrumentEnum, List[float]]) -> Dict[InstrumentEnum, List[float]]:
        for instrument, template in value.items():
            if len(template) != FEATURE_BANDS:
                raise ValueError(f"template for {instrument} has {len(template)} bands, expected {FEATURE_BANDS}")
            if min(template) < 0.0:
                raise ValueError(f"template for {instrument} has negative entries")
        return value

    @field_validator("decays")
    @classmethod
    def _positive_decays(cls, value: Dict[InstrumentEnum, float]) -> Dict[InstrumentEnum, float]:
        for instrument, decay in value.items():
            if decay <= 0.0:
                raise ValueError(f"decay for {instrument} must be positive")
        return value


class TrackAnnotation(BaseModel):
    downbeats: List[float] = Field(default_factory=list)
    beats: List[float] = Field(default_factory=list)
    # (segment start in seconds, BPM); empty when the tempo is unknown
    tempo_curve: List[Tuple[float, float]] = Field(default_factory=list, alias="tempoCurve")
    duration: float = Field(ge=0.0)

    model_config = {"populate_by_name": True}

    @field_validator("downbeats", "beats")
    @classmethod
    def _strictly_increasing(cls, value: List[float]) -> List[float]:
        for a, b in zip(value, value[1:]):
            if b <= a:
                raise ValueError("annotation times must be strictly increasing")
        return value

    @model_validator(mode="after")
    def _downbeats_are_beats(self) -> "TrackAnnotation":
        if self.beats:
            beat_set = {round(b, 6) for b in self.beats}
            missing = [d for d in self.downbeats if round(d, 6) not in beat_set]
            if missing:
                raise ValueError(f"downbeats {missing[:3]} are not listed as beats")
        return self

    def tempo_at(self, time: float) -> Optional[float]:
        """BPM of the tempo-curve segment containing `time`, or None without a curve."""
        bpm = None
        for start, segment_bpm in self.tempo_curve:
            if start <= time + 1e-9 or bpm is None:
                bpm = segment_bpm
        return bpm


# --- Dataset manifest ---

class ManifestEntry(BaseModel):
    track_id: str = Field(alias="trackId")
    pattern_id: str = Field(alias="patternId")
    scale_index: int = Field(alias="scaleIndex")
    profile_id: str = Field(alias="profileId")
    split: SplitEnum
    effective_bpm: float = Field(alias="effectiveBpm")
    render_seed: int = Field(alias="renderSeed")
    annotation_path: str = Field(alias="annotationPath")
    feature_path: str = Field(alias="featurePath")

    model_config = {"populate_by_name": True}


class DatasetManifest(BaseModel):
    schema_version: int = MANIFEST_SCHEMA_VERSION
    seed: int
    aug: bool = False
    train_scales: List[int] = Field(default_factory=list, alias="trainScales")
    test_scales: List[int] = Field(default_factory=list, alias="testScales")
    train_profiles: List[str] = Field(default_factory=list, alias="trainProfiles")
    test_profiles: List[str] = Field(default_factory=list, alias="testProfiles")
    entries: List[ManifestEntry] = Field(default_factory=list)

    model_config = {"populate_by_name": True}

    def split(self, split: SplitEnum) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]


# --- Evaluation results ---

class EvalResult(BaseModel):
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    matched: int = Field(ge=0)
    false_pos: int = Field(ge=0, alias="falsePos")
    false_neg: int = Field(ge=0, alias="falseNeg")
    per_track: Dict[str, "EvalResult"] = Field(default_factory=dict, alias="perTrack")

    model_config = {"populate_by_name": True}


class TrackScore(BaseModel):
    model: str
    track_id: str
    scale_index: int
    effective_bpm: float
    f1: float


class SweepRow(BaseModel):
    model: str
    scale_index: Optional[int] = None
    effective_bpm_bucket: Optional[float] = None
    mean_f1: float
    ci_lo: float
    ci_hi: float
    n_tracks: int

    @model_validator(mode="after")
    def _interval_contains_mean(self) -> "SweepRow":
        if not (self.ci_lo - 1e-12 <= self.mean_f1 <= self.ci_hi + 1e-12):
            raise ValueError(f"interval [{self.ci_lo}, {self.ci_hi}] does not contain {self.mean_f1}")
        if self.scale_index is not None and not -13 <= self.scale_index <= 13:
            raise ValueError(f"scale index {self.scale_index} outside [-13, 13]")
        return self


class SweepTable(BaseModel):
    by_scale: List[SweepRow] = Field(default_factory=list)
    by_bpm: List[SweepRow] = Field(default_factory=list)
    track_scores: List[TrackScore] = Field(default_factory=list)

    def rows_for(self, model: str) -> List[SweepRow]:
        return [row for row in self.by_scale if row.model == model]


class CriterionResult(BaseModel):
    """One acceptance check on a finished sweep: `value` compared against `threshold`."""
    name: str
    description: str
    value: float
    threshold: float
    at_most: bool = False
    passed: bool


# --- Training metrics ---

class EpochMetrics(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


EvalResult.model_rebuild()
