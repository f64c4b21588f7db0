# tidb/models/config_models.py
"""
The RunConfig tree. Every section forbids unknown keys; defaults reproduce the reference
tempo-invariant and baseline architectures and the synthetic tempo experiment.
"""

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core import constants as C
from .data_models import ArchitectureEnum


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GridConfig(_Section):
    tau0: float = Field(default=C.DEFAULT_GRID["tau0"], gt=0.0)
    T: int = Field(default=C.DEFAULT_GRID["T"], ge=1)
    S: int = Field(default=C.DEFAULT_GRID["S"], ge=1)
    r: float = Field(default=C.DEFAULT_GRID["r"], gt=0.0)
    B: int = Field(default=C.DEFAULT_GRID["B"], ge=1)
    M: int = Field(default=C.DEFAULT_GRID["M"], ge=1)
    alpha: float = Field(default=C.DEFAULT_ALPHA, gt=0.0)
    quadrature_step: float = Field(default=C.DEFAULT_QUADRATURE_STEP, gt=0.0, le=0.5)
    max_frame_step: float = Field(default=C.DEFAULT_MAX_FRAME_STEP, gt=0.0)
    max_n_star: int = Field(default=C.MAX_N_STAR, ge=1)
    max_tensor_elements: int = Field(default=C.MAX_TENSOR_ELEMENTS, ge=1)


class ModelConfig(_Section):
    arch: ArchitectureEnum = ArchitectureEnum.INV
    input_channels: int = Field(default=C.FEATURE_BANDS, ge=1)
    frontend_channels: List[int] = Field(default_factory=lambda: [32, 32, 32])
    frontend_kernel: int = Field(default=3, ge=1)
    ti_channels: List[int] = Field(default_factory=lambda: [16, 16, 1])
    dilated_channels: List[int] = Field(default_factory=lambda: [64, 64, 64, 1])
    dilated_kernel: int = Field(default=7, ge=1)
    dilations: List[int] = Field(default_factory=lambda: [2, 4, 8, 16])
    use_bias: bool = True
    padding: Literal["lookahead", "same"] = "lookahead"
    init: Literal["glorot", "zeros"] = "glorot"

    @model_validator(mode="after")
    def _stack_shapes(self) -> "ModelConfig":
        if len(self.dilated_channels) != len(self.dilations):
            raise ValueError("dilated_channels and dilations must have the same length")
        if not self.ti_channels or self.ti_channels[-1] != 1:
            raise ValueError("the scale-invariant stack must end in a single channel")
        if not self.dilated_channels or self.dilated_channels[-1] != 1:
            raise ValueError("the dilated stack must end in a single channel")
        return self


class TrainConfig(_Section):
    lr: float = Field(default=1e-3, gt=0.0)
    rms_decay: float = Field(default=0.9, gt=0.0, lt=1.0)
    rms_eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=8, ge=1)
    excerpt_seconds: float = Field(default=15.0, gt=0.0)
    max_epochs: int = Field(default=200, ge=1)
    early_stop_patience: int = Field(default=20, ge=1)
    plateau_patience: int = Field(default=5, ge=1)
    lr_factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    non_downbeat_weight: float = Field(default=C.NON_DOWNBEAT_WEIGHT, gt=0.0)
    target_window: float = Field(default=C.TARGET_WINDOW_SECONDS, gt=0.0)
    dtype: Literal["float32", "float64"] = "float32"
    val_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)


class DecoderConfig(_Section):
    beats_per_bar: int = Field(default=C.DEFAULT_BEATS_PER_BAR, ge=1)
    tempo_subdivision: int = Field(default=C.DEFAULT_TEMPO_SUBDIVISION, ge=1)
    transition_lambda: float = Field(default=C.DEFAULT_TRANSITION_LAMBDA, ge=0.0, le=0.5)
    obs_floor: float = Field(default=C.OBS_FLOOR, gt=0.0)
    max_states: int = Field(default=500_000, ge=1)


class DataConfig(_Section):
    n_patterns: int = Field(default=160, ge=1)
    use_canonical: bool = True
    profiles_train: int = Field(default=4, ge=1)
    profiles_test: int = Field(default=2, ge=1)
    train_profile_ids: Optional[List[str]] = None
    test_profile_ids: Optional[List[str]] = None
    scale_min: int = Field(default=C.SCALE_INDEX_MIN, ge=C.SCALE_INDEX_MIN, le=C.SCALE_INDEX_MAX)
    scale_max: int = Field(default=C.SCALE_INDEX_MAX, ge=C.SCALE_INDEX_MIN, le=C.SCALE_INDEX_MAX)
    aug: bool = False
    repetitions: int = Field(default=4, ge=1)
    min_bpm: float = Field(default=80.0, gt=0.0)
    max_bpm: float = Field(default=160.0, gt=0.0)
    style_mix: Dict[str, float] = Field(default_factory=lambda: dict(C.DEFAULT_STYLE_MIX))

    @model_validator(mode="after")
    def _ranges(self) -> "DataConfig":
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")
        if self.min_bpm > self.max_bpm:
            raise ValueError("min_bpm must not exceed max_bpm")
        unknown = set(self.style_mix) - set(C.INSTRUMENTS)
        if unknown:
            raise ValueError(f"unknown instruments in style_mix: {sorted(unknown)}")
        return self


class EvalConfig(_Section):
    tolerance: float = Field(default=C.EVAL_TOLERANCE, gt=0.0)
    bootstrap_iterations: int = Field(default=10_000, ge=1)
    ci_level: float = Field(default=0.95, gt=0.0, lt=1.0)
    exclude_warmup: bool = True
    bpm_bucket_width: float = Field(default=10.0, gt=0.0)


class RunConfig(_Section):
    seed: int = 0
    jobs: Optional[int] = Field(default=None, ge=1)
    grid: GridConfig = Field(default_factory=GridConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def __str__(self) -> str:
        """key=value dump for logging purposes."""
        from ..core.config import dump_config
        return dump_config(self)
