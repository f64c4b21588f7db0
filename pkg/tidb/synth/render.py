# tidb/synth/render.py
"""
Tempo-scaled rendering of drum patterns straight into log-mel feature maps.

Each instrument hit adds its profile's band template, scaled by velocity and decaying
exponentially from the onset frame. A noise floor is added and the sum is compressed with
log(1 + gain * x), so the result has the shape and dynamics of a 64-band log-mel spectrogram
at 50 frames per second.
"""

import hashlib
import math
from typing import Dict, List, Tuple

import numpy as np
from numpy.typing import NDArray

from ..core.constants import (
    FEATURE_BANDS, FEATURE_FRAME_RATE, INSTRUMENT_BANDS, INSTRUMENT_DECAYS, INSTRUMENTS,
    SCALE_INDEX_DIVISOR, SCALE_INDEX_MAX, SCALE_INDEX_MIN,
)
from ..core.errors import ParameterError
from ..models.data_models import DrumPattern, InstrumentEnum, RenderProfile, TrackAnnotation

# Hits are truncated this many decay times after onset.
DECAY_SPAN = 8.0


def scale_factor(index: int) -> float:
    if not SCALE_INDEX_MIN <= index <= SCALE_INDEX_MAX:
        raise ParameterError(f"scale index {index} outside [{SCALE_INDEX_MIN}, {SCALE_INDEX_MAX}]")
    return 2.0 ** (index / SCALE_INDEX_DIVISOR)


def tempo_scale_factors(i_min: int = SCALE_INDEX_MIN, i_max: int = SCALE_INDEX_MAX) -> List[float]:
    """eps_i = 2^(i/26) for i_min <= i <= i_max."""
    if i_min > i_max:
        raise ParameterError(f"empty scale range [{i_min}, {i_max}]")
    return [scale_factor(i) for i in range(i_min, i_max + 1)]


# --- Profiles ---

def _band_template(rng: np.random.Generator, instrument: str) -> List[float]:
    low, high, width = INSTRUMENT_BANDS[instrument]
    centre = rng.uniform(low, high)
    width *= rng.uniform(0.8, 1.25)
    bands = np.arange(FEATURE_BANDS)
    template = np.exp(-0.5 * ((bands - centre) / width) ** 2)
    # Broadband click so every hit shows up outside its main band.
    template += rng.uniform(0.02, 0.08)
    return (template / template.max()).round(6).tolist()


def _id_key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def make_profile(profile_id: str, seed: int) -> RenderProfile:
    """Random timbre drawn from (seed, profile id); equal ids give equal profiles."""
    rng = np.random.default_rng([seed, _id_key(profile_id)])
    templates: Dict[InstrumentEnum, List[float]] = {}
    decays: Dict[InstrumentEnum, float] = {}
    for instrument in INSTRUMENTS:
        templates[InstrumentEnum(instrument)] = _band_template(rng, instrument)
        lo, hi = INSTRUMENT_DECAYS[instrument]
        decays[InstrumentEnum(instrument)] = round(float(rng.uniform(lo, hi)), 4)
    return RenderProfile(id=profile_id, templates=templates, decays=decays,
                         noise_floor=round(float(rng.uniform(5e-4, 2e-3)), 6),
                         gain=round(float(rng.uniform(8.0, 12.0)), 3))


def profile_id(index: int) -> str:
    return f"profile-{index:03d}"


def generate_profiles(seed: int, start: int, count: int) -> List[RenderProfile]:
    """Profiles `start .. start+count-1`; disjoint index ranges give disjoint timbre sets."""
    return [make_profile(profile_id(i), seed) for i in range(start, start + count)]


# --- Rendering ---

def pattern_timing(pattern: DrumPattern, tempo_scale: float) -> Tuple[float, float, float]:
    """(beat period, bar duration, step duration) in seconds at the scaled tempo."""
    beat = 60.0 / (pattern.original_tempo * tempo_scale)
    return beat, beat * pattern.beats_per_bar, beat / pattern.grid_resolution


def render_annotation(pattern: DrumPattern, tempo_scale: float, silence: float,
                      repetitions: int) -> TrackAnnotation:
    beat, bar, _ = pattern_timing(pattern, tempo_scale)
    n_beats = repetitions * pattern.bars * pattern.beats_per_bar
    beats = [silence + k * beat for k in range(n_beats)]
    downbeats = beats[::pattern.beats_per_bar]
    duration = silence + repetitions * pattern.bars * bar
    return TrackAnnotation(downbeats=downbeats, beats=beats,
                           tempo_curve=[(0.0, pattern.original_tempo * tempo_scale)], duration=duration)


def n_frames_for(duration: float, frame_rate: float = FEATURE_FRAME_RATE) -> int:
    # Rounding first keeps exact products such as 32 s * 50 from gaining a frame.
    return int(math.ceil(round(duration * frame_rate, 9)))


def render_features(pattern: DrumPattern, tempo_scale: float, profile: RenderProfile, seed: int,
                    repetitions: int = 4, frame_rate: float = FEATURE_FRAME_RATE,
                    silence: float | None = None) -> Tuple[NDArray, TrackAnnotation]:
    """
    Renders `pattern` at original_tempo * tempo_scale into an (N, 64) feature map.

    The leading silence is drawn uniformly from [0, bar duration) unless given; the pattern
    then repeats `repetitions` times.
    """
    if tempo_scale <= 0.0:
        raise ParameterError(f"tempo_scale must be positive, got {tempo_scale}")
    rng = np.random.default_rng(seed)
    _, bar, step = pattern_timing(pattern, tempo_scale)
    u = rng.uniform()
    if silence is None:
        silence = u * bar
    annotation = render_annotation(pattern, tempo_scale, silence, repetitions)
    n_frames = n_frames_for(annotation.duration, frame_rate)

    x = np.zeros((n_frames, FEATURE_BANDS))
    pattern_seconds = pattern.bars * bar
    frames = np.arange(n_frames, dtype=np.float64)
    for event in pattern.events:
        template = np.asarray(profile.templates[event.instrument]) * event.velocity
        decay = profile.decays[event.instrument]
        span = int(math.ceil(DECAY_SPAN * decay * frame_rate))
        for rep in range(repetitions):
            onset = (silence + rep * pattern_seconds + event.step * step) * frame_rate
            first = int(math.floor(onset + 0.5))
            if first >= n_frames:
                continue
            last = min(n_frames, first + span + 1)
            lag = np.maximum(frames[first:last] - onset, 0.0) / frame_rate
            x[first:last] += np.exp(-lag / decay)[:, None] * template[None, :]

    x += profile.noise_floor * rng.random((n_frames, FEATURE_BANDS))
    return np.log1p(profile.gain * x), annotation


def onset_frames(pattern: DrumPattern, tempo_scale: float, silence: float, repetitions: int = 4,
                 frame_rate: float = FEATURE_FRAME_RATE) -> NDArray:
    """Distinct onset frames of a rendering; what a peak picker should find in the band sum."""
    _, bar, step = pattern_timing(pattern, tempo_scale)
    pattern_seconds = pattern.bars * bar
    onsets = {
        int(math.floor((silence + rep * pattern_seconds + event.step * step) * frame_rate + 0.5))
        for rep in range(repetitions) for event in pattern.events
    }
    return np.array(sorted(onsets), dtype=np.int64)
