# tidb/synth/audio.py
"""
Log-mel features for real recordings, matching the synthetic feature maps: 22,050 Hz,
2048-sample window, hop of sample_rate / 50, 64 mel bands between 30 Hz and 11,025 Hz,
log(1 + x) compression.
"""

import math
from pathlib import Path

import librosa
import numpy as np
import soundfile as sf
from numpy.typing import NDArray
from scipy.signal import resample_poly

from ..core.constants import (
    FEATURE_BANDS, FEATURE_FRAME_RATE, MEL_FMAX, MEL_FMIN, WAV_N_FFT, WAV_SAMPLE_RATE,
)
from ..core.errors import FormatError

_PCM_SUBTYPES = {"PCM_U8", "PCM_S8", "PCM_16", "PCM_24", "PCM_32", "FLOAT", "DOUBLE"}


def read_wav(path: Path | str) -> tuple[NDArray, int]:
    """Reads an uncompressed WAV file and downmixes it to mono float64."""
    path = Path(path)
    try:
        info = sf.info(str(path))
    except (RuntimeError, OSError) as e:
        raise FormatError(f"cannot read audio file {path}: {e}") from e
    if info.format != "WAV" or info.subtype not in _PCM_SUBTYPES:
        raise FormatError(f"{path} is {info.format}/{info.subtype}; only uncompressed PCM WAV is supported")
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise FormatError(f"cannot decode {path}: {e}") from e
    return data.mean(axis=1), int(sample_rate)


def logmel(signal: NDArray, sample_rate: int, frame_rate: float = FEATURE_FRAME_RATE,
           n_bands: int = FEATURE_BANDS) -> NDArray:
    """(N, n_bands) log-mel map of a mono signal, N = ceil(len / hop) at the target rate."""
    if sample_rate != WAV_SAMPLE_RATE:
        g = math.gcd(sample_rate, WAV_SAMPLE_RATE)
        signal = resample_poly(signal, WAV_SAMPLE_RATE // g, sample_rate // g)
    hop = int(round(WAV_SAMPLE_RATE / frame_rate))
    n_frames = int(math.ceil(len(signal) / hop))
    if n_frames == 0:
        return np.zeros((0, n_bands))

    spectrum = np.abs(librosa.stft(np.asarray(signal, dtype=np.float64), n_fft=WAV_N_FFT, hop_length=hop,
                                   center=True, pad_mode="constant"))
    mel_basis = librosa.filters.mel(sr=WAV_SAMPLE_RATE, n_fft=WAV_N_FFT, n_mels=n_bands,
                                    fmin=MEL_FMIN, fmax=MEL_FMAX)
    mel = mel_basis @ spectrum[:, :n_frames]
    return np.log1p(mel).T


def load_wav_logmel(path: Path | str, frame_rate: float = FEATURE_FRAME_RATE,
                    n_bands: int = FEATURE_BANDS) -> NDArray:
    signal, sample_rate = read_wav(path)
    return logmel(signal, sample_rate, frame_rate, n_bands)
