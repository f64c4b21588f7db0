# tidb/core/constants.py

# Scale-grid defaults of the reference tempo-invariant architecture
DEFAULT_GRID = {
    "tau0": 0.25,   # shortest beat period, seconds (240 BPM)
    "T": 8,         # scales per octave
    "S": 25,        # number of scales
    "r": 50.0,      # frames per second
    "B": 4,         # beats spanned by a pattern kernel
    "M": 64,        # pattern length in musical-time samples
}
DEFAULT_ALPHA = 1.0
DEFAULT_QUADRATURE_STEP = 0.05
DEFAULT_MAX_FRAME_STEP = 0.5
MAX_N_STAR = 10_000
MAX_TENSOR_ELEMENTS = 50_000_000

# Sinc truncation half-width (frames) used to decide which columns are interior
SINC_HALF_WIDTH = 10.0

LOGIT_CLAMP = 80.0
NON_DOWNBEAT_WEIGHT = 1.0 / 3.0
TARGET_WINDOW_SECONDS = 0.1

OBS_FLOOR = 1e-12
DEFAULT_TRANSITION_LAMBDA = 0.02
# HMM tempo states per network tempo bin
DEFAULT_TEMPO_SUBDIVISION = 4
DEFAULT_BEATS_PER_BAR = 4

EVAL_TOLERANCE = 0.07

# Relative tempo changes of the generalisation experiment: eps_i = 2^(i/26)
SCALE_INDEX_MIN = -13
SCALE_INDEX_MAX = 13
SCALE_INDEX_DIVISOR = 26

FEATURE_FRAME_RATE = 50.0
FEATURE_BANDS = 64
WAV_SAMPLE_RATE = 22050
WAV_N_FFT = 2048
MEL_FMIN = 30.0
MEL_FMAX = 11025.0

INSTRUMENTS = ("kick", "snare", "hihat", "tom", "crash")

# Where each instrument sits on the 64-band mel axis: (lowest centre band, highest centre band, width in bands)
INSTRUMENT_BANDS = {
    "kick":  (1, 8, 4.0),
    "snare": (14, 30, 10.0),
    "hihat": (46, 60, 6.0),
    "tom":   (6, 20, 5.0),
    "crash": (36, 56, 14.0),
}

# Decay-time ranges in seconds
INSTRUMENT_DECAYS = {
    "kick":  (0.12, 0.25),
    "snare": (0.08, 0.18),
    "hihat": (0.02, 0.06),
    "tom":   (0.12, 0.25),
    "crash": (0.5, 1.2),
}

DEFAULT_STYLE_MIX = {"kick": 0.3, "snare": 0.25, "hihat": 0.35, "tom": 0.05, "crash": 0.05}

# Container format
CONTAINER_MAGIC = b"TIDB"
CONTAINER_VERSION = 1
PATTERN_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1

CACHE_DIR_ENV = "TIDB_CACHE_DIR"

SWEEP_CSV_HEADER = ["model", "scale_index", "effective_bpm_bucket", "mean_f1", "ci_lo", "ci_hi", "n_tracks"]

# Acceptance checks on a finished sweep
FAR_SCALE_INDEX = 8
NEAR_SCALE_INDEX = 1
FLATNESS_SCALES = (-12, -8, -4, 0, 4, 8, 12)
GENERALISATION_MARGIN = 0.15
FLATNESS_MAX_STD = 0.10
TRAIN_TEMPO_MAX_GAP = 0.10
AUG_NEAR_GAIN = 0.05
AUG_FAR_TRAIL = 0.10
TEMPO_BIN_MIN_ACCURACY = 0.8
