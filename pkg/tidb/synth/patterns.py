# tidb/synth/patterns.py
"""
Symbolic drum patterns: 16 bundled canonical rhythms written as text grids, seeded procedural
generation, and pattern JSON files.
"""

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from ..core.constants import DEFAULT_STYLE_MIX, INSTRUMENTS
from ..core.errors import FormatError, ParameterError
from ..models.data_models import DrumEvent, DrumPattern

STEPS_PER_BEAT = 4
BEATS_PER_BAR = 4
BARS = 4

VELOCITY_MARKS = {"x": 1.0, "o": 0.6}

# One bar of sixteenth notes per instrument line; the bar repeats across the pattern.
CANONICAL_RHYTHMS: Dict[str, tuple] = {
    "rock": (120.0, """
        hihat  x.x.x.x.x.x.x.x.
        snare  ....x.......x...
        kick   x.......x.x.....
    """),
    "disco": (118.0, """
        hihat  o.x.o.x.o.x.o.x.
        snare  ....x.......x...
        kick   x...x...x...x...
    """),
    "funk": (100.0, """
        hihat  xoxoxoxoxoxoxoxo
        snare  ....x..o.o..x..o
        kick   x.x.......x..x..
    """),
    "shuffle": (90.0, """
        hihat  x..ox..ox..ox..o
        snare  ....x.......x...
        kick   x.......x..o....
    """),
    "samba": (100.0, """
        hihat  xoxxxoxxxoxxxoxx
        snare  .x..x.x..x..x.x.
        tom    ...........x..x.
        kick   x..xx..xx..xx..x
    """),
    "bossa_nova": (140.0, """
        hihat  x.x.x.x.x.x.x.x.
        snare  x..x..x...x..x..
        kick   x..xx..xx..xx..x
    """),
    "reggae_one_drop": (80.0, """
        hihat  ..x...x...x...x.
        snare  ........x.......
        kick   ........x.......
    """),
    "hiphop": (90.0, """
        hihat  x.x.x.x.x.x.x.x.
        snare  ....x.......x...
        kick   x.....x...x.....
    """),
    "house": (124.0, """
        hihat  ..x...x...x...x.
        snare  ....x.......x...
        kick   x...x...x...x...
    """),
    "motown": (104.0, """
        hihat  x.x.x.x.x.x.x.x.
        snare  x...x...x...x...
        kick   x.x.....x.x.....
    """),
    "punk": (160.0, """
        crash  x...............
        snare  ..x...x...x...x.
        kick   x.x.x.x.x.x.x.x.
    """),
    "songo": (110.0, """
        hihat  x...x...x...x...
        snare  .x.o..x..x.o.x..
        tom    ..........x..x..
        kick   ...x......x.....
    """),
    "train": (150.0, """
        snare  xoooxoooxoooxooo
        kick   x.......x.......
    """),
    "march": (110.0, """
        crash  x...............
        snare  x.xxx.x.x.xxx.x.
        kick   x.......x.......
    """),
    "breakbeat": (96.0, """
        hihat  x.x.x.x.x.x.x.x.
        snare  ....x..x.x..x..x
        kick   x.x.......xx....
    """),
    "halftime": (140.0, """
        hihat  x.x.x.x.x.x.x.x.
        snare  ........x.......
        kick   x.........x.....
    """),
}


def parse_grid(pattern_id: str, grid: str, tempo: float, bars: int = BARS) -> DrumPattern:
    """Parses 'instrument  x.o.' lines ('x' full velocity, 'o' ghost note, '.' rest) into a pattern."""
    steps_per_bar = STEPS_PER_BEAT * BEATS_PER_BAR
    events = []
    for line in grid.strip().splitlines():
        instrument, cells = line.split()
        if len(cells) != steps_per_bar:
            raise ParameterError(f"{pattern_id}: {instrument} line has {len(cells)} steps, expected {steps_per_bar}")
        for bar in range(bars):
            for step, mark in enumerate(cells):
                if mark in VELOCITY_MARKS:
                    events.append(DrumEvent(instrument=instrument, step=bar * steps_per_bar + step,
                                            velocity=VELOCITY_MARKS[mark]))
    events.sort(key=lambda e: (e.step, INSTRUMENTS.index(e.instrument.value)))
    return DrumPattern(id=pattern_id, grid_resolution=STEPS_PER_BEAT, beats_per_bar=BEATS_PER_BAR,
                       bars=bars, events=events, original_tempo=tempo)


def canonical_patterns() -> List[DrumPattern]:
    return [parse_grid(name, grid, tempo) for name, (tempo, grid) in CANONICAL_RHYTHMS.items()]


def _metric_weights(steps_per_bar: int) -> np.ndarray:
    """Bar onset 4, beats 3, eighths 2, sixteenths 1."""
    steps = np.arange(steps_per_bar)
    weights = np.ones(steps_per_bar)
    weights[steps % 2 == 0] = 2.0
    weights[steps % STEPS_PER_BEAT == 0] = 3.0
    weights[0] = 4.0
    return weights


def generate_pattern(seed: int, index: int, style_mix: Optional[Dict[str, float]] = None,
                     min_bpm: float = 80.0, max_bpm: float = 160.0, bars: int = BARS) -> DrumPattern:
    """One bar of 4 to 32 events drawn by instrument weight and metrical strength, repeated over `bars`."""
    mix = dict(DEFAULT_STYLE_MIX if style_mix is None else style_mix)
    instruments = [name for name in INSTRUMENTS if mix.get(name, 0.0) > 0.0]
    if not instruments:
        raise ParameterError("style_mix gives every instrument zero weight")
    rng = np.random.default_rng([seed, index])
    steps_per_bar = STEPS_PER_BEAT * BEATS_PER_BAR

    cell_weights = np.outer([mix[name] for name in instruments], _metric_weights(steps_per_bar)).ravel()
    n_cells = cell_weights.size
    count = int(rng.integers(4, 33))
    count = min(count, n_cells)
    cells = rng.choice(n_cells, size=count, replace=False, p=cell_weights / cell_weights.sum())

    bar_events = []
    for cell in sorted(cells, key=lambda c: (c % steps_per_bar, c // steps_per_bar)):
        instrument, step = instruments[cell // steps_per_bar], int(cell % steps_per_bar)
        on_beat = step % STEPS_PER_BEAT == 0
        velocity = rng.uniform(0.7, 1.0) if on_beat else rng.uniform(0.3, 0.8)
        bar_events.append((instrument, step, round(float(velocity), 3)))

    events = [DrumEvent(instrument=instrument, step=bar * steps_per_bar + step, velocity=velocity)
              for bar in range(bars) for instrument, step, velocity in bar_events]
    tempo = round(float(rng.uniform(min_bpm, max_bpm)), 1)
    return DrumPattern(id=f"gen-{seed}-{index:04d}", grid_resolution=STEPS_PER_BEAT,
                       beats_per_bar=BEATS_PER_BAR, bars=bars, events=events, original_tempo=tempo)


def generate_patterns(seed: int, count: int, style_mix: Optional[Dict[str, float]] = None,
                      min_bpm: float = 80.0, max_bpm: float = 160.0) -> List[DrumPattern]:
    if count < 1:
        raise ParameterError(f"pattern count must be at least 1, got {count}")
    return [generate_pattern(seed, i, style_mix, min_bpm, max_bpm) for i in range(count)]


def save_pattern(pattern: DrumPattern, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(pattern.model_dump_json(by_alias=True, indent=2), encoding="utf-8")


def load_pattern(path: Path | str) -> DrumPattern:
    path = Path(path)
    try:
        return DrumPattern.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise FormatError(f"cannot read pattern file {path}: {e}") from e
    except ValidationError as e:
        raise FormatError(f"{path} is not a valid pattern file: {e}") from e
