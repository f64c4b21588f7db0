# tidb/reporting/tables.py
"""
CSV outputs: the sweep table, per-track scores, evaluation summaries, plot data for the
relative-tempo and absolute-tempo views, and long-format kernel dumps.
"""

from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from ..core.constants import SWEEP_CSV_HEADER
from ..core.errors import ConfigError, FormatError
from ..engine import nnkernels as nk
from ..engine.network import Network, ScaleInvariantLayer
from ..models.data_models import EvalResult, SweepTable


def _prepare(path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def sweep_frame(table: SweepTable) -> pd.DataFrame:
    rows = [row.model_dump() for row in table.by_scale + table.by_bpm]
    return pd.DataFrame(rows, columns=SWEEP_CSV_HEADER)


def write_sweep_csv(table: SweepTable, path: Path | str) -> Path:
    """Scale-index rows then BPM-bucket rows; the unused key column is left empty."""
    path = _prepare(path)
    frame = sweep_frame(table)
    frame["scale_index"] = frame["scale_index"].astype("Int64")
    frame.to_csv(path, index=False, float_format="%.6f")
    return path


def read_sweep_csv(path: Path | str) -> pd.DataFrame:
    """A sweep table written by write_sweep_csv."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"cannot read sweep table {path}: {e}") from e
    missing = [c for c in SWEEP_CSV_HEADER if c not in frame.columns]
    if missing:
        raise FormatError(f"{path} is not a sweep table (missing columns: {', '.join(missing)})")
    frame["scale_index"] = frame["scale_index"].astype("Int64")
    return frame


def write_track_scores(table: SweepTable, path: Path | str) -> Path:
    path = _prepare(path)
    pd.DataFrame([s.model_dump() for s in table.track_scores]).to_csv(path, index=False, float_format="%.6f")
    return path


def plot_frame(table: SweepTable, key: str = "scale_index") -> pd.DataFrame:
    """Wide table for plotting: one row per key value, mean/lo/hi columns per model."""
    rows = table.by_scale if key == "scale_index" else table.by_bpm
    long = pd.DataFrame([row.model_dump() for row in rows])
    wide = long.pivot(index=key, columns="model", values=["mean_f1", "ci_lo", "ci_hi"])
    wide.columns = [f"{model}_{stat}" for stat, model in wide.columns]
    return wide[sorted(wide.columns)].reset_index()


def write_plot_data(table: SweepTable, out_dir: Path | str) -> List[Path]:
    """relative_tempo.csv (by scale index) and absolute_tempo.csv (by BPM bucket)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key, name in (("scale_index", "relative_tempo.csv"), ("effective_bpm_bucket", "absolute_tempo.csv")):
        path = out_dir / name
        plot_frame(table, key).to_csv(path, index=False, float_format="%.6f")
        written.append(path)
    return written


def write_eval_csv(result: EvalResult, path: Path | str) -> Path:
    path = _prepare(path)
    rows = [dict(track=track_id, **r.model_dump(exclude={"per_track"})) for track_id, r in result.per_track.items()]
    rows.append(dict(track="ALL", **result.model_dump(exclude={"per_track"})))
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.6f")
    return path


def kernel_frame(net: Network, layer: str, scales: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Long-format rows (kind, layer, scale, index, in_channel, out_channel, value) holding the
    pattern kernel k (kind "k", scale -1) and the materialised kernels h_j (kind "h").
    """
    layers = {l.name: l for l in net.layers if isinstance(l, ScaleInvariantLayer)}
    if layer not in layers:
        known = ", ".join(layers) or "none"
        raise ConfigError(f"{layer!r} is not a scale-invariant layer (available: {known})")
    k = net.params[f"{layer}.pattern"].astype(np.float64)
    h = nk.materialise_kernels(k, layers[layer].psi_values.astype(np.float64))
    scales = list(range(h.shape[0])) if scales is None else list(scales)
    bad = [j for j in scales if not 0 <= j < h.shape[0]]
    if bad:
        raise ConfigError(f"scale bins {bad} outside [0, {h.shape[0] - 1}]")

    def long_rows(kind: str, scale: int, values: np.ndarray) -> pd.DataFrame:
        index, c_in, c_out = np.meshgrid(*(np.arange(n) for n in values.shape), indexing="ij")
        return pd.DataFrame({"kind": kind, "layer": layer, "scale": scale, "index": index.ravel(),
                             "in_channel": c_in.ravel(), "out_channel": c_out.ravel(), "value": values.ravel()})

    parts = [long_rows("k", -1, k)] + [long_rows("h", j, h[j]) for j in scales]
    return pd.concat(parts, ignore_index=True)


def write_kernel_csv(frame: pd.DataFrame, path: Path | str) -> Path:
    path = _prepare(path)
    frame.to_csv(path, index=False, float_format="%.8g")
    return path
