# tidb/core/runlog.py
"""
Run logging: a timestamped, append-only log file plus a tab-separated metrics file.
"""

from datetime import datetime
from pathlib import Path
from typing import Optional

from rich.console import Console

from ..models.data_models import EpochMetrics


class RunLog:
    """
    Collects everything a training run reports.

    Args:
        log_dir: Directory for the log and metrics files (created if missing)
        prefix: File-name prefix, e.g. "tidb_train"
        console: Console for echoing epoch lines; None keeps the run quiet
    """

    def __init__(self, log_dir: Path | str, prefix: str = "tidb_train", console: Optional[Console] = None):
        log_dir_path = Path(log_dir)
        log_dir_path.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.log_file_path = log_dir_path / f"{prefix}_{timestamp}.log"
        self.metrics_path = log_dir_path / f"{prefix}_{timestamp}.metrics.tsv"
        self.console = console
        with open(self.metrics_path, "w", encoding="utf-8") as f:
            f.write("epoch\ttrain_loss\tval_loss\tlr\n")

    def log(self, content: str):
        """Appends content to the run's log file."""
        with open(self.log_file_path, "a", encoding="utf-8") as f:
            f.write(content + "\n")

    def epoch(self, metrics: EpochMetrics, improved: bool = False):
        line = (f"epoch {metrics.epoch:4d}  train {metrics.train_loss:.6f}  "
                f"val {metrics.val_loss:.6f}  lr {metrics.lr:.3g}")
        self.log(line + ("  *" if improved else ""))
        with open(self.metrics_path, "a", encoding="utf-8") as f:
            f.write(f"{metrics.epoch}\t{metrics.train_loss!r}\t{metrics.val_loss!r}\t{metrics.lr!r}\n")
        if self.console is not None:
            marker = " [green]*[/green]" if improved else ""
            self.console.print(f"[dim]epoch[/dim] {metrics.epoch:4d}  [cyan]train[/cyan] {metrics.train_loss:.5f}  "
                               f"[magenta]val[/magenta] {metrics.val_loss:.5f}  [dim]lr {metrics.lr:.2g}[/dim]{marker}")
