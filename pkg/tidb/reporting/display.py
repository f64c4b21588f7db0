# tidb/reporting/display.py
from typing import Dict, List, Optional

from rich.console import Console
from rich.table import Table

from ..models.data_models import CriterionResult, DatasetManifest, EvalResult, SplitEnum, SweepTable


def _f1_style(f1: float) -> str:
    if f1 >= 0.8:
        return "green"
    if f1 >= 0.5:
        return "yellow"
    return "red"


def display_eval_result(result: EvalResult, console: Console, show_tracks: bool = True):
    """Per-track precision/recall/F1 followed by the pooled totals."""
    table = Table(title="Downbeat evaluation", show_lines=False)
    table.add_column("Track", style="cyan")
    table.add_column("P", justify="right")
    table.add_column("R", justify="right")
    table.add_column("F1", justify="right")
    table.add_column("TP/FP/FN", justify="right", style="dim")
    rows: Dict[str, EvalResult] = result.per_track if show_tracks else {}
    for track_id, r in rows.items():
        table.add_row(track_id, f"{r.precision:.3f}", f"{r.recall:.3f}",
                      f"[{_f1_style(r.f1)}]{r.f1:.3f}[/{_f1_style(r.f1)}]",
                      f"{r.matched}/{r.false_pos}/{r.false_neg}")
    if rows:
        table.add_section()
    table.add_row("[bold]all[/bold]", f"{result.precision:.3f}", f"{result.recall:.3f}",
                  f"[bold]{result.f1:.3f}[/bold]", f"{result.matched}/{result.false_pos}/{result.false_neg}")
    console.print(table)


def display_sweep_table(table: SweepTable, console: Console):
    """One column block per model, one row per scale index."""
    models = sorted({row.model for row in table.by_scale})
    grid = Table(title="Tempo sweep: mean F1 per scale index")
    grid.add_column("i", justify="right", style="cyan")
    for model in models:
        grid.add_column(model, justify="right")
    scales = sorted({row.scale_index for row in table.by_scale})
    cells = {(row.model, row.scale_index): row for row in table.by_scale}
    for scale in scales:
        values = []
        for model in models:
            row = cells.get((model, scale))
            if row is None:
                values.append("-")
                continue
            style = _f1_style(row.mean_f1)
            values.append(f"[{style}]{row.mean_f1:.3f}[/{style}] [dim]({row.ci_lo:.2f}-{row.ci_hi:.2f})[/dim]")
        grid.add_row(f"{scale:+d}", *values)
    console.print(grid)


def display_manifest_summary(manifest: DatasetManifest, console: Console, path: Optional[str] = None):
    if path:
        console.print(f"[bold green]Dataset written:[/bold green] {path}")
    table = Table(show_header=True)
    table.add_column("Split", style="cyan")
    table.add_column("Tracks", justify="right")
    table.add_column("Scale indices")
    table.add_column("Profiles", style="dim")
    for split in SplitEnum:
        entries = manifest.split(split)
        if not entries:
            continue
        scales = sorted({e.scale_index for e in entries})
        profiles = sorted({e.profile_id for e in entries})
        scale_text = f"{scales[0]:+d}" if len(scales) == 1 else f"{scales[0]:+d} .. {scales[-1]:+d} ({len(scales)})"
        table.add_row(split.value, str(len(entries)), scale_text, ", ".join(profiles))
    console.print(table)


def display_network_summary(net, console: Console):
    table = Table(title=f"{net.arch.value} network ({net.n_outputs} output bins)", show_header=True)
    table.add_column("Parameter", style="cyan")
    table.add_column("Shape", justify="right")
    table.add_column("Count", justify="right", style="dim")
    for name, value in net.params.items():
        table.add_row(name, " x ".join(str(d) for d in value.shape), f"{value.size:,}")
    table.add_section()
    table.add_row("[bold]total[/bold]", "", f"[bold]{net.parameter_count():,}[/bold]")
    console.print(table)


def display_criteria(results: List[CriterionResult], console: Console):
    table = Table(title="Acceptance checks")
    table.add_column("Check", style="cyan")
    table.add_column("Measured", justify="right")
    table.add_column("Required", justify="right")
    table.add_column("", justify="center")
    for r in results:
        required = f"{'<=' if r.at_most else '>='} {r.threshold:.2f}"
        verdict = "[green]pass[/green]" if r.passed else "[bold red]FAIL[/bold red]"
        table.add_row(f"{r.name}\n[dim]{r.description}[/dim]", f"{r.value:.3f}", required, verdict)
    console.print(table)
