# tidb/main_cli.py
import functools
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from . import __version__ as cli_version
from .core.caching import clear_cache
from .core.config import load_config
from .core.errors import AcceptanceFailure, ConfigError, InputError, TidbError, TrainingDivergence
from .core.runlog import RunLog
from .engine.checkpoint import Checkpoint, load_checkpoint, restore_network, save_checkpoint
from .engine.decoder import BarPointerDecoder, read_downbeats, write_downbeats
from .engine.evalkit import (
    SweepModel, check_tempo_bins, check_tempo_generalisation, f_measure, run_sweep, summarize, uniform_baseline,
)
from .engine.network import build_network, predict
from .engine.trainer import init_state, train
from .models.config_models import DecoderConfig, RunConfig
from .models.data_models import ArchitectureEnum, SplitEnum
from .reporting.display import (
    display_criteria, display_eval_result, display_manifest_summary, display_network_summary, display_sweep_table,
)
from .reporting.tables import (
    kernel_frame, read_sweep_csv, write_eval_csv, write_kernel_csv, write_plot_data, write_sweep_csv, write_track_scores,
)
from .synth.audio import load_wav_logmel
from .synth.datasets import (
    build_experiment_datasets, load_features, load_manifest, load_sweep_tracks, load_training_examples,
    read_annotation, write_dataset,
)

# Commands accept trailing --section.key=value overrides.
OVERRIDABLE = dict(ignore_unknown_options=True, allow_extra_args=True)

console = Console()
err_console = Console(stderr=True)


def reports_errors(command):
    """Prints a TidbError in red and exits with the error's code."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except TidbError as e:
            err_console.print(f"[bold red]Error: {e}[/bold red]")
            sys.exit(e.exit_code)
    return wrapper


def _config(config_path: Optional[str], overrides: Sequence[str], base: Optional[dict] = None) -> RunConfig:
    return load_config(config_path, list(overrides), base=base)


def _int_list(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from e


def _with_decoder_overrides(base: DecoderConfig, config: RunConfig) -> DecoderConfig:
    """The checkpoint's decoder settings with any decoder keys set in `config` applied on top."""
    explicit = config.decoder.model_dump(include=config.decoder.model_fields_set)
    if not explicit:
        return base
    return DecoderConfig.model_validate({**base.model_dump(), **explicit})


def _progress() -> Progress:
    return Progress(TextColumn("[progress.description]{task.description}"), BarColumn(), MofNCompleteColumn(),
                    TimeElapsedColumn(), console=err_console, transient=True)


@click.group(context_settings=dict(help_option_names=['-h', '--help']))
@click.version_option(version=cli_version, prog_name="tidb")
def cli():
    """Tempo-invariant downbeat tracking.

Generate synthetic drum datasets, train scale-invariant or baseline networks, decode downbeats
with a bar-pointer HMM and measure how well tracking generalises across tempi."""


@cli.command("gen-data", context_settings=OVERRIDABLE)
@click.option('--out', '-o', 'out_dir', type=click.Path(file_okay=False), required=True, help="Output directory for the dataset.")
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True, dir_okay=False), help="key=value config file.")
@click.option('--aug', is_flag=True, default=False, help="Train on scale indices -1, 0 and 1 instead of 0 only.")
@click.option('--force', is_flag=True, default=False, help="Write into a non-empty output directory.")
@click.option('--jobs', '-j', type=int, help="Rendering processes (default: all cores).")
@click.pass_context
@reports_errors
def gen_data_command(ctx, out_dir, config_path, aug, force, jobs):
    """Render the train/validation/test tracks and write their manifest."""
    config = _config(config_path, ctx.args)
    if aug:
        config.data.aug = True
    total = len(build_experiment_datasets(config).tracks)
    with _progress() as progress:
        task = progress.add_task("Rendering", total=total)
        manifest_path = write_dataset(config, out_dir, force=force, jobs=jobs or config.jobs,
                                      on_track=lambda _: progress.advance(task))
    display_manifest_summary(load_manifest(manifest_path), console, str(manifest_path))


@cli.command("train", context_settings=OVERRIDABLE)
@click.option('--manifest', '-m', type=click.Path(exists=True), required=True, help="Dataset manifest (or its directory).")
@click.option('--out', '-o', 'out_path', type=click.Path(dir_okay=False), required=True, help="Checkpoint to write.")
@click.option('--arch', '-a', type=click.Choice(['inv', 'noinv'], case_sensitive=False), help="Network architecture (overrides model.arch).")
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True, dir_okay=False), help="key=value config file.")
@click.option('--resume', '-r', type=click.Path(exists=True, dir_okay=False), help="Continue training from this checkpoint.")
@click.option('--log-dir', default="logs", show_default=True, help="Directory for the run log and metrics file.")
@click.option('--jobs', '-j', type=int, help="Threads for batch evaluation.")
@click.option('--clear-cache', 'clear_cache_first', is_flag=True, default=False, help="Delete cached scaling tensors before building the network.")
@click.pass_context
@reports_errors
def train_command(ctx, manifest, out_path, arch, config_path, resume, log_dir, jobs, clear_cache_first):
    """Train a network on the manifest's train split, keeping the best validation parameters."""
    if clear_cache_first:
        err_console.print(f"[dim]Cleared {clear_cache()} cached scaling tensor(s)[/dim]")
    overrides = list(ctx.args) + ([f"--model.arch={arch.lower()}"] if arch else [])

    if resume:
        checkpoint = load_checkpoint(resume)
        if checkpoint.state is None:
            raise ConfigError(f"{resume} holds parameters only; it cannot be resumed")
        config = _config(config_path, overrides, base=checkpoint.config.model_dump(mode="json"))
        net = restore_network(Checkpoint(config=config, params=checkpoint.params))
        state = checkpoint.state
        console.print(f"[cyan]Resuming after epoch {state.epoch}[/cyan]")
    else:
        config = _config(config_path, overrides)
        with console.status("[dim]Building network...[/dim]", spinner="dots"):
            net = build_network(config)
        state = init_state(net, config.train, config.seed)

    with console.status("[dim]Loading training data...[/dim]", spinner="dots"):
        dtype = config.train.dtype
        splits = {}
        for split in (SplitEnum.TRAIN, SplitEnum.VAL):
            examples = load_training_examples(manifest, split, net.grid, config.train.target_window,
                                              config.decoder.beats_per_bar)
            for example in examples:
                example.features = example.features.astype(dtype)
            splits[split] = examples
    display_network_summary(net, console)
    console.print(f"[dim]{len(splits[SplitEnum.TRAIN])} training / {len(splits[SplitEnum.VAL])} validation tracks[/dim]")

    runlog = RunLog(log_dir, console=console)
    runlog.log(str(config))

    def on_epoch(metrics, improved):
        runlog.epoch(metrics, improved)
        save_checkpoint(out_path, config, state.params, state)

    try:
        state = train(net, splits[SplitEnum.TRAIN], splits[SplitEnum.VAL], config.train, seed=config.seed,
                      state=state, jobs=jobs or config.jobs, on_epoch=on_epoch)
    except TrainingDivergence as e:
        runlog.log(f"diverged: {e}")
        raise
    save_checkpoint(out_path, config, state.params, state)
    runlog.log(f"best epoch {state.best_epoch}, validation loss {state.best_val_loss!r}")
    console.print(f"[bold green]Checkpoint written:[/bold green] {out_path} "
                  f"[dim](best epoch {state.best_epoch}, log {runlog.log_file_path})[/dim]")


@cli.command("track")
@click.argument('input_path', type=click.Path(dir_okay=False))
@click.option('--checkpoint', '-k', type=click.Path(exists=True, dir_okay=False), required=True, help="Trained checkpoint.")
@click.option('--out', '-o', 'out_path', type=click.Path(dir_okay=False), help="Downbeat file to write (default: print).")
@click.option('--transition-lambda', type=float, help="Override the decoder's tempo-change probability.")
@reports_errors
def track_command(input_path, checkpoint, out_path, transition_lambda):
    """Track downbeats in a WAV file or a TIDB feature file."""
    ckpt = load_checkpoint(checkpoint)
    net = restore_network(ckpt)
    if Path(input_path).suffix.lower() == ".wav":
        features, frame_rate = load_wav_logmel(input_path, net.grid.r), net.grid.r
    else:
        features, frame_rate = load_features(input_path)
    decoder_cfg = ckpt.config.decoder
    if transition_lambda is not None:
        decoder_cfg = decoder_cfg.model_copy(update={"transition_lambda": transition_lambda})
    activations = predict(net, features.astype(ckpt.config.train.dtype), frame_rate)
    times = BarPointerDecoder(net.grid, decoder_cfg, net.arch).decode(activations)
    if out_path:
        write_downbeats(out_path, times)
        console.print(f"[green]{len(times)} downbeats written to {out_path}[/green]")
    else:
        for t in times:
            click.echo(f"{t:.3f}")


def _pair_files(estimates: Path, annotations: Path) -> List[tuple]:
    if annotations.is_file():
        return [(annotations.stem, estimates, annotations)]
    pairs = []
    for ann in sorted(p for p in annotations.iterdir() if p.is_file()):
        candidates = sorted(estimates.glob(f"{ann.stem}.*")) if estimates.is_dir() else []
        pairs.append((ann.stem, candidates[0] if candidates else None, ann))
    return pairs


@cli.command("eval")
@click.option('--estimates', '-e', type=click.Path(exists=True), required=True, help="Downbeat file or directory of them.")
@click.option('--annotations', '-a', type=click.Path(exists=True), required=True, help="Annotation file or directory, paired by file stem.")
@click.option('--out', '-o', 'out_csv', type=click.Path(dir_okay=False), help="Per-track CSV to write.")
@click.option('--tolerance', type=float, default=0.07, show_default=True, help="Matching window in seconds.")
@reports_errors
def eval_command(estimates, annotations, out_csv, tolerance):
    """Score estimated downbeats against annotations (F-measure)."""
    pairs = _pair_files(Path(estimates), Path(annotations))
    if not pairs:
        raise InputError(f"no annotation files found in {annotations}")
    per_track = {}
    for stem, est_path, ann_path in pairs:
        if est_path is None:
            err_console.print(f"[yellow]No estimates for {stem}; scoring it as all misses[/yellow]")
            est = []
        else:
            est = read_downbeats(est_path)
        per_track[stem] = f_measure(est, read_annotation(ann_path).downbeats, tolerance)
    result = summarize(per_track)
    display_eval_result(result, console, show_tracks=len(per_track) > 1)
    if out_csv:
        write_eval_csv(result, out_csv)
        console.print(f"[dim]Per-track scores written to {out_csv}[/dim]")


@cli.command("sweep", context_settings=OVERRIDABLE)
@click.option('--checkpoint', '-k', 'checkpoints', multiple=True, type=click.Path(exists=True, dir_okay=False), required=True,
              help="Checkpoint to evaluate; repeat for several models (named by file stem).")
@click.option('--manifest', '-m', type=click.Path(exists=True), required=True, help="Dataset manifest (or its directory).")
@click.option('--out', '-o', 'out_csv', type=click.Path(dir_okay=False), required=True, help="Sweep table CSV.")
@click.option('--plot-dir', type=click.Path(file_okay=False), help="Also write relative/absolute tempo plot data here.")
@click.option('--scales', help="Comma-separated scale indices to evaluate (default: all test scales).")
@click.option('--uniform-baseline', 'with_baseline', is_flag=True, default=False, help="Add a chance-level row from constant activations.")
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True, dir_okay=False), help="key=value config file (eval and decoder sections).")
@click.option('--jobs', '-j', type=int, help="Decoding processes (default: all cores).")
@click.pass_context
@reports_errors
def sweep_command(ctx, checkpoints, manifest, out_csv, plot_dir, scales, with_baseline, config_path, jobs):
    """Mean F1 with bootstrap intervals per tempo scale index for one or more checkpoints."""
    config = _config(config_path, ctx.args)
    models = []
    for path in checkpoints:
        ckpt = load_checkpoint(path)
        net = restore_network(ckpt)
        decoder = BarPointerDecoder(net.grid, _with_decoder_overrides(ckpt.config.decoder, config), net.arch)
        models.append(SweepModel(Path(path).stem, functools.partial(predict, net), decoder))
    if with_baseline:
        models.append(uniform_baseline(models[0].decoder))

    wanted = _int_list(scales)
    required = wanted if wanted is not None else load_manifest(manifest).test_scales
    with console.status("[dim]Loading test tracks...[/dim]", spinner="dots"):
        tracks = load_sweep_tracks(manifest, wanted)

    with _progress() as progress:
        task = progress.add_task("Scoring", total=len(tracks) * len(models))
        table = run_sweep(models, tracks, config.eval, required_scales=required, seed=config.seed,
                          jobs=jobs or config.jobs, on_track=lambda *_: progress.advance(task))

    display_sweep_table(table, console)
    write_sweep_csv(table, out_csv)
    write_track_scores(table, Path(out_csv).with_suffix(".tracks.csv"))
    if plot_dir:
        write_plot_data(table, plot_dir)
    console.print(f"[bold green]Sweep table written:[/bold green] {out_csv}")


@cli.command("check-sweep")
@click.argument('sweep_csv', type=click.Path(exists=True, dir_okay=False))
@click.option('--inv', 'inv_name', default="inv", show_default=True, help="Model name of the invariant network.")
@click.option('--noinv', 'noinv_name', default="noinv", show_default=True, help="Model name of the plain baseline.")
@click.option('--aug', 'aug_name', default="noinv_aug", show_default=True,
              help="Model name of the tempo-augmented baseline; its checks are skipped when it is absent.")
@click.option('--checkpoint', '-k', type=click.Path(exists=True, dir_okay=False),
              help="inv checkpoint whose tempo-bin predictions are checked on the test tracks.")
@click.option('--manifest', '-m', type=click.Path(exists=True), help="Dataset manifest for the tempo-bin check.")
@click.option('--scale', 'scale_index', type=int, default=0, show_default=True, help="Scale index of the tempo-bin check.")
@reports_errors
def check_sweep_command(sweep_csv, inv_name, noinv_name, aug_name, checkpoint, manifest, scale_index):
    """Check a finished sweep against the tempo-generalisation criteria; exits 5 when any fails."""
    if bool(checkpoint) != bool(manifest):
        raise ConfigError("--checkpoint and --manifest go together")
    frame = read_sweep_csv(sweep_csv)
    aug = aug_name if aug_name in set(frame["model"]) else None
    if aug is None:
        console.print(f"[yellow]No rows for {aug_name!r}; skipping the augmentation checks.[/yellow]")
    results = check_tempo_generalisation(frame, inv_name, noinv_name, aug)

    if checkpoint:
        ckpt = load_checkpoint(checkpoint)
        net = restore_network(ckpt)
        if net.arch != ArchitectureEnum.INV:
            raise ConfigError(f"{checkpoint} is a {net.arch.value} network; the tempo-bin check needs inv")
        examples = load_training_examples(manifest, SplitEnum.TEST, net.grid, ckpt.config.train.target_window,
                                          ckpt.config.decoder.beats_per_bar, scales=[scale_index])
        results.append(check_tempo_bins([predict(net, e.features) for e in examples], [e.targets for e in examples]))

    display_criteria(results, console)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise AcceptanceFailure(failed)
    console.print("[bold green]All acceptance checks passed.[/bold green]")


@cli.command("inspect-kernel")
@click.option('--checkpoint', '-k', type=click.Path(exists=True, dir_okay=False), required=True, help="Checkpoint of an inv network.")
@click.option('--layer', '-l', default="ti.0", show_default=True, help="Scale-invariant layer to dump.")
@click.option('--scales', help="Comma-separated scale bins (default: all).")
@click.option('--out', '-o', 'out_csv', type=click.Path(dir_okay=False), required=True, help="Long-format CSV to write.")
@reports_errors
def inspect_kernel_command(checkpoint, layer, scales, out_csv):
    """Dump a pattern kernel k and its materialised frame-time kernels h_j."""
    net = restore_network(load_checkpoint(checkpoint))
    frame = kernel_frame(net, layer, _int_list(scales))
    write_kernel_csv(frame, out_csv)
    k_shape = net.params[f"{layer}.pattern"].shape
    console.print(f"[green]{layer}: k {' x '.join(map(str, k_shape))}, "
                  f"{frame['scale'].nunique() - 1} scale(s) written to {out_csv}[/green]")


if __name__ == '__main__':
    cli()
