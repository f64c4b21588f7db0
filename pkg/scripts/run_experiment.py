#!/usr/bin/env python3
"""
Tempo-generalisation experiment launcher

Chains the tidb subcommands into the desk-scale experiment: renders the plain and the
augmented datasets, trains inv, noinv and noinv_aug, then sweeps all three over the
held-out tempo scales and checks the sweep against the acceptance criteria. Every
artefact lands in one timestamped run directory; the exit code is non-zero when a check fails.

Usage:
    python run_experiment.py --config experiment.cfg --jobs 8
"""

import argparse
import subprocess
import sys
from datetime import datetime
from pathlib import Path

SWEEP_SCALES = "-12,-8,-4,-1,0,1,4,8,12"


def run_step(title, command):
    print(f"\n▶ {title}")
    print("  " + " ".join(command))
    process = subprocess.Popen(command, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                               universal_newlines=True, bufsize=1)
    for line in iter(process.stdout.readline, ''):
        print(f"  {line.rstrip()}")
    process.wait()
    if process.returncode != 0:
        print(f"❌ {title} failed with exit code {process.returncode}")
    return process.returncode


def main():
    parser = argparse.ArgumentParser(
        description="Run the tempo-generalisation experiment end to end.",
        formatter_class=argparse.RawTextHelpFormatter,
        epilog="""
Examples:
  # Default configuration, all cores
  python run_experiment.py

  # Smaller run with a config file and extra overrides
  python run_experiment.py --config small.cfg --set data.n_patterns=64 --set train.max_epochs=50
        """
    )
    parser.add_argument("--config", "-c", help="key=value config file passed to every step.")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Config override passed to every step (repeatable).")
    parser.add_argument("--jobs", "-j", type=int, help="Worker count for rendering, training and decoding.")
    parser.add_argument("--run-dir", help="Output directory (default: experiment_runs/<timestamp>).")
    parser.add_argument("--scales", default=SWEEP_SCALES, help=f"Scale indices to sweep (default: {SWEEP_SCALES}).")
    parser.add_argument("--skip-data", action="store_true",
                        help="Reuse the datasets already in the run directory.")
    args = parser.parse_args()

    run_dir = Path(args.run_dir or Path.cwd() / "experiment_runs" / datetime.now().strftime("%Y%m%d_%H%M%S"))
    run_dir.mkdir(parents=True, exist_ok=True)
    print(f"[*] Experiment artefacts will be saved to: {run_dir.resolve()}")

    tidb = [sys.executable, "-m", "tidb.main_cli"]
    shared = (["-c", args.config] if args.config else []) + [f"--{o}" for o in args.overrides]
    jobs = ["-j", str(args.jobs)] if args.jobs else []
    data, data_aug = run_dir / "data", run_dir / "data_aug"

    steps = []
    if not args.skip_data:
        steps += [
            ("Rendering the dataset", tidb + ["gen-data", "-o", str(data), "--force"] + jobs + shared),
            ("Rendering the augmented dataset", tidb + ["gen-data", "-o", str(data_aug), "--aug", "--force"] + jobs + shared),
        ]
    for name, arch, manifest in (("inv", "inv", data), ("noinv", "noinv", data), ("noinv_aug", "noinv", data_aug)):
        steps.append((f"Training {name}", tidb + ["train", "-m", str(manifest), "-o", str(run_dir / f"{name}.tidb"),
                                                  "--arch", arch, "--log-dir", str(run_dir / "logs")] + jobs + shared))
    steps.append(("Sweeping tempo scales", tidb + [
        "sweep", "-m", str(data), "-o", str(run_dir / "sweep.csv"), "--plot-dir", str(run_dir / "plots"),
        f"--scales={args.scales}", "--uniform-baseline",
        "-k", str(run_dir / "inv.tidb"), "-k", str(run_dir / "noinv.tidb"), "-k", str(run_dir / "noinv_aug.tidb"),
    ] + jobs + shared))

    for title, command in steps:
        code = run_step(title, command)
        if code != 0:
            return code

    check_code = run_step("Checking acceptance criteria", tidb + [
        "check-sweep", str(run_dir / "sweep.csv"), "-k", str(run_dir / "inv.tidb"), "-m", str(data),
    ])

    print("\n✅ Experiment complete." if check_code == 0 else "\n⚠️  Experiment complete, acceptance checks failed.")
    print(f"   Sweep table:  {run_dir / 'sweep.csv'}")
    print(f"   Plot data:    {run_dir / 'plots'}")
    print(f"   Checkpoints:  {', '.join(str(run_dir / f'{n}.tidb') for n in ('inv', 'noinv', 'noinv_aug'))}")
    print(f"   Training logs: {run_dir / 'logs'}")
    return check_code


if __name__ == "__main__":
    sys.exit(main())
