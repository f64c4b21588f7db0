import numpy as np
import pandas as pd
import pytest
import soundfile as sf
from click.testing import CliRunner

from tidb import main_cli
from tidb.core.config import load_config
from tidb.core.constants import SWEEP_CSV_HEADER
from tidb.core.errors import TrainingDivergence
from tidb.engine.checkpoint import load_checkpoint
from tidb.main_cli import cli
from tidb.models.config_models import DecoderConfig
from tidb.synth.datasets import load_manifest

SMALL_CONFIG = """\
# tiny experiment
seed = 1
grid.tau0 = 0.32
grid.T = 4
grid.S = 5
grid.B = 1
grid.M = 8
model.frontend_channels = [4]
model.ti_channels = [2, 1]
model.dilated_channels = [2, 1]
model.dilated_kernel = 3
model.dilations = [1, 2]
train.dtype = float64
train.max_epochs = 2
train.batch_size = 2
train.excerpt_seconds = 5
data.n_patterns = 2
data.profiles_train = 2
data.profiles_test = 1
data.scale_min = -1
data.scale_max = 1
data.repetitions = 1
eval.bootstrap_iterations = 100
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated dataset plus inv and noinv checkpoints, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "small.cfg"
    config.write_text(SMALL_CONFIG)
    runner = CliRunner()
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("TIDB_CACHE_DIR", str(root / "cache"))
        gen = runner.invoke(cli, ["gen-data", "-o", str(root / "data"), "-c", str(config), "-j", "1"])
        assert gen.exit_code == 0, gen.output
        for arch in ("inv", "noinv"):
            result = runner.invoke(cli, ["train", "-m", str(root / "data"), "-o", str(root / f"{arch}.tidb"),
                                         "-c", str(config), "--arch", arch, "--log-dir", str(root / "logs"), "-j", "1"])
            assert result.exit_code == 0, result.output
    return root


class TestGenData:

    def test_default_train_scale(self, workspace):
        manifest = load_manifest(workspace / "data")
        assert manifest.train_scales == [0]
        assert manifest.test_scales == [-1, 0, 1]
        assert len(manifest.entries) == 2 * 2 + 2 * 3

    def test_aug(self, workspace, tmp_path):
        runner = CliRunner()
        result = runner.invoke(cli, ["gen-data", "-o", str(tmp_path / "aug"), "-c", str(workspace / "small.cfg"),
                                     "--aug", "-j", "1"])
        assert result.exit_code == 0, result.output
        assert load_manifest(tmp_path / "aug").train_scales == [-1, 0, 1]

    def test_refuses_existing_directory(self, workspace):
        result = CliRunner().invoke(cli, ["gen-data", "-o", str(workspace / "data"), "-c", str(workspace / "small.cfg")])
        assert result.exit_code == 2

    def test_unknown_config_key(self, tmp_path):
        result = CliRunner().invoke(cli, ["gen-data", "-o", str(tmp_path / "x"), "--data.colour=red"])
        assert result.exit_code == 2


class TestTrain:

    def test_checkpoints(self, workspace):
        inv = load_checkpoint(workspace / "inv.tidb")
        noinv = load_checkpoint(workspace / "noinv.tidb")
        assert inv.config.model.arch.value == "inv"
        assert noinv.config.model.arch.value == "noinv"
        assert len(inv.history) == 2
        assert inv.config.decoder.tempo_subdivision == 4
        assert any(p.suffix == ".log" for p in (workspace / "logs").iterdir())

    def test_resume_continues_epochs(self, workspace, tmp_path):
        resumed = tmp_path / "resumed.tidb"
        resumed.write_bytes((workspace / "inv.tidb").read_bytes())
        result = CliRunner().invoke(cli, ["train", "-m", str(workspace / "data"), "-o", str(resumed),
                                          "--resume", str(resumed), "--log-dir", str(tmp_path / "logs"),
                                          "-j", "1", "--train.max_epochs=3"])
        assert result.exit_code == 0, result.output
        assert [m.epoch for m in load_checkpoint(resumed).history] == [1, 2, 3]

    def test_divergence_exit_code(self, workspace, tmp_path, monkeypatch):
        def diverge(*args, **kwargs):
            raise TrainingDivergence(1, None)
        monkeypatch.setattr(main_cli, "train", diverge)
        result = CliRunner().invoke(cli, ["train", "-m", str(workspace / "data"), "-o", str(tmp_path / "x.tidb"),
                                          "-c", str(workspace / "small.cfg"), "--log-dir", str(tmp_path / "logs")])
        assert result.exit_code == 4


class TestTrack:

    def test_feature_file(self, workspace, tmp_path):
        entry = load_manifest(workspace / "data").entries[-1]
        out = tmp_path / "db.txt"
        result = CliRunner().invoke(cli, ["track", str(workspace / "data" / entry.feature_path),
                                          "-k", str(workspace / "inv.tidb"), "-o", str(out)])
        assert result.exit_code == 0, result.output
        times = [float(line) for line in out.read_text().split()]
        assert times == sorted(times)

    def test_wav_file(self, workspace, tmp_path):
        rng = np.random.default_rng(42)
        wav = tmp_path / "clip.wav"
        sf.write(str(wav), 0.1 * rng.standard_normal(3 * 22050), 22050)
        result = CliRunner().invoke(cli, ["track", str(wav), "-k", str(workspace / "noinv.tidb")])
        assert result.exit_code == 0, result.output

    def test_missing_input(self, workspace, tmp_path):
        result = CliRunner().invoke(cli, ["track", str(tmp_path / "nothing.tidb"), "-k", str(workspace / "inv.tidb")])
        assert result.exit_code == 3


class TestEval:

    def test_directories_paired_by_stem(self, tmp_path):
        (tmp_path / "est").mkdir()
        (tmp_path / "ann").mkdir()
        (tmp_path / "est" / "a.txt").write_text("1.000\n3.000\n")
        (tmp_path / "ann" / "a.txt").write_text("1.0 db\n2.0 beat\n3.0 db\n")
        (tmp_path / "est" / "b.txt").write_text("1.000\n")
        (tmp_path / "ann" / "b.txt").write_text("1.0 db\n2.0 db\n")
        out = tmp_path / "scores.csv"
        result = CliRunner().invoke(cli, ["eval", "-e", str(tmp_path / "est"), "-a", str(tmp_path / "ann"), "-o", str(out)])
        assert result.exit_code == 0, result.output
        scores = pd.read_csv(out).set_index("track")
        assert scores.loc["a", "f1"] == 1.0
        assert scores.loc["b", "recall"] == 0.5
        assert scores.loc["ALL", "matched"] == 3

    def test_single_files(self, tmp_path):
        (tmp_path / "est.txt").write_text("1.050\n")
        (tmp_path / "ann.txt").write_text("1.0\n")
        result = CliRunner().invoke(cli, ["eval", "-e", str(tmp_path / "est.txt"), "-a", str(tmp_path / "ann.txt")])
        assert result.exit_code == 0, result.output


class TestSweep:

    def test_sweep_with_baseline(self, workspace, tmp_path):
        out = tmp_path / "sweep.csv"
        result = CliRunner().invoke(cli, ["sweep", "-k", str(workspace / "inv.tidb"), "-k", str(workspace / "noinv.tidb"),
                                          "-m", str(workspace / "data"), "-o", str(out), "--uniform-baseline",
                                          "--plot-dir", str(tmp_path / "plots"), "-j", "1",
                                          "--eval.bootstrap_iterations=50"])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out)
        assert list(table.columns) == SWEEP_CSV_HEADER
        by_scale = table.dropna(subset=["scale_index"])
        assert set(by_scale["model"]) == {"inv", "noinv", "uniform"}
        assert sorted(by_scale["scale_index"].unique()) == [-1, 0, 1]
        assert (by_scale["ci_lo"] <= by_scale["mean_f1"] + 1e-9).all()
        assert (tmp_path / "plots" / "relative_tempo.csv").exists()
        assert (tmp_path / "sweep.tracks.csv").exists()

    def test_missing_scales(self, workspace, tmp_path):
        result = CliRunner().invoke(cli, ["sweep", "-k", str(workspace / "inv.tidb"), "-m", str(workspace / "data"),
                                          "-o", str(tmp_path / "s.csv"), "--scales=-1,0,5", "-j", "1"])
        assert result.exit_code == 3

    def test_decoder_overrides_reach_the_decoder(self, workspace, tmp_path):
        result = CliRunner().invoke(cli, ["sweep", "-k", str(workspace / "inv.tidb"), "-m", str(workspace / "data"),
                                          "-o", str(tmp_path / "s.csv"), "-j", "1", "--decoder.max_states=10"])
        assert result.exit_code == 2

    def test_decoder_overrides_keep_checkpoint_settings(self):
        base = DecoderConfig(transition_lambda=0.1)
        merged = main_cli._with_decoder_overrides(base, load_config(overrides=["--decoder.tempo_subdivision=2"]))
        assert merged.tempo_subdivision == 2
        assert merged.transition_lambda == 0.1
        assert main_cli._with_decoder_overrides(base, load_config()) is base


def write_curves(path, curves):
    rows = [dict(model=model, scale_index=i, effective_bpm_bucket="", mean_f1=f1, ci_lo=f1, ci_hi=f1, n_tracks=3)
            for model, curve in curves.items() for i, f1 in curve.items()]
    pd.DataFrame(rows, columns=SWEEP_CSV_HEADER).to_csv(path, index=False)
    return path


class TestCheckSweep:
    SCALES = [-12, -8, -4, -1, 0, 1, 4, 8, 12]

    def passing_curves(self):
        return {"inv": {i: 0.9 for i in self.SCALES},
                "noinv": {i: 0.9 if abs(i) <= 1 else 0.5 for i in self.SCALES}}

    def test_passing_sweep(self, tmp_path):
        path = write_curves(tmp_path / "sweep.csv", self.passing_curves())
        result = CliRunner().invoke(cli, ["check-sweep", str(path)])
        assert result.exit_code == 0, result.output
        assert "augmentation checks" in result.output

    def test_failing_sweep(self, tmp_path):
        curves = self.passing_curves()
        curves["noinv"] = dict(curves["inv"])
        result = CliRunner().invoke(cli, ["check-sweep", str(write_curves(tmp_path / "sweep.csv", curves))])
        assert result.exit_code == 5

    def test_not_a_sweep_table(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        assert CliRunner().invoke(cli, ["check-sweep", str(path)]).exit_code == 3

    def test_tempo_bin_check(self, workspace, tmp_path):
        path = write_curves(tmp_path / "sweep.csv", self.passing_curves())
        result = CliRunner().invoke(cli, ["check-sweep", str(path), "-k", str(workspace / "inv.tidb"),
                                          "-m", str(workspace / "data")])
        assert result.exit_code in (0, 5), result.output
        assert "tempo_bins" in result.output

    def test_tempo_bin_check_needs_inv(self, workspace, tmp_path):
        path = write_curves(tmp_path / "sweep.csv", self.passing_curves())
        base = ["check-sweep", str(path), "-m", str(workspace / "data")]
        assert CliRunner().invoke(cli, base + ["-k", str(workspace / "noinv.tidb")]).exit_code == 2
        assert CliRunner().invoke(cli, base).exit_code == 2


class TestInspectKernel:

    def test_long_format(self, workspace, tmp_path):
        out = tmp_path / "kernel.csv"
        result = CliRunner().invoke(cli, ["inspect-kernel", "-k", str(workspace / "inv.tidb"), "--scales", "0,4", "-o", str(out)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["kind", "layer", "scale", "index", "in_channel", "out_channel", "value"]
        assert (frame["kind"] == "k").sum() == 8 * 4 * 2
        assert set(frame.loc[frame["kind"] == "h", "scale"]) == {0, 4}

    def test_unknown_layer(self, workspace, tmp_path):
        result = CliRunner().invoke(cli, ["inspect-kernel", "-k", str(workspace / "inv.tidb"), "-l", "dilated.0",
                                          "-o", str(tmp_path / "k.csv")])
        assert result.exit_code == 2

    def test_noinv_has_no_pattern_kernels(self, workspace, tmp_path):
        result = CliRunner().invoke(cli, ["inspect-kernel", "-k", str(workspace / "noinv.tidb"), "-o", str(tmp_path / "k.csv")])
        assert result.exit_code == 2
