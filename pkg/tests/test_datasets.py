import numpy as np
import pytest

from tidb.core.errors import ConfigError, FormatError
from tidb.engine.scaling import build_scale_grid
from tidb.models.config_models import DataConfig, RunConfig
from tidb.models.data_models import SplitEnum, TrackAnnotation
from tidb.synth.datasets import (
    build_experiment_datasets, load_features, load_manifest, load_sweep_tracks, load_training_examples,
    read_annotation, render_seed, save_features, write_annotation, write_dataset,
)


def small_config(**data_overrides):
    data = dict(n_patterns=2, profiles_train=2, profiles_test=1, scale_min=-1, scale_max=1, repetitions=1)
    data.update(data_overrides)
    return RunConfig(seed=3, data=DataConfig(**data))


class TestExperimentSplits:

    def test_full_size_counts(self):
        datasets = build_experiment_datasets(RunConfig())
        assert len(datasets.test) == 160 * 27 * 2
        assert len(datasets.train) + len(datasets.val) == 160 * 4
        assert {t.scale_index for t in datasets.train + datasets.val} == {0}
        assert datasets.test_scales == list(range(-13, 14))

    def test_small_counts(self):
        datasets = build_experiment_datasets(small_config())
        assert len(datasets.test) == 2 * 3 * 1
        assert len(datasets.train) + len(datasets.val) == 2 * 1 * 2
        assert len(datasets.val) >= 1

    def test_aug_adds_neighbouring_scales(self):
        datasets = build_experiment_datasets(small_config(aug=True))
        assert datasets.train_scales == [-1, 0, 1]
        assert len(datasets.train) + len(datasets.val) == 2 * 3 * 2

    def test_profiles_disjoint(self):
        datasets = build_experiment_datasets(small_config())
        train_ids = {t.profile.id for t in datasets.train + datasets.val}
        test_ids = {t.profile.id for t in datasets.test}
        assert train_ids and test_ids and not train_ids & test_ids

    def test_overlapping_profiles(self):
        cfg = small_config(train_profile_ids=["studio", "garage"], test_profile_ids=["garage"])
        with pytest.raises(ConfigError):
            build_experiment_datasets(cfg)

    def test_render_seeds_do_not_depend_on_order(self):
        first = {t.track_id: t.render_seed for t in build_experiment_datasets(small_config()).tracks}
        again = {t.track_id: t.render_seed for t in build_experiment_datasets(small_config(n_patterns=3)).tracks}
        assert all(again[tid] == seed for tid, seed in first.items())
        assert render_seed(3, "a") != render_seed(4, "a")

    def test_generated_patterns_top_up(self):
        datasets = build_experiment_datasets(small_config(n_patterns=18))
        ids = [p.id for p in datasets.patterns]
        assert ids[:2] == ["rock", "disco"] and ids[-1] == "gen-3-0001"


class TestFiles:

    def test_features(self, tmp_path):
        features = np.random.default_rng(42).random((30, 64))
        save_features(tmp_path / "f.tidb", features, track_id="t")
        loaded, rate = load_features(tmp_path / "f.tidb")
        np.testing.assert_array_equal(loaded, features)
        assert rate == 50.0

    def test_features_wrong_kind(self, tmp_path):
        (tmp_path / "f.tidb").write_bytes(b"TIDB garbage")
        with pytest.raises(FormatError):
            load_features(tmp_path / "f.tidb")

    def test_annotation_labels(self, tmp_path):
        annotation = TrackAnnotation(downbeats=[0.5, 2.5], beats=[0.5, 1.0, 1.5, 2.0, 2.5], duration=3.0)
        write_annotation(tmp_path / "a.txt", annotation)
        lines = (tmp_path / "a.txt").read_text().splitlines()
        assert lines[0] == "0.500000 db" and lines[1] == "1.000000 beat"
        assert read_annotation(tmp_path / "a.txt", duration=3.0) == annotation

    def test_plain_downbeat_list(self, tmp_path):
        (tmp_path / "d.txt").write_text("0.25\n1.75\n")
        annotation = read_annotation(tmp_path / "d.txt")
        assert annotation.downbeats == [0.25, 1.75]
        assert annotation.beats == []

    def test_bad_annotations(self, tmp_path):
        (tmp_path / "a.txt").write_text("0.5 snare\n")
        with pytest.raises(FormatError):
            read_annotation(tmp_path / "a.txt")
        (tmp_path / "b.txt").write_text("1.0 db\n0.5 db\n")
        with pytest.raises(FormatError):
            read_annotation(tmp_path / "b.txt")


class TestWriteDataset:

    @pytest.fixture
    def written(self, tmp_path):
        cfg = small_config()
        return cfg, write_dataset(cfg, tmp_path / "data", jobs=1)

    def test_manifest(self, written):
        _, manifest_path = written
        manifest = load_manifest(manifest_path)
        assert len(manifest.entries) == 10
        assert manifest.train_scales == [0]
        assert manifest.test_scales == [-1, 0, 1]
        root = manifest_path.parent
        for entry in manifest.entries:
            assert (root / entry.feature_path).exists()
            assert (root / entry.annotation_path).exists()
        assert (root / "patterns" / "rock.json").exists()
        assert (root / "profiles.json").exists()
        assert load_manifest(root) == manifest

    def test_refuses_non_empty_directory(self, written):
        cfg, manifest_path = written
        with pytest.raises(ConfigError):
            write_dataset(cfg, manifest_path.parent, jobs=1)
        assert write_dataset(cfg, manifest_path.parent, force=True, jobs=1) == manifest_path

    def test_parallel_rendering_matches_serial(self, written, tmp_path):
        cfg, manifest_path = written
        parallel = write_dataset(cfg, tmp_path / "parallel", jobs=2)
        for entry in load_manifest(manifest_path).entries:
            a = (manifest_path.parent / entry.feature_path).read_bytes()
            b = (parallel.parent / entry.feature_path).read_bytes()
            assert a == b

    def test_training_examples(self, written):
        _, manifest_path = written
        grid = build_scale_grid(0.25, 8, 25, 50, 4, 64)
        train = load_training_examples(manifest_path, SplitEnum.TRAIN, grid, window=0.1)
        val = load_training_examples(manifest_path, SplitEnum.VAL, grid, window=0.1)
        assert len(train) + len(val) == 4 and val
        for example in train + val:
            assert example.features.shape[1] == 64
            assert example.targets.shape == (example.features.shape[0], 26)
            np.testing.assert_allclose(example.targets.sum(axis=1), 1.0)

    def test_sweep_tracks(self, written):
        _, manifest_path = written
        tracks = load_sweep_tracks(manifest_path)
        assert sorted({t.scale_index for t in tracks}) == [-1, 0, 1]
        assert len(tracks) == 6
        rock = [t for t in tracks if t.track_id.startswith("rock")]
        assert {round(t.effective_bpm, 3) for t in rock} == {round(120 * 2 ** (i / 26), 3) for i in (-1, 0, 1)}
        assert all(len(t.downbeats) == 4 for t in tracks)
        assert len(load_sweep_tracks(manifest_path, scales=[0])) == 2

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError):
            load_manifest(tmp_path / "nowhere.json")
