import itertools
import math

import numpy as np
import pytest

from tidb.core.errors import CapacityError, FormatError, InputError, ParameterError, ShapeError
from tidb.engine.decoder import (
    BarPointerDecoder, StatePath, TransitionModel, build_state_space, decode_activations, downbeat_width,
    extract_downbeats, interpolation_weights, observation_densities, observation_probs, path_log_probability,
    read_downbeats, viterbi, write_downbeats,
)
from tidb.engine.evalkit import score_track
from tidb.engine.network import make_targets
from tidb.engine.scaling import build_scale_grid
from tidb.models.config_models import DecoderConfig, RunConfig
from tidb.models.data_models import TrackAnnotation

REFERENCE_GRID = dict(tau0=0.25, T=8, S=25, r=50, B=4, M=64)


@pytest.fixture(scope="module")
def grid():
    return build_scale_grid(**REFERENCE_GRID)


@pytest.fixture(scope="module")
def reference_space(grid):
    return build_state_space(grid, tempo_subdivision=1)


def brute_force_max(obs, dense, init):
    with np.errstate(divide="ignore"):
        log_trans, log_obs, log_init = np.log(dense), np.log(obs), np.log(init)
    acc = log_init + log_obs[0]
    for n in range(1, obs.shape[0]):
        acc = acc[..., None] + log_trans + log_obs[n]
    return acc.max()


def oracle_track(rng, scale_index, bars=8):
    bpm = 120.0 * 2.0 ** (scale_index / 26)
    bar = 4 * 60.0 / bpm
    offset = rng.uniform(0.0, bar)
    downbeats = [offset + k * bar for k in range(bars)]
    duration = offset + bars * bar
    return TrackAnnotation(downbeats=downbeats, tempo_curve=[(0.0, bpm)], duration=duration)


class TestStateSpace:

    def test_reference_tempo_range(self, reference_space):
        space, _ = reference_space
        assert space.tempo_states[0] == pytest.approx(0.25)
        assert space.tempo_states[-1] == pytest.approx(2.0)
        assert space.bar_lengths.min() == 50
        assert space.bar_lengths.max() == 400
        assert space.n_tempi == 25

    def test_state_bookkeeping(self, reference_space):
        space, trans = reference_space
        assert space.n_states == space.bar_lengths.sum() == trans.n_states
        assert np.all(space.downbeat_widths == 3)
        downbeats = space.downbeat_mask.sum()
        assert downbeats == space.downbeat_widths.sum()
        assert space.sigma == pytest.approx((space.bar_lengths.sum() - 75) / 75)
        assert space.state(3, 0) == space.bar_lengths[:3].sum()
        assert space.max_bar_length == 400

    def test_outgoing_probabilities_sum_to_one(self, reference_space):
        _, trans = reference_space
        np.testing.assert_allclose(trans.outgoing_sums(), 1.0, atol=1e-12)

    def test_tempo_changes_only_at_bar_end(self, grid):
        space, trans = build_state_space(grid, transition_lambda=0.1)
        coo = trans.incoming.tocoo()
        dest, src = coo.row, coo.col
        changes = space.state_tempo[src] != space.state_tempo[dest]
        assert np.all(space.state_position[dest[changes]] == 0)
        assert np.all(space.state_position[src[changes]] == space.bar_lengths[space.state_tempo[src[changes]]] - 1)
        assert np.all(np.abs(space.state_tempo[src] - space.state_tempo[dest]) <= 1)
        interior_end = space.state(5, space.bar_lengths[5] - 1)
        assert trans.incoming[space.state(5, 0), interior_end] == pytest.approx(0.8)
        edge_end = space.state(0, space.bar_lengths[0] - 1)
        assert trans.incoming[space.state(0, 0), edge_end] == pytest.approx(0.8 / 0.9)

    def test_zero_lambda_has_no_tempo_edges(self, grid):
        space, trans = build_state_space(grid, transition_lambda=0.0)
        coo = trans.incoming.tocoo()
        assert np.all(space.state_tempo[coo.row] == space.state_tempo[coo.col])

    def test_subdivision(self, grid):
        space, _ = build_state_space(grid, tempo_subdivision=3)
        assert space.n_tempi == 75
        assert np.all(np.diff(np.log(space.tempo_states)) > 0)

    def test_invalid_parameters(self, grid):
        with pytest.raises(ParameterError):
            build_state_space(grid, transition_lambda=0.6)
        with pytest.raises(ParameterError):
            build_state_space(grid, tempo_subdivision=0)
        with pytest.raises(CapacityError):
            build_state_space(grid, max_states=100)

    def test_downbeat_width(self):
        assert downbeat_width(50) == 3
        assert downbeat_width(10) == 1
        assert downbeat_width(1) == 1


class TestObservations:

    def test_exact_tempo_match(self, grid, reference_space):
        space, _ = reference_space
        o = np.random.default_rng(42).dirichlet(np.ones(26), size=5)
        densities, pointers = observation_densities(o, space, grid)
        np.testing.assert_allclose(densities[:, :25], o[:, :25], atol=1e-12)
        assert densities.shape == (5, 26)
        assert np.all(pointers[space.downbeat_mask] == space.state_tempo[space.downbeat_mask])
        assert np.all(pointers[~space.downbeat_mask] == 25)

    def test_log_midpoint_interpolation(self, grid):
        mid = math.sqrt(grid.taus[3] * grid.taus[4])
        c = interpolation_weights(grid, np.array([mid, 0.1, 5.0]))
        np.testing.assert_allclose(c[[3, 4], 0], [0.5, 0.5], atol=1e-12)
        assert c[0, 1] == pytest.approx(1.0)
        assert c[24, 2] == pytest.approx(1.0)
        np.testing.assert_allclose(c.sum(axis=0), 1.0)

    def test_uniform_activations(self, grid, reference_space):
        space, _ = reference_space
        o = np.full((4, 26), 1 / 26)
        obs = observation_probs(o, space, grid)
        assert obs.shape == (4, space.n_states)
        np.testing.assert_allclose(obs[:, space.downbeat_mask], 1 / 26)
        np.testing.assert_allclose(obs[:, ~space.downbeat_mask], 1 / (26 * space.sigma * 25))

    def test_floor(self, grid, reference_space):
        space, _ = reference_space
        o = np.zeros((2, 26))
        o[:, 25] = 1.0
        obs = observation_probs(o, space, grid)
        assert obs.min() == pytest.approx(1e-12)
        assert np.all(np.isfinite(np.log(obs)))

    def test_baseline_observation_model(self, grid, reference_space):
        space, _ = reference_space
        o = np.array([[0.8, 0.2], [0.1, 0.9]])
        obs = observation_probs(o, space, grid, arch="noinv")
        np.testing.assert_allclose(obs[:, space.downbeat_mask], [[0.8], [0.1]] * np.ones(space.downbeat_mask.sum()))
        np.testing.assert_allclose(obs[0, ~space.downbeat_mask], 0.2 / space.sigma)

    def test_bin_count_mismatch(self, grid, reference_space):
        space, _ = reference_space
        with pytest.raises(ShapeError):
            observation_densities(np.ones((3, 25)) / 25, space, grid)
        with pytest.raises(ShapeError):
            observation_densities(np.ones((3, 3)) / 3, space, grid, arch="noinv")


class TestViterbi:

    def test_two_state_example_matches_enumeration(self):
        dense = np.array([[0.7, 0.3], [0.4, 0.6]])
        obs = np.array([[0.9, 0.2], [0.1, 0.8], [0.6, 0.5]])
        init = np.array([0.5, 0.5])
        trans = TransitionModel.from_dense(dense)
        scored = {p: path_log_probability(p, obs, trans, init) for p in itertools.product(range(2), repeat=3)}
        best = max(scored, key=scored.get)
        path = viterbi(obs, trans, init)
        assert tuple(path.states) == best
        assert path.log_prob == pytest.approx(scored[best], abs=1e-12)

    def test_random_instances_match_exhaustive_search(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            k = int(rng.integers(2, 21))
            n = int(rng.integers(1, 9))
            while k ** n > 200_000:
                n -= 1
            dense = rng.random((k, k)) * (rng.random((k, k)) < 0.5)
            dense[np.arange(k), np.arange(k)] += 0.05
            dense /= dense.sum(axis=1, keepdims=True)
            obs = rng.random((n, k)) + 1e-3
            init = rng.dirichlet(np.ones(k))
            trans = TransitionModel.from_dense(dense)
            path = viterbi(obs, trans, init)
            assert abs(path.log_prob - brute_force_max(obs, dense, init)) <= 1e-9
            assert abs(path_log_probability(path.states, obs, trans, init) - path.log_prob) <= 1e-9

    def test_beats_random_valid_paths(self, grid):
        space, trans = build_state_space(build_scale_grid(tau0=0.32, T=4, S=3, r=20, B=1, M=4),
                                         tempo_subdivision=1, transition_lambda=0.2)
        rng = np.random.default_rng(42)
        obs = rng.random((40, space.n_states)) + 1e-3
        best = viterbi(obs, trans).log_prob
        dense = trans.to_dense()
        for _ in range(1000):
            states = [int(rng.integers(space.n_states))]
            for _ in range(39):
                row = dense[states[-1]]
                states.append(int(rng.choice(space.n_states, p=row / row.sum())))
            assert path_log_probability(states, obs, trans) <= best + 1e-9

    def test_uniform_observations_follow_the_prior(self):
        trans = TransitionModel.from_dense(np.array([[0.1, 0.9], [0.2, 0.8]]))
        path = viterbi(np.ones((4, 2)), trans, np.array([0.5, 0.5]))
        np.testing.assert_array_equal(path.states, [0, 1, 1, 1])

    def test_single_state(self):
        path = viterbi(np.full((5, 1), 0.3), TransitionModel.from_dense(np.array([[1.0]])))
        np.testing.assert_array_equal(path.states, [0] * 5)
        assert path.log_prob == pytest.approx(5 * math.log(0.3))

    def test_ties_go_to_lower_index(self):
        path = viterbi(np.ones((3, 2)), TransitionModel.from_dense(np.full((2, 2), 0.5)))
        np.testing.assert_array_equal(path.states, [0, 0, 0])

    def test_invalid_observations(self):
        trans = TransitionModel.from_dense(np.array([[1.0]]))
        with pytest.raises(InputError):
            viterbi(np.empty((0, 1)), trans)
        with pytest.raises(InputError):
            viterbi(np.zeros((2, 1)), trans)
        with pytest.raises(ShapeError):
            viterbi(np.ones((2, 3)), trans)

    def test_compact_observations_match_full_matrix(self, grid, reference_space):
        space, trans = reference_space
        o = np.random.default_rng(42).dirichlet(np.ones(26), size=120)
        densities, pointers = observation_densities(o, space, grid)
        compact = viterbi(densities, trans, pointers=pointers)
        full = viterbi(observation_probs(o, space, grid), trans)
        np.testing.assert_array_equal(compact.states, full.states)
        assert compact.log_prob == pytest.approx(full.log_prob, abs=1e-9)

    def test_zero_lambda_keeps_tempo(self, grid):
        decoder = BarPointerDecoder(grid, DecoderConfig(transition_lambda=0.0))
        o = np.random.default_rng(42).dirichlet(np.ones(26), size=600)
        path = decoder.decode_path(o)
        assert len(set(decoder.space.state_tempo[path.states])) == 1


class TestExtractDownbeats:

    @pytest.fixture
    def single_tempo_space(self):
        return build_state_space(build_scale_grid(tau0=0.5, T=1, S=1, r=50, B=1, M=1), tempo_subdivision=1)[0]

    def test_bar_crossings(self, single_tempo_space):
        space = single_tempo_space
        assert space.bar_lengths[0] == 100
        states = (90 + np.arange(250)) % 100
        times = extract_downbeats(StatePath(states, 0.0), space)
        assert times == pytest.approx([0.2, 2.2, 4.2])

    def test_path_starting_on_a_downbeat(self, single_tempo_space):
        times = extract_downbeats(StatePath(np.arange(150) % 100, 0.0), single_tempo_space)
        assert times == pytest.approx([0.0, 2.0])

    def test_empty_path(self, single_tempo_space):
        assert extract_downbeats(StatePath(np.array([], dtype=np.int64), 0.0), single_tempo_space) == []


class TestDecoding:

    def test_ideal_targets_at_training_tempo(self, grid):
        rng = np.random.default_rng(42)
        annotation = oracle_track(rng, 0, bars=6)
        n_frames = math.ceil(annotation.duration * grid.r)
        target, _ = make_targets(annotation, grid, n_frames)
        decoder = BarPointerDecoder(grid)
        est = decoder.decode(target)
        assert score_track(est, annotation.downbeats, warmup_seconds=decoder.warmup_seconds).f1 == 1.0
        assert abs(len(est) - n_frames / 100) <= 1

    def test_periodic_baseline_activation(self, grid):
        n_frames, period = 1500, 200
        p = np.zeros(n_frames)
        p[37::period] = 1.0
        p[38::period] = 1.0
        p[39::period] = 1.0
        decoder = BarPointerDecoder(grid, arch="noinv")
        est = decoder.decode(np.stack([p, 1 - p], axis=1))
        assert abs(len(est) - n_frames / period) <= 1
        np.testing.assert_allclose(est[:3], [0.74, 4.74, 8.74], atol=0.021)

    def test_deterministic(self, grid):
        o = np.random.default_rng(7).dirichlet(np.ones(26), size=300)
        decoder = BarPointerDecoder(grid)
        assert decoder.decode(o) == decoder.decode(o)

    def test_decode_activations_matches_decoder(self, grid):
        o = np.random.default_rng(42).dirichlet(np.ones(26), size=250)
        assert decode_activations(o, grid) == BarPointerDecoder(grid).decode(o)

    def test_decode_many_keeps_order(self, grid):
        rng = np.random.default_rng(42)
        tracks = [rng.dirichlet(np.ones(26), size=n) for n in (120, 200, 160)]
        decoder = BarPointerDecoder(grid)
        assert decoder.decode_many(tracks, jobs=2) == [decoder.decode(t) for t in tracks]

    def oracle_f1(self, decoder, grid, rng, scale_index, n_tracks):
        scores = []
        for _ in range(n_tracks):
            annotation = oracle_track(rng, scale_index)
            target, _ = make_targets(annotation, grid, math.ceil(annotation.duration * grid.r))
            est = decoder.decode(target)
            scores.append(score_track(est, annotation.downbeats, warmup_seconds=decoder.warmup_seconds).f1)
        return float(np.mean(scores))

    def test_default_config_subdivides_tempo(self, grid):
        decoder = BarPointerDecoder(grid, RunConfig().decoder)
        assert decoder.space.n_tempi == 4 * grid.S

    def test_ideal_targets_between_grid_tempi(self, grid):
        decoder = BarPointerDecoder(grid, RunConfig().decoder)
        assert self.oracle_f1(decoder, grid, np.random.default_rng(7), -8, 2) >= 0.9

    @pytest.mark.slow
    @pytest.mark.parametrize("scale_index", [-13, -8, 0, 8, 13])
    def test_ideal_targets_across_tempo_scales(self, grid, scale_index):
        decoder = BarPointerDecoder(grid, RunConfig().decoder)
        rng = np.random.default_rng(1000 + scale_index)
        assert self.oracle_f1(decoder, grid, rng, scale_index, 10) >= 0.99


class TestDownbeatFiles:

    def test_three_decimals(self, tmp_path):
        path = tmp_path / "out" / "track.downbeats.txt"
        write_downbeats(path, [0.2, 2.2049, 4.0])
        assert path.read_text(encoding="utf-8") == "0.200\n2.205\n4.000\n"
        assert read_downbeats(path) == [0.2, 2.205, 4.0]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        write_downbeats(path, [])
        assert read_downbeats(path) == []

    def test_annotation_lines(self, tmp_path):
        path = tmp_path / "ann.txt"
        path.write_text("0.500000 db\n1.000000 beat\n", encoding="utf-8")
        assert read_downbeats(path) == [0.5, 1.0]

    def test_bad_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("zero\n", encoding="utf-8")
        with pytest.raises(FormatError):
            read_downbeats(path)
