import json
import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from trrank.evolve import ConfigError, GAConfig, Individual, Objectives, run_evolution
from trrank.models import DivergenceError, TRStack, TrainConfig, make_model
from trrank.progressive import (
    CheckpointStore,
    PhaseConfig,
    SearchSpace,
    evaluation_seeds,
    ga_rng,
    inherit_weights,
    init_space,
    next_space,
    promising_rank,
    run_pstrn,
    sample_genome,
    warm_up,
)
from trrank.ring import init_trf


class TestSearchSpace:
    def test_candidates_must_be_increasing(self):
        with pytest.raises(ConfigError):
            SearchSpace(((3, 2),), (1, 5))
        with pytest.raises(ConfigError):
            SearchSpace(((2, 2),), (1, 5))

    def test_candidates_must_respect_bounds(self):
        with pytest.raises(ConfigError):
            SearchSpace(((2, 6),), (3, 8))
        with pytest.raises(ConfigError):
            SearchSpace(((3, 9),), (3, 8))

    def test_element_count(self):
        assert SearchSpace(((1, 2), (2, 3), (1, 3)), (1, 3)).d == 3


class TestInitSpace:
    def test_equal_interval_grid(self):
        space = init_space(3, 15, 4, 3, 2)
        assert space.per_element_candidates == ((7, 11, 15), (7, 11, 15))

    def test_clamps_at_upper_bound(self):
        space = init_space(3, 12, 4, 3, 1)
        assert space.per_element_candidates == ((7, 11, 12),)

    def test_five_point_grid(self):
        space = init_space(2, 27, 5, 5, 1)
        assert space.per_element_candidates == ((7, 12, 17, 22, 27),)

    def test_grid_overrun_rejected(self):
        # 3 + 4*2 = 11 > 8 + 2
        with pytest.raises(ConfigError, match="overruns"):
            init_space(3, 8, 2, 4, 2)

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            init_space(3, 8, 2, 1, 2)
        with pytest.raises(ConfigError):
            init_space(3, 8, 0, 3, 2)


def individuals(*genomes):
    return [Individual(tuple(g), Objectives(0.0, 0)) for g in genomes]


class TestPromisingRank:
    def test_floor_of_columnwise_mean(self):
        top = individuals((4, 6), (5, 5), (7, 6))
        # sums 16 and 17 over 3 genomes floor to 5 in both slots
        assert promising_rank(top) == (5, 5)

    def test_single_individual_is_identity(self):
        assert promising_rank(individuals((3, 8, 5))) == (3, 8, 5)

    def test_exact_mean_stays_exact(self):
        assert promising_rank(individuals((4, 4), (6, 8))) == (5, 6)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            promising_rank([])

    def test_ragged_genomes_rejected(self):
        with pytest.raises(ConfigError):
            promising_rank(individuals((1, 2), (1, 2, 3)))


class TestNextSpace:
    def test_recenter(self):
        space = next_space((5,), 4, 2, 3, (1, 9))
        assert space.per_element_candidates == ((3, 5, 7),)

    def test_lower_edge_clamp(self):
        space = next_space((3,), 2, 1, 3, (3, 8))
        assert space.per_element_candidates == ((3, 4),)

    def test_four_point_window(self):
        space = next_space((10,), 2, 1, 4, (3, 12))
        assert space.per_element_candidates == ((9, 10, 11, 12),)

    def test_per_element_centers(self):
        space = next_space((3, 8), 1, 1, 3, (3, 8))
        assert space.per_element_candidates == ((3, 4, 5), (8,))

    def test_parameter_validation(self):
        for s, b, n in [(-1, 1, 3), (0, 0, 3), (0, 1, 0)]:
            with pytest.raises(ConfigError):
                next_space((5,), s, b, n, (1, 9))


class TestSampleGenome:
    def space(self, *cands):
        return SearchSpace(tuple(cands), (1, 99))

    def test_zero_explore_never_leaves_space(self):
        cur = self.space((5,), (6,))
        prev = self.space((9,), (9,))
        rng = np.random.default_rng(0)
        for _ in range(100):
            genome, explored = sample_genome(cur, prev, 0.0, rng)
            assert genome == (5, 6)
            assert not explored

    def test_no_previous_space_never_explores(self):
        cur = self.space((5,), (6,))
        rng = np.random.default_rng(1)
        for _ in range(100):
            genome, explored = sample_genome(cur, None, 1.0, rng)
            assert genome == (5, 6)
            assert not explored

    def test_explored_draws_come_from_previous_space(self):
        cur = self.space((5,))
        prev = self.space((9,))
        rng = np.random.default_rng(2)
        seen = {sample_genome(cur, prev, 0.5, rng) for _ in range(200)}
        assert seen == {((5,), False), ((9,), True)}

    def test_explore_fraction_near_probability(self):
        cur = self.space((5,))
        prev = self.space((9,))
        rng = np.random.default_rng(3)
        flags = [sample_genome(cur, prev, 0.1, rng)[1] for _ in range(10_000)]
        assert 0.08 <= sum(flags) / len(flags) <= 0.12


class TestPhaseConfig:
    def test_defaults_are_valid(self):
        cfg = PhaseConfig()
        assert cfg.offsets == cfg.intervals[:-1]

    def test_interval_count_must_match_phases(self):
        with pytest.raises(ConfigError):
            PhaseConfig(count=2, intervals=(4, 2, 1))

    def test_intervals_must_not_increase(self):
        with pytest.raises(ConfigError):
            PhaseConfig(count=3, intervals=(2, 4, 1))

    def test_final_interval_must_be_one(self):
        with pytest.raises(ConfigError):
            PhaseConfig(count=2, intervals=(4, 2))

    def test_offsets_need_one_per_transition(self):
        with pytest.raises(ConfigError):
            PhaseConfig(count=3, intervals=(4, 2, 1), offsets=(2,))

    def test_probability_and_size_validation(self):
        with pytest.raises(ConfigError):
            PhaseConfig(explore_prob=1.5)
        with pytest.raises(ConfigError):
            PhaseConfig(n=1)
        with pytest.raises(ConfigError):
            PhaseConfig(top_k=0)
        with pytest.raises(ConfigError):
            PhaseConfig(fine_tune_epochs=-1)


def distance_eval(genome):
    """Toy fitness: distance to (6,6,...) with the genome sum as params."""
    return Objectives(float(sum(abs(g - 6) for g in genome)), sum(genome))


def toy_phases(**overrides):
    base = dict(
        count=3,
        intervals=(2, 1, 1),
        offsets=(2, 1),
        n=3,
        top_k=5,
        explore_prob=0.1,
        ga=GAConfig(pop_size=8, generations=4, mode="single_objective"),
    )
    base.update(overrides)
    return PhaseConfig(**base)


def toy_factory(calls=None):
    def factory(phase, space):
        if calls is not None:
            calls.append((phase, space.per_element_candidates))
        return distance_eval

    return factory


def record_tuples(records):
    return [(r.phase, r.generation, r.genome, r.loss, r.params) for r in records]


class TestRunPstrn:
    def test_toy_search_converges(self):
        calls = []
        result = run_pstrn((1, 9), 3, toy_phases(), toy_factory(calls), 99)
        assert result.best_genome == (6, 6, 6)
        assert result.best_loss == 0.0
        assert [c[0] for c in calls] == [1, 2, 3]
        assert calls[0][1] == ((3, 5, 7),) * 3
        assert len(result.records) <= 8 * 4 * 3
        assert len(result.promising_per_phase) == 3
        for summary, (phase, cands) in zip(result.phase_summaries, calls):
            assert summary["phase"] == phase
            assert summary["space"] == [list(c) for c in cands]
        for promising in result.promising_per_phase:
            assert all(1 <= v <= 9 for v in promising)

    def test_replay_is_identical(self):
        a = run_pstrn((1, 9), 3, toy_phases(), toy_factory(), 42)
        b = run_pstrn((1, 9), 3, toy_phases(), toy_factory(), 42)
        assert record_tuples(a.records) == record_tuples(b.records)
        assert a.promising_per_phase == b.promising_per_phase
        assert a.best_genome == b.best_genome

    def test_master_seed_changes_trajectory(self):
        a = run_pstrn((1, 9), 3, toy_phases(), toy_factory(), 1)
        b = run_pstrn((1, 9), 3, toy_phases(), toy_factory(), 2)
        assert record_tuples(a.records) != record_tuples(b.records)

    def test_single_phase_equals_plain_evolution(self):
        phases = toy_phases(count=1, intervals=(1,), offsets=())
        result = run_pstrn((3, 8), 2, phases, toy_factory(), 7)
        space = init_space(3, 8, 1, phases.n, 2)
        cfg = replace(phases.ga, seed=7)
        pop, records = run_evolution(
            space, distance_eval, cfg, phase=1, rng=ga_rng(7, 1)
        )
        assert record_tuples(result.records) == record_tuples(records)
        assert [p.genome for p in result.final_population] == [p.genome for p in pop]

    def test_parallel_map_matches_serial(self):
        def pmap(phase, genomes):
            return [(distance_eval(g), 0.0) for g in genomes]

        a = run_pstrn((1, 9), 3, toy_phases(), toy_factory(), 42)
        b = run_pstrn((1, 9), 3, toy_phases(), toy_factory(), 42, parallel_map=pmap)
        assert record_tuples(a.records) == record_tuples(b.records)
        assert all(r.seconds == 0.0 for r in b.records)

    def test_all_failures_raise(self):
        def factory(phase, space):
            return lambda genome: Objectives(math.inf, sum(genome))

        with pytest.raises(DivergenceError, match="phase 1"):
            run_pstrn((1, 9), 3, toy_phases(), factory, 5)


class TestSeedStreams:
    def test_evaluation_seeds_are_stable(self):
        assert evaluation_seeds(233, 1, (3, 4)) == evaluation_seeds(233, 1, (3, 4))

    def test_evaluation_seeds_split_by_phase_and_genome(self):
        base = evaluation_seeds(233, 1, (3, 4))
        assert evaluation_seeds(233, 2, (3, 4)) != base
        assert evaluation_seeds(233, 1, (4, 3)) != base
        assert evaluation_seeds(234, 1, (3, 4)) != base

    def test_enumeration_stream_is_phase_zero(self):
        assert evaluation_seeds(233, 0, (3, 4)) != evaluation_seeds(233, 1, (3, 4))

    def test_ga_rng_streams_differ_by_phase(self):
        a = ga_rng(233, 1).integers(1 << 30, size=4)
        b = ga_rng(233, 2).integers(1 << 30, size=4)
        c = ga_rng(233, 1).integers(1 << 30, size=4)
        assert list(a) == list(c)
        assert list(a) != list(b)


def uniform_trf(v, dims=(12, 12, 12, 12), seed=0):
    return init_trf(dims, (v,) * len(dims), seed)


class TestCheckpointStore:
    def test_round_trip_bit_exact(self, tmp_path):
        store = CheckpointStore(tmp_path)
        trf = uniform_trf(3)
        store.save(0, 3, trf, {"train_epochs": 30})
        assert store.has(0, 3)
        loaded, meta = store.load(0, 3)
        assert meta["train_epochs"] == 30
        assert loaded.mode_dims == trf.mode_dims
        assert loaded.ranks == trf.ranks
        for a, b in zip(loaded.cores, trf.cores):
            assert np.array_equal(a, b)

    def test_missing_entry_is_none(self, tmp_path):
        store = CheckpointStore(tmp_path)
        assert store.load(0, 3) is None
        assert not store.has(0, 3)

    def test_existing_entry_wins_the_race(self, tmp_path):
        store = CheckpointStore(tmp_path)
        first = uniform_trf(3, seed=1)
        store.save(0, 3, first, {})
        store.save(0, 3, uniform_trf(3, seed=2), {})
        loaded, _ = store.load(0, 3)
        assert np.array_equal(loaded.cores[0], first.cores[0])

    def test_corrupt_meta_reads_as_miss(self, tmp_path, caplog):
        store = CheckpointStore(tmp_path)
        store.save(1, 4, uniform_trf(4), {})
        (tmp_path / "layer_1" / "V_4" / "meta.json").write_text("{broken")
        with caplog.at_level(logging.WARNING, logger="trrank"):
            assert store.load(1, 4) is None
        assert "unreadable" in caplog.text

    def test_non_uniform_payload_reads_as_miss(self, tmp_path, caplog):
        store = CheckpointStore(tmp_path)
        store.save(0, 5, uniform_trf(4), {})
        with caplog.at_level(logging.WARNING, logger="trrank"):
            assert store.load(0, 5) is None

    def test_truncated_payload_reads_as_miss(self, tmp_path, caplog):
        store = CheckpointStore(tmp_path)
        store.save(0, 3, uniform_trf(3), {})
        blob = tmp_path / "layer_0" / "V_3" / "cores.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with caplog.at_level(logging.WARNING, logger="trrank"):
            assert store.load(0, 3) is None


SPECS = [((12, 12), (12, 12)), ((12, 12), (12, 12))]


class TestWarmUp:
    def test_trains_once_per_distinct_rank(self, tmp_path, dataset, monkeypatch):
        calls = []
        monkeypatch.setattr(
            "trrank.progressive.train", lambda m, d, c: calls.append(c.seed) or (m, None)
        )
        store = CheckpointStore(tmp_path)
        warm_up(SPECS, [(3, 4), (4, 5)], 0, store, dataset, TrainConfig(epochs=0))
        assert len(calls) == 3  # v in {3, 4, 5}
        assert store.has(0, 3) and store.has(0, 4)
        assert store.has(1, 4) and store.has(1, 5)
        assert not store.has(1, 3) and not store.has(0, 5)

    def test_rerun_is_free(self, tmp_path, dataset, monkeypatch):
        calls = []
        monkeypatch.setattr(
            "trrank.progressive.train", lambda m, d, c: calls.append(1) or (m, None)
        )
        store = CheckpointStore(tmp_path)
        warm_up(SPECS, [(3,), (3,)], 0, store, dataset, TrainConfig(epochs=0))
        assert calls == [1]
        warm_up(SPECS, [(3,), (3,)], 0, store, dataset, TrainConfig(epochs=0))
        assert calls == [1]

    def test_empty_candidates_do_nothing(self, tmp_path, dataset, monkeypatch):
        calls = []
        monkeypatch.setattr(
            "trrank.progressive.train", lambda m, d, c: calls.append(1) or (m, None)
        )
        warm_up(SPECS, [(), ()], 0, CheckpointStore(tmp_path), dataset, TrainConfig())
        assert calls == []

    def test_layer_count_mismatch_rejected(self, tmp_path, dataset):
        with pytest.raises(ConfigError):
            warm_up(SPECS, [(3,)], 0, CheckpointStore(tmp_path), dataset, TrainConfig())

    def test_checkpoint_seeds_differ_per_layer(self, tmp_path, dataset, monkeypatch):
        monkeypatch.setattr("trrank.progressive.train", lambda m, d, c: (m, None))
        store = CheckpointStore(tmp_path)
        warm_up(SPECS, [(3,), (3,)], 0, store, dataset, TrainConfig(epochs=0))
        _, meta0 = store.load(0, 3)
        _, meta1 = store.load(1, 3)
        assert meta0["seed"] != meta1["seed"]


def fresh_stack(v=3):
    a = make_model((12, 12), (12, 12), (v,) * 4, 11)
    b = make_model((12, 12), (12, 12), (v,) * 4, 12)
    return TRStack([a, b])


class TestInheritWeights:
    def test_empty_store_leaves_model_alone(self, tmp_path):
        store = CheckpointStore(tmp_path)
        stack = fresh_stack()
        before = [c.copy() for layer in stack.layers for c in layer.trf.cores]
        _, flags = inherit_weights(stack, store)
        assert flags == [False, False]
        after = [c for layer in stack.layers for c in layer.trf.cores]
        assert all(np.array_equal(a, b) for a, b in zip(before, after))

    def test_full_store_swaps_every_layer(self, tmp_path):
        store = CheckpointStore(tmp_path)
        saved = [uniform_trf(3, seed=21), uniform_trf(3, seed=22)]
        store.save(0, 3, saved[0], {})
        store.save(1, 3, saved[1], {})
        stack, flags = inherit_weights(fresh_stack(), store)
        assert flags == [True, True]
        for layer, trf in zip(stack.layers, saved):
            for a, b in zip(layer.trf.cores, trf.cores):
                assert np.array_equal(a, b)

    def test_partial_store(self, tmp_path):
        store = CheckpointStore(tmp_path)
        store.save(0, 3, uniform_trf(3, seed=21), {})
        _, flags = inherit_weights(fresh_stack(), store)
        assert flags == [True, False]

    def test_non_uniform_model_ranks_rejected(self, tmp_path):
        store = CheckpointStore(tmp_path)
        stack = TRStack([make_model((12, 12), (12, 12), (3, 4, 3, 4), 1)])
        with pytest.raises(ConfigError, match="uniform"):
            inherit_weights(stack, store)

    def test_dimension_mismatch_is_a_miss(self, tmp_path, caplog):
        store = CheckpointStore(tmp_path)
        store.save(0, 3, init_trf((2, 3), (3, 3), 5), {})
        stack = fresh_stack()
        with caplog.at_level(logging.WARNING, logger="trrank"):
            _, flags = inherit_weights(stack, store)
        assert flags == [False, False]
        assert "do not match" in caplog.text
