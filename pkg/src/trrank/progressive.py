"""Progressive rank search: phased NSGA-II over shrinking candidate spaces.

Each phase samples an equal-interval candidate grid, evolves a population,
takes the element-wise floor-mean of the top-k survivors as the promising
rank, and re-centers a finer grid on it; the interval schedule must end at
1. Initial individuals of later phases have a small probability of being
drawn from the previous phase's space instead (the exploration escape
hatch), except in phase 1 which has no predecessor.

Weight inheritance is the optional warm-up store: per (layer, uniform rank
V) checkpoints trained once, reused so each searched configuration needs
only a short fine-tune instead of a from-scratch run.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import SyntheticDataset
from .evolve import (
    ConfigError,
    EvalRecord,
    GAConfig,
    Genome,
    Individual,
    Objectives,
    best_individual,
    run_evolution,
    top_k,
)
from .models import DivergenceError, TRStack, TrainConfig, make_model, train
from .ring import TensorRingFormat, pack_cores, unpack_cores

logger = logging.getLogger("trrank")


@dataclass(frozen=True)
class SearchSpace:
    per_element_candidates: tuple[tuple[int, ...], ...]
    bounds: tuple[int, int]

    def __post_init__(self):
        r_min, r_max = self.bounds
        if r_min < 1 or r_max < r_min:
            raise ConfigError(f"bad bounds {self.bounds}")
        if not self.per_element_candidates:
            raise ConfigError("search space needs at least one element")
        for i, cands in enumerate(self.per_element_candidates):
            if not cands:
                raise ConfigError(f"element {i} has an empty candidate set")
            if list(cands) != sorted(set(cands)):
                raise ConfigError(f"element {i} candidates not strictly increasing: {cands}")
            if cands[0] < r_min or cands[-1] > r_max:
                raise ConfigError(
                    f"element {i} candidates {cands} outside bounds {self.bounds}"
                )

    @property
    def d(self) -> int:
        return len(self.per_element_candidates)


def _clamp_dedupe(values: Sequence[int], bounds: tuple[int, int]) -> tuple[int, ...]:
    r_min, r_max = bounds
    clamped = sorted({min(max(v, r_min), r_max) for v in values})
    return tuple(clamped)


def init_space(r_min: int, r_max: int, b1: int, n: int, d: int) -> SearchSpace:
    """Equal-interval grid {R_min + m*b1 : m=1..n}, clamped then deduplicated."""
    if n < 2:
        raise ConfigError(f"n must be >= 2, got {n}")
    if b1 < 1:
        raise ConfigError(f"interval must be >= 1, got {b1}")
    if r_min + n * b1 > r_max + b1:
        raise ConfigError(
            f"grid R_min + n*b1 = {r_min + n * b1} overruns R_max + b1 = {r_max + b1}"
        )
    cands = _clamp_dedupe([r_min + m * b1 for m in range(1, n + 1)], (r_min, r_max))
    if not cands:
        raise ConfigError("initial sampling produced no candidates")
    return SearchSpace(tuple(cands for _ in range(d)), (r_min, r_max))


def promising_rank(top: Sequence[Individual]) -> Genome:
    """Element-wise floor of the mean over the top individuals' genomes."""
    if not top:
        raise ConfigError("promising_rank needs at least one individual")
    length = len(top[0].genome)
    for ind in top:
        if len(ind.genome) != length:
            raise ConfigError("genome lengths differ")
    k = len(top)
    return tuple(sum(ind.genome[i] for ind in top) // k for i in range(length))


def next_space(
    promising: Genome,
    s_j: int,
    b_j: int,
    n: int,
    bounds: tuple[int, int],
) -> SearchSpace:
    """Re-center: per element, {R_hat - s_j + m*b_j : m=1..n} clamped into bounds."""
    if s_j < 0 or b_j < 1 or n < 1:
        raise ConfigError(f"bad refinement parameters s={s_j}, b={b_j}, n={n}")
    sets = []
    for r_hat in promising:
        cands = _clamp_dedupe([r_hat - s_j + m * b_j for m in range(1, n + 1)], bounds)
        if not cands:
            raise ConfigError(f"element centered on {r_hat} clamped to nothing")
        sets.append(cands)
    return SearchSpace(tuple(sets), bounds)


def sample_genome(
    space: SearchSpace,
    prev_space: SearchSpace | None,
    explore_prob: float,
    rng: np.random.Generator,
) -> tuple[Genome, bool]:
    """Uniform per-gene draw; with explore_prob the whole genome comes from
    the previous phase's space instead (never in the first phase)."""
    if prev_space is not None and rng.random() < explore_prob:
        genome = tuple(
            c[int(rng.integers(len(c)))] for c in prev_space.per_element_candidates
        )
        return genome, True
    genome = tuple(c[int(rng.integers(len(c)))] for c in space.per_element_candidates)
    return genome, False


@dataclass
class PhaseConfig:
    count: int = 3
    intervals: tuple[int, ...] = (4, 2, 1)
    offsets: tuple[int, ...] | None = None  # s_2..s_P; None -> b_{j-1}
    n: int = 3
    top_k: int = 5
    explore_prob: float = 0.10
    fine_tune_epochs: int = 1
    warm_up_epochs: int = 30
    ga: GAConfig = field(default_factory=GAConfig)

    def __post_init__(self):
        self.intervals = tuple(int(b) for b in self.intervals)
        if self.count < 1 or len(self.intervals) != self.count:
            raise ConfigError(
                f"{len(self.intervals)} intervals for {self.count} phases"
            )
        for a, b in zip(self.intervals, self.intervals[1:]):
            if b > a:
                raise ConfigError(f"intervals must be non-increasing: {self.intervals}")
        if self.intervals[-1] != 1:
            raise ConfigError(f"final interval must be 1, got {self.intervals[-1]}")
        if self.offsets is None:
            self.offsets = self.intervals[: self.count - 1]
        else:
            self.offsets = tuple(int(s) for s in self.offsets)
        if len(self.offsets) != self.count - 1:
            raise ConfigError(
                f"{len(self.offsets)} offsets for {self.count} phases (need P-1)"
            )
        if not (0.0 <= self.explore_prob <= 1.0):
            raise ConfigError(f"explore_prob must be in [0,1], got {self.explore_prob}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.fine_tune_epochs < 0 or self.warm_up_epochs < 0:
            raise ConfigError("epoch budgets must be >= 0")


@dataclass
class PSTRNResult:
    final_population: list[Individual]
    promising_per_phase: list[Genome]
    phase_summaries: list[dict]
    records: list[EvalRecord]
    best_genome: Genome
    best_loss: float
    best_params: int


def ga_rng(master_seed: int, phase: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, 202, phase]))


def evaluation_seeds(master_seed: int, phase: int, genome: Genome) -> tuple[int, int]:
    """(init seed, train seed) for one genome evaluation; phase 0 is the
    enumeration stream so searches never collide with the baseline."""
    ss = np.random.SeedSequence([master_seed, 101, phase, *genome])
    a, b = ss.generate_state(2)
    return int(a), int(b)


def run_pstrn(
    bounds: tuple[int, int],
    genome_length: int,
    phases: PhaseConfig,
    evaluate_factory: Callable[[int, SearchSpace], Callable[[Genome], Objectives]],
    master_seed: int,
    warm_up_fn: Callable[[int, SearchSpace], None] | None = None,
    parallel_map: Callable[[int, list[Genome]], list[tuple[Objectives, float]]] | None = None,
) -> PSTRNResult:
    """The phase loop. evaluate_factory(phase, space) builds the fitness
    function (train-and-evaluate, with inheritance when the caller wired a
    checkpoint store into it); warm_up_fn runs before each phase's search.
    parallel_map(phase, genomes), when given, evaluates a batch in order
    and returns (objectives, seconds) pairs; it replaces the per-genome
    fitness calls inside the GA."""
    r_min, r_max = bounds
    space = init_space(r_min, r_max, phases.intervals[0], phases.n, genome_length)
    prev_space: SearchSpace | None = None
    promising: Genome | None = None
    summaries: list[dict] = []
    promising_per_phase: list[Genome] = []
    all_records: list[EvalRecord] = []
    population: list[Individual] = []
    for p in range(1, phases.count + 1):
        if p > 1:
            assert promising is not None
            space = next_space(
                promising, phases.offsets[p - 2], phases.intervals[p - 1], phases.n, bounds
            )
        if warm_up_fn is not None:
            warm_up_fn(p, space)
        rng = ga_rng(master_seed, p)
        prev = prev_space

        def sampler(r: np.random.Generator, _space=space, _prev=prev):
            return sample_genome(_space, _prev, phases.explore_prob, r)

        evaluate_fn = evaluate_factory(p, space)
        eval_many = None
        if parallel_map is not None:
            eval_many = lambda genomes, _p=p: parallel_map(_p, genomes)
        ga_cfg = replace(phases.ga, seed=master_seed)
        population, records = run_evolution(
            space, evaluate_fn, ga_cfg, phase=p, rng=rng, sampler=sampler,
            eval_many=eval_many,
        )
        if all(not math.isfinite(rec.loss) for rec in records):
            raise DivergenceError(f"phase {p} produced no successful evaluations")
        best = best_individual(population)
        top = top_k(population, phases.top_k, ga_cfg.mode)
        promising = promising_rank(top)
        promising_per_phase.append(promising)
        summaries.append(
            {
                "phase": p,
                "space": [list(c) for c in space.per_element_candidates],
                "promising_rank": list(promising),
                "best_loss": best.require_objectives().loss,
                "best_params": best.require_objectives().params,
            }
        )
        all_records.extend(records)
        prev_space = space
    finite = [r for r in all_records if math.isfinite(r.loss)]
    overall = min(finite, key=lambda r: (r.loss, r.params, r.genome))
    return PSTRNResult(
        final_population=population,
        promising_per_phase=promising_per_phase,
        phase_summaries=summaries,
        records=all_records,
        best_genome=overall.genome,
        best_loss=overall.loss,
        best_params=overall.params,
    )


class CheckpointStore:
    """Directory of per-(layer, uniform rank) core checkpoints.

    Layout: layer_<id>/V_<k>/{meta.json, cores.bin}. Writes go through a
    temp file and an atomic rename; corrupt entries read as misses.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _entry_dir(self, layer_id: int, v: int) -> Path:
        return self.root / f"layer_{layer_id}" / f"V_{v}"

    def has(self, layer_id: int, v: int) -> bool:
        entry = self._entry_dir(layer_id, v)
        return (entry / "meta.json").exists() and (entry / "cores.bin").exists()

    def save(self, layer_id: int, v: int, trf: TensorRingFormat, meta: dict) -> None:
        entry = self._entry_dir(layer_id, v)
        entry.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "mode_dims": list(trf.mode_dims),
            "ranks": list(trf.ranks),
            **meta,
        }
        tmp = Path(tempfile.mkdtemp(dir=entry.parent, prefix=".tmp_"))
        try:
            (tmp / "cores.bin").write_bytes(pack_cores(trf))
            (tmp / "meta.json").write_text(json.dumps(record, sort_keys=True))
            if entry.exists():
                return  # someone else won the race; keep the existing entry
            os.replace(tmp, entry)
        finally:
            if tmp.exists() and tmp != entry:
                for leftover in tmp.iterdir():
                    leftover.unlink()
                tmp.rmdir()

    def load(self, layer_id: int, v: int) -> tuple[TensorRingFormat, dict] | None:
        entry = self._entry_dir(layer_id, v)
        try:
            meta = json.loads((entry / "meta.json").read_text())
            payload = (entry / "cores.bin").read_bytes()
            trf = unpack_cores(meta["mode_dims"], meta["ranks"], payload)
            if any(r != v for r in trf.ranks):
                raise ValueError(f"stored ranks {trf.ranks} are not uniform {v}")
            return trf, meta
        except FileNotFoundError:
            return None
        except Exception as exc:  # corrupt entry: miss, keep searching
            logger.warning("checkpoint layer_%s/V_%s unreadable: %s", layer_id, v, exc)
            return None


LayerSpec = tuple[tuple[int, ...], tuple[int, ...]]  # (in_dims, out_dims)


def _uniform_stack(layer_specs: Sequence[LayerSpec], vs: Sequence[int], seeds) -> TRStack:
    layers = []
    for (in_dims, out_dims), v, seed in zip(layer_specs, vs, seeds):
        d = len(in_dims) + len(out_dims)
        layers.append(make_model(in_dims, out_dims, (v,) * d, int(seed)))
    return TRStack(layers)


def warm_up(
    layer_specs: Sequence[LayerSpec],
    candidate_vs: Sequence[Sequence[int]],
    epochs: int,
    store: CheckpointStore,
    data: SyntheticDataset,
    base_cfg: TrainConfig,
) -> CheckpointStore:
    """Pre-train per-layer uniform-rank checkpoints.

    One training per distinct uniform rank v: the whole stack runs at v and
    each layer missing its (layer, v) entry gets stored. Existing entries
    are never retrained, so a rerun does zero work.
    """
    if len(layer_specs) != len(candidate_vs):
        raise ConfigError(
            f"{len(candidate_vs)} candidate sets for {len(layer_specs)} layers"
        )
    all_vs = sorted({v for cands in candidate_vs for v in cands})
    for v in all_vs:
        missing = [
            k
            for k, cands in enumerate(candidate_vs)
            if v in cands and not store.has(k, v)
        ]
        if not missing:
            continue
        state = np.random.SeedSequence([base_cfg.seed, 303, v]).generate_state(
            len(layer_specs) + 1
        )
        stack = _uniform_stack(layer_specs, [v] * len(layer_specs), state[:-1])
        cfg = replace(base_cfg, epochs=epochs, seed=int(state[-1]))
        train(stack, data, cfg)
        for k in missing:
            store.save(
                k,
                v,
                stack.layers[k].trf,
                {"train_epochs": epochs, "seed": int(state[k])},
            )
    return store


def inherit_weights(model: TRStack, store: CheckpointStore) -> tuple[TRStack, list[bool]]:
    """Swap in stored cores for every layer whose uniform rank has a
    checkpoint; layers without one keep their fresh initialization."""
    flags: list[bool] = []
    for k, layer in enumerate(model.layers):
        ranks = layer.trf.ranks
        if len(set(ranks)) != 1:
            raise ConfigError(
                f"layer {k} ranks {ranks} are not uniform; inheritance needs one V per layer"
            )
        v = ranks[0]
        entry = store.load(k, v)
        if entry is None:
            flags.append(False)
            continue
        trf, _meta = entry
        if trf.mode_dims != layer.trf.mode_dims:
            logger.warning(
                "checkpoint layer_%s/V_%s dims %s do not match model %s; skipping",
                k,
                v,
                trf.mode_dims,
                layer.trf.mode_dims,
            )
            flags.append(False)
            continue
        layer.trf = trf
        flags.append(True)
    return model, flags
