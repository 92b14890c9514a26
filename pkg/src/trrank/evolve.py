"""NSGA-II over integer rank-vector genomes.

Both objectives are minimized: evaluation loss and parameter count (the
monotone stand-in for compression ratio). Fronts and crowding follow the
standard fast non-dominated sort; every tie anywhere falls back to the
lexicographically smaller genome so a fixed seed replays bit-identically.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

Genome = tuple[int, ...]


class ConfigError(ValueError):
    """Invalid run or algorithm configuration."""


@dataclass(frozen=True)
class Objectives:
    loss: float
    params: int

    def __post_init__(self):
        if self.params < 0:
            raise ConfigError(f"params must be >= 0, got {self.params}")
        if math.isnan(self.loss):
            raise ConfigError("loss must be a number or +inf")


@dataclass
class Individual:
    genome: Genome
    objectives: Objectives | None = None
    phase: int = 0
    generation: int = 0
    explored: bool = False
    # assigned during sorting
    front: int | None = None
    crowding: float | None = None

    def require_objectives(self) -> Objectives:
        if self.objectives is None:
            raise RuntimeError(f"individual {self.genome} not evaluated")
        return self.objectives


@dataclass
class GAConfig:
    pop_size: int = 20
    generations: int = 10
    crossover_prob: float = 0.9
    mutation_prob_per_gene: float | None = None  # None -> 1/d at runtime
    mode: str = "multi_objective"
    seed: int = 233
    memoize: bool = True

    def __post_init__(self):
        if self.pop_size < 4 or self.pop_size % 2 != 0:
            raise ConfigError(f"pop_size must be even and >= 4, got {self.pop_size}")
        if self.generations < 1:
            raise ConfigError(f"generations must be >= 1, got {self.generations}")
        for name in ("crossover_prob", "mutation_prob_per_gene"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0,1], got {v}")
        if self.mode not in ("multi_objective", "single_objective"):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class EvalRecord:
    phase: int
    generation: int
    genome: Genome
    loss: float
    params: int
    seconds: float


def dominates(a: Objectives, b: Objectives) -> bool:
    if a.loss > b.loss or a.params > b.params:
        return False
    return a.loss < b.loss or a.params < b.params


def fast_non_dominated_sort(pop: Sequence[Individual]) -> list[list[int]]:
    n = len(pop)
    objs = [ind.require_objectives() for ind in pop]
    dominated: list[list[int]] = [[] for _ in range(n)]
    count = [0] * n
    fronts: list[list[int]] = [[]]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if dominates(objs[i], objs[j]):
                dominated[i].append(j)
            elif dominates(objs[j], objs[i]):
                count[i] += 1
        if count[i] == 0:
            fronts[0].append(i)
    k = 0
    while fronts[k]:
        nxt = []
        for i in fronts[k]:
            for j in dominated[i]:
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        k += 1
        fronts.append(nxt)
    fronts.pop()  # trailing empty front
    return fronts


def crowding_distance(front: Sequence[int], pop: Sequence[Individual]) -> dict[int, float]:
    dist = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: math.inf for i in front}
    for attr in ("loss", "params"):
        ordered = sorted(
            front, key=lambda i: (getattr(pop[i].require_objectives(), attr), pop[i].genome)
        )
        lo = getattr(pop[ordered[0]].require_objectives(), attr)
        hi = getattr(pop[ordered[-1]].require_objectives(), attr)
        dist[ordered[0]] = math.inf
        dist[ordered[-1]] = math.inf
        span = hi - lo
        if span == 0 or not math.isfinite(span):
            continue  # degenerate range contributes nothing to interior points
        for pos in range(1, len(ordered) - 1):
            prev_v = getattr(pop[ordered[pos - 1]].require_objectives(), attr)
            next_v = getattr(pop[ordered[pos + 1]].require_objectives(), attr)
            if dist[ordered[pos]] != math.inf:
                dist[ordered[pos]] += (next_v - prev_v) / span
    return dist


def assign_fronts_and_crowding(pop: Sequence[Individual]) -> list[list[int]]:
    fronts = fast_non_dominated_sort(pop)
    for f_idx, front in enumerate(fronts):
        dist = crowding_distance(front, pop)
        for i in front:
            pop[i].front = f_idx
            pop[i].crowding = dist[i]
    return fronts


def crowded_compare(a: Individual, b: Individual) -> int:
    """-1 if a wins, 1 if b wins, 0 only for identical genomes."""
    if a.front is None or b.front is None or a.crowding is None or b.crowding is None:
        raise RuntimeError("crowded_compare needs front and crowding assigned")
    if a.front != b.front:
        return -1 if a.front < b.front else 1
    if a.crowding != b.crowding:
        return -1 if a.crowding > b.crowding else 1
    if a.genome != b.genome:
        return -1 if a.genome < b.genome else 1
    return 0


def _single_objective_key(ind: Individual):
    obj = ind.require_objectives()
    return (obj.loss, obj.params, ind.genome)


def _sorted_by_mode(pop: list[Individual], mode: str) -> list[Individual]:
    if mode == "single_objective":
        return sorted(pop, key=_single_objective_key)
    assign_fronts_and_crowding(pop)
    return sorted(pop, key=functools.cmp_to_key(crowded_compare))


def top_k(pop: Sequence[Individual], k: int, mode: str = "multi_objective") -> list[Individual]:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    ordered = _sorted_by_mode(list(pop), mode)
    return ordered[: min(k, len(ordered))]


def _tournament(pop: list[Individual], cfg: GAConfig, rng: np.random.Generator) -> Individual:
    i = int(rng.integers(len(pop)))
    j = int(rng.integers(len(pop)))
    a, b = pop[i], pop[j]
    if cfg.mode == "single_objective":
        return a if _single_objective_key(a) <= _single_objective_key(b) else b
    return a if crowded_compare(a, b) <= 0 else b


def _mutate_genome(
    genome: Genome,
    candidates: Sequence[Sequence[int]],
    prob: float,
    rng: np.random.Generator,
) -> Genome:
    out = list(genome)
    for g, cands in enumerate(candidates):
        if rng.random() >= prob:
            continue
        if len(cands) < 2:
            continue  # nothing to resample to
        choices = [c for c in cands if c != out[g]]
        if not choices:
            continue
        out[g] = choices[int(rng.integers(len(choices)))]
    return tuple(out)


def make_children(
    parents: list[Individual],
    space,
    cfg: GAConfig,
    rng: np.random.Generator,
) -> list[Individual]:
    """pop_size offspring: binary crowded tournaments, uniform crossover,
    then per-gene resampling mutation within the space's candidate sets."""
    candidates = space.per_element_candidates
    for cands in candidates:
        if not cands:
            raise ConfigError("empty candidate set in search space")
    d = len(candidates)
    mut_prob = cfg.mutation_prob_per_gene if cfg.mutation_prob_per_gene is not None else 1.0 / d
    if cfg.mode != "single_objective":
        assign_fronts_and_crowding(parents)
    children: list[Individual] = []
    while len(children) < cfg.pop_size:
        p1 = _tournament(parents, cfg, rng)
        p2 = _tournament(parents, cfg, rng)
        g1, g2 = list(p1.genome), list(p2.genome)
        if rng.random() < cfg.crossover_prob:
            for g in range(d):
                if rng.random() < 0.5:
                    g1[g], g2[g] = g2[g], g1[g]
        for genome in (tuple(g1), tuple(g2)):
            if len(children) < cfg.pop_size:
                children.append(Individual(_mutate_genome(genome, candidates, mut_prob, rng)))
    return children


def run_evolution(
    space,
    evaluate_fn: Callable[[Genome], Objectives],
    cfg: GAConfig,
    *,
    phase: int = 1,
    rng: np.random.Generator | None = None,
    sampler: Callable[[np.random.Generator], tuple[Genome, bool]] | None = None,
    eval_many: Callable[[list[Genome]], list[tuple[Objectives, float]]] | None = None,
) -> tuple[list[Individual], list[EvalRecord]]:
    """Generational loop: the initial population counts as generation 1,
    then combine-and-truncate elitism for cfg.generations total.

    `sampler` draws initial genomes (genome, explored-flag); the default
    samples each gene uniformly from the space. Duplicate genomes within
    one call are evaluated once when cfg.memoize is set; memo hits do not
    append to the record log. `eval_many` overrides how a generation's
    pending genomes are evaluated (e.g. a process pool); it must preserve
    order and return (objectives, seconds) per genome.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    candidates = space.per_element_candidates

    def default_sampler(r: np.random.Generator) -> tuple[Genome, bool]:
        return tuple(c[int(r.integers(len(c)))] for c in candidates), False

    def serial_eval_many(genomes: list[Genome]) -> list[tuple[Objectives, float]]:
        out = []
        for genome in genomes:
            t0 = time.perf_counter()
            obj = evaluate_fn(genome)
            out.append((obj, time.perf_counter() - t0))
        return out

    draw = sampler or default_sampler
    run_many = eval_many or serial_eval_many
    memo: dict[Genome, Objectives] | None = {} if cfg.memoize else None
    records: list[EvalRecord] = []

    def evaluate_group(inds: list[Individual], generation: int):
        for ind in inds:
            ind.phase = phase
            ind.generation = generation
        if memo is None:
            pending = [ind.genome for ind in inds]
        else:
            pending = []
            for ind in inds:
                if ind.genome not in memo and ind.genome not in pending:
                    pending.append(ind.genome)
        results = run_many(list(pending))
        if len(results) != len(pending):
            raise RuntimeError(
                f"evaluator returned {len(results)} results for {len(pending)} genomes"
            )
        for genome, (obj, seconds) in zip(pending, results):
            records.append(
                EvalRecord(phase, generation, genome, obj.loss, obj.params, seconds)
            )
            if memo is not None:
                memo[genome] = obj
        if memo is None:
            for ind, (obj, _s) in zip(inds, results):
                ind.objectives = obj
        else:
            for ind in inds:
                ind.objectives = memo[ind.genome]

    pop: list[Individual] = []
    for _ in range(cfg.pop_size):
        genome, explored = draw(rng)
        pop.append(Individual(genome, explored=explored))
    evaluate_group(pop, 1)

    for generation in range(2, cfg.generations + 1):
        children = make_children(pop, space, cfg, rng)
        evaluate_group(children, generation)
        combined = pop + children
        pop = _truncate(combined, cfg)
    return _sorted_by_mode(pop, cfg.mode), records


def _truncate(combined: list[Individual], cfg: GAConfig) -> list[Individual]:
    if cfg.mode == "single_objective":
        return sorted(combined, key=_single_objective_key)[: cfg.pop_size]
    fronts = assign_fronts_and_crowding(combined)
    survivors: list[Individual] = []
    for front in fronts:
        members = [combined[i] for i in front]
        if len(survivors) + len(members) <= cfg.pop_size:
            survivors.extend(sorted(members, key=lambda x: (-(x.crowding or 0.0), x.genome)))
            continue
        members.sort(key=lambda x: (-(x.crowding or 0.0), x.genome))
        survivors.extend(members[: cfg.pop_size - len(survivors)])
        break
    return survivors


def best_individual(pop: Sequence[Individual]) -> Individual:
    """Global tie rule: loss asc, params asc, lexicographic genome."""
    return min(pop, key=_single_objective_key)


def clone_config(cfg: GAConfig, **changes) -> GAConfig:
    return replace(cfg, **changes)
