"""Experiment drivers and their file outputs.

Four entry points back the CLI: full-factorial enumeration of a rank box
(the baseline every search result is ranked against), the progressive
search itself, interest-region analysis of a result set, and a
search-vs-plain-GA comparison at equal evaluation budgets.

Every driver writes a manifest.json carrying the fully resolved config;
feeding that manifest back in as --config replays the run and reproduces
the deterministic outputs byte for byte. Wall-clock numbers live in a
timings.jsonl sidecar so they never contaminate the comparable files.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import RunConfig, parse_config
from .data import SyntheticDataset, gen_synthetic
from .evolve import (
    ConfigError,
    EvalRecord,
    Genome,
    Objectives,
    run_evolution,
)
from .models import DivergenceError, TRStack, make_model, train
from .progressive import (
    CheckpointStore,
    PSTRNResult,
    SearchSpace,
    ga_rng,
    run_pstrn,
    warm_up,
)
from .ring import param_count

ProgressFn = Callable[[int, int], None]


# ---------------------------------------------------------------- file IO

def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    # sort_keys + repr-based floats keep reruns byte-identical
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_manifest(out_dir: Path, command: str, cfg: RunConfig) -> None:
    doc = {"command": command, "config": cfg.to_dict()}
    (out_dir / "manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )


def record_rows(records: Sequence[EvalRecord]) -> list[dict]:
    return [
        {
            "phase": r.phase,
            "generation": r.generation,
            "genome": list(r.genome),
            "loss": r.loss,
            "params": r.params,
        }
        for r in records
    ]


def timing_rows(records: Sequence[EvalRecord], **extra) -> list[dict]:
    return [
        {
            "phase": r.phase,
            "generation": r.generation,
            "genome": list(r.genome),
            "seconds": r.seconds,
            **extra,
        }
        for r in records
    ]


def _record_key(rec) -> tuple:
    if isinstance(rec, dict):
        return (rec["loss"], rec["params"], tuple(rec["genome"]))
    return (rec.loss, rec.params, tuple(rec.genome))


# ------------------------------------------------------------- evaluation

def genome_params(cfg: RunConfig, genome: Genome) -> int:
    """Parameter count for one candidate, without building the model."""
    dims = cfg.model.mode_dims
    if cfg.model.layers > 1:
        d = len(dims)
        return sum(param_count(dims, (v,) * d) for v in genome)
    return param_count(dims, genome)


def _seed_state(master_seed: int, phase: int, genome: Genome, count: int) -> list[int]:
    ss = np.random.SeedSequence([master_seed, 101, phase, *genome])
    return [int(s) for s in ss.generate_state(count)]


def evaluate_genome(
    cfg: RunConfig,
    data: SyntheticDataset,
    master_seed: int,
    phase: int,
    genome: Genome,
    store: CheckpointStore | None = None,
) -> Objectives:
    """Train one candidate and score it on the test split.

    Single-layer configs read the genome as per-edge ranks; multi-layer
    configs read one uniform rank per layer. With a checkpoint store the
    layers inherit stored cores and only fine-tune; a training that blows
    up scores (inf, params) instead of propagating.
    """
    genome = tuple(int(v) for v in genome)
    model_cfg = cfg.model
    layers = model_cfg.layers
    if len(genome) != cfg.genome_length:
        raise ConfigError(
            f"genome {genome} has {len(genome)} elements, config needs {cfg.genome_length}"
        )
    seeds = _seed_state(master_seed, phase, genome, layers + 1)
    train_cfg = replace(cfg.train, seed=seeds[-1])
    if layers == 1:
        model: TRStack | object = make_model(
            model_cfg.in_dims, model_cfg.out_dims, genome, seeds[0]
        )
    else:
        d = len(model_cfg.mode_dims)
        model = TRStack(
            [
                make_model(model_cfg.in_dims, model_cfg.out_dims, (v,) * d, seeds[k])
                for k, v in enumerate(genome)
            ]
        )
        if store is not None:
            from .progressive import inherit_weights

            model, _flags = inherit_weights(model, store)
            train_cfg = replace(train_cfg, epochs=cfg.phases.fine_tune_epochs)
    params = genome_params(cfg, genome)
    try:
        _, report = train(model, data, train_cfg)
    except DivergenceError:
        return Objectives(math.inf, params)
    return Objectives(report.final_test_mse, params)


# worker-process state for parallel evaluation; populated by _pool_init
_POOL: dict = {}


def _pool_init(cfg_doc: dict, store_path: str | None) -> None:
    cfg = parse_config(cfg_doc)
    _POOL["cfg"] = cfg
    _POOL["data"] = gen_synthetic(
        cfg.dataset.seed,
        cfg.dataset.true_rank,
        cfg.dataset.x_variance,
        cfg.dataset.noise_variance,
    )
    _POOL["store"] = CheckpointStore(store_path) if store_path else None


def _pool_eval(task: tuple[int, int, Genome]) -> tuple[float, int, float]:
    master_seed, phase, genome = task
    t0 = time.perf_counter()
    obj = evaluate_genome(
        _POOL["cfg"], _POOL["data"], master_seed, phase, genome, _POOL["store"]
    )
    return obj.loss, obj.params, time.perf_counter() - t0


class EvaluationRunner:
    """Serial or process-pool evaluation of genome batches, order-preserving.

    The pool rebuilds the dataset in each worker from the resolved config,
    so results are identical to the serial path; only seconds differ.
    """

    def __init__(
        self,
        cfg: RunConfig,
        data: SyntheticDataset,
        master_seed: int,
        store: CheckpointStore | None = None,
        store_path: str | None = None,
    ):
        self.cfg = cfg
        self.data = data
        self.master_seed = master_seed
        self.store = store
        self._pool: ProcessPoolExecutor | None = None
        if cfg.parallelism > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=cfg.parallelism,
                initializer=_pool_init,
                initargs=(cfg.to_dict(), store_path),
            )

    def run(
        self,
        phase: int,
        genomes: Sequence[Genome],
        progress: ProgressFn | None = None,
    ) -> list[tuple[Objectives, float]]:
        total = len(genomes)
        out: list[tuple[Objectives, float]] = []
        if self._pool is None:
            for i, genome in enumerate(genomes, 1):
                t0 = time.perf_counter()
                obj = evaluate_genome(
                    self.cfg, self.data, self.master_seed, phase, genome, self.store
                )
                out.append((obj, time.perf_counter() - t0))
                if progress:
                    progress(i, total)
            return out
        tasks = [(self.master_seed, phase, tuple(g)) for g in genomes]
        for i, (loss, params, secs) in enumerate(self._pool.map(_pool_eval, tasks), 1):
            out.append((Objectives(loss, params), secs))
            if progress:
                progress(i, total)
        return out

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _make_dataset(cfg: RunConfig) -> SyntheticDataset:
    return gen_synthetic(
        cfg.dataset.seed,
        cfg.dataset.true_rank,
        cfg.dataset.x_variance,
        cfg.dataset.noise_variance,
    )


# ------------------------------------------------------------ enumeration

def enumeration_genomes(bounds: tuple[int, int], length: int) -> list[Genome]:
    """Every rank combination in the box, lexicographic order."""
    r_min, r_max = bounds
    return list(itertools.product(range(r_min, r_max + 1), repeat=length))


def ranking_rows(records: Sequence[EvalRecord]) -> list[dict]:
    ordered = sorted(records, key=_record_key)
    return [
        {
            "rank": i,
            "genome": list(r.genome),
            "loss": r.loss,
            "params": r.params,
        }
        for i, r in enumerate(ordered, 1)
    ]


def rank_of(genome: Genome, ranking: Sequence) -> int:
    """1-based position of a genome in the enumeration order (loss, then
    params, then genome). Accepts ranking rows or raw records; raises
    KeyError when the genome was never enumerated."""
    key = tuple(int(v) for v in genome)
    rows = list(ranking)
    if rows and isinstance(rows[0], dict) and "rank" in rows[0]:
        for row in rows:
            if tuple(row["genome"]) == key:
                return int(row["rank"])
    else:
        ordered = sorted(rows, key=_record_key)
        for i, rec in enumerate(ordered, 1):
            g = tuple(rec["genome"]) if isinstance(rec, dict) else tuple(rec.genome)
            if g == key:
                return i
    raise KeyError(f"genome {key} not present in the enumeration results")


def run_enumeration(
    cfg: RunConfig,
    data: SyntheticDataset | None = None,
    progress: ProgressFn | None = None,
) -> list[EvalRecord]:
    """Train and score every combination in the configured rank box.

    Refuses to start when the combination count exceeds the cap. Seeds come
    from the phase-0 stream, so search evaluations never collide with the
    baseline's.
    """
    length = cfg.genome_length
    r_min, r_max = cfg.bounds
    count = (r_max - r_min + 1) ** length
    if count > cfg.enumeration_cap:
        raise ConfigError(
            f"enumeration needs {count} trainings "
            f"({r_max - r_min + 1}^{length}), above the cap of {cfg.enumeration_cap}"
        )
    if data is None:
        data = _make_dataset(cfg)
    genomes = enumeration_genomes(cfg.bounds, length)
    master = cfg.phases.ga.seed
    with EvaluationRunner(cfg, data, master) as runner:
        results = runner.run(0, genomes, progress)
    return [
        EvalRecord(0, 0, g, obj.loss, obj.params, secs)
        for g, (obj, secs) in zip(genomes, results)
    ]


def cmd_enumerate(
    cfg: RunConfig,
    out_dir: str | Path,
    figures: bool = True,
    data: SyntheticDataset | None = None,
    progress: ProgressFn | None = None,
) -> list[EvalRecord]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "enumerate", cfg)
    records = run_enumeration(cfg, data, progress)
    write_jsonl(out / "results.jsonl", record_rows(records))
    write_jsonl(out / "ranking.jsonl", ranking_rows(records))
    write_jsonl(out / "timings.jsonl", timing_rows(records))
    if figures:
        from . import figures as figs

        figs.pareto_cloud(record_rows(records), out / "pareto_cloud.png")
    return records


# ----------------------------------------------------------------- search

def _search_result_doc(cfg: RunConfig, result: PSTRNResult) -> dict:
    doc = {
        "best_genome": list(result.best_genome),
        "best_loss": result.best_loss,
        "best_params": result.best_params,
        "evaluations": len(result.records),
        "phases": len(result.phase_summaries),
        "mode": cfg.phases.ga.mode,
    }
    if cfg.phases.ga.mode == "multi_objective":
        front = [
            {
                "genome": list(ind.genome),
                "loss": ind.require_objectives().loss,
                "params": ind.require_objectives().params,
            }
            for ind in result.final_population
            if ind.front == 0
        ]
        front.sort(key=lambda r: (r["loss"], r["params"], tuple(r["genome"])))
        doc["pareto_front"] = front
    return doc


def run_search(
    cfg: RunConfig,
    checkpoints: str | Path | None = None,
    data: SyntheticDataset | None = None,
    progress: ProgressFn | None = None,
) -> PSTRNResult:
    """Progressive rank search per the resolved config.

    `checkpoints` switches on warm-up and weight inheritance; it requires a
    multi-layer model because inherited checkpoints are per-layer uniform
    ranks, while a single layer searches per-edge ranks.
    """
    if checkpoints is not None and cfg.model.layers < 2:
        raise ConfigError(
            "checkpoints need model.layers >= 2; single-layer genomes are "
            "per-edge ranks and cannot inherit uniform-rank entries"
        )
    if data is None:
        data = _make_dataset(cfg)
    master = cfg.phases.ga.seed
    store = CheckpointStore(checkpoints) if checkpoints is not None else None
    store_path = str(checkpoints) if checkpoints is not None else None

    warm_up_fn = None
    if store is not None:
        layer_specs = [(cfg.model.in_dims, cfg.model.out_dims)] * cfg.model.layers

        def warm_up_fn(phase: int, space: SearchSpace):
            warm_up(
                layer_specs,
                space.per_element_candidates,
                cfg.phases.warm_up_epochs,
                store,
                data,
                cfg.train,
            )

    with EvaluationRunner(cfg, data, master, store, store_path) as runner:

        def evaluate_factory(phase: int, space: SearchSpace):
            def evaluate_fn(genome: Genome) -> Objectives:
                return evaluate_genome(cfg, data, master, phase, genome, store)

            return evaluate_fn

        parallel_map = None
        if cfg.parallelism > 1 or progress is not None:
            parallel_map = lambda phase, genomes: runner.run(phase, genomes, progress)

        return run_pstrn(
            cfg.bounds,
            cfg.genome_length,
            cfg.phases,
            evaluate_factory,
            master,
            warm_up_fn=warm_up_fn,
            parallel_map=parallel_map,
        )


def cmd_search(
    cfg: RunConfig,
    out_dir: str | Path,
    checkpoints: str | Path | None = None,
    figures: bool = True,
    data: SyntheticDataset | None = None,
    progress: ProgressFn | None = None,
) -> PSTRNResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "search", cfg)
    result = run_search(cfg, checkpoints, data, progress)
    write_jsonl(out / "evaluations.jsonl", record_rows(result.records))
    write_jsonl(out / "phases.jsonl", result.phase_summaries)
    write_jsonl(out / "timings.jsonl", timing_rows(result.records))
    (out / "result.json").write_text(
        json.dumps(_search_result_doc(cfg, result), indent=2, sort_keys=True) + "\n"
    )
    if figures:
        from . import figures as figs

        figs.search_progress(
            record_rows(result.records), result.phase_summaries, out / "search_progress.png"
        )
    return result


# ---------------------------------------------------------------- analyze

@dataclass(frozen=True)
class InterestRegion:
    """Aggregation statistics of one rank element over a top set: the
    region is [mean - delta, mean + delta] with delta the population
    standard deviation, so its width is 2*delta."""

    mean: float
    delta: float
    low: float
    high: float
    sensitive: bool


def _region(values: np.ndarray, threshold: float) -> InterestRegion:
    mean = float(np.mean(values))
    delta = float(np.std(values))
    return InterestRegion(mean, delta, mean - delta, mean + delta, delta <= threshold)


def uniform_delta(bounds: tuple[int, int]) -> float:
    """Stddev of the uniform distribution over the integer candidates; the
    no-aggregation reference line."""
    r_min, r_max = bounds
    return float(np.std(np.arange(r_min, r_max + 1)))


def analyze_records(
    rows: Sequence[dict], top: int, bounds: tuple[int, int] | None = None
) -> tuple[dict, list[tuple[int, int, int, int, int]]]:
    """Interest-region report over the `top` best records.

    Returns the report document and the co-occurrence counts: one row
    (element_i, element_j, value_i, value_j, count) per observed value pair
    for every element pair i < j.
    """
    if top < 1:
        raise ConfigError(f"top must be >= 1, got {top}")
    if len(rows) < top:
        raise ConfigError(f"need at least top={top} records, got {len(rows)}")
    ordered = sorted(rows, key=_record_key)
    top_rows = ordered[:top]
    genomes = np.array([r["genome"] for r in top_rows], dtype=np.int64)
    d = genomes.shape[1]
    if bounds is None:
        all_genomes = np.array([r["genome"] for r in rows], dtype=np.int64)
        bounds = (int(all_genomes.min()), int(all_genomes.max()))
        bounds_source = "observed"
    else:
        bounds_source = "configured"
    threshold = (bounds[1] - bounds[0]) / 6
    per_element = [_region(genomes[:, i], threshold) for i in range(d)]
    pooled = _region(genomes.reshape(-1), threshold)
    best = top_rows[0]
    report = {
        "top": top,
        "records_total": len(rows),
        "bounds": {"r_min": bounds[0], "r_max": bounds[1], "source": bounds_source},
        "sensitive_threshold": threshold,
        "uniform_delta": uniform_delta(bounds),
        "per_element": [
            {
                "element": i,
                "mean": reg.mean,
                "delta": reg.delta,
                "region": [reg.low, reg.high],
                "sensitive": reg.sensitive,
            }
            for i, reg in enumerate(per_element)
        ],
        "pooled": {
            "mean": pooled.mean,
            "delta": pooled.delta,
            "region": [pooled.low, pooled.high],
        },
        "best": {
            "genome": list(map(int, best["genome"])),
            "loss": best["loss"],
            "params": best["params"],
        },
    }
    counts: dict[tuple[int, int, int, int], int] = {}
    for row in genomes:
        for i in range(d):
            for j in range(i + 1, d):
                key = (i, j, int(row[i]), int(row[j]))
                counts[key] = counts.get(key, 0) + 1
    cooccurrence = [(*key, n) for key, n in sorted(counts.items())]
    return report, cooccurrence


def _bounds_near(results_path: Path) -> tuple[int, int] | None:
    manifest = results_path.parent / "manifest.json"
    if not manifest.exists():
        return None
    try:
        doc = json.loads(manifest.read_text())
        b = doc["config"]["bounds"]
        return int(b["r_min"]), int(b["r_max"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None


def cmd_analyze(
    results_path: str | Path,
    top: int,
    out_dir: str | Path | None = None,
    bounds: tuple[int, int] | None = None,
    figures: bool = True,
) -> dict:
    """Read a results/ranking JSONL file, compute interest regions over the
    top set, and write report.json + cooccurrence.csv next to it (or into
    out_dir). Bounds fall back to the run's manifest, then to the observed
    value range."""
    results_path = Path(results_path)
    if not results_path.exists():
        raise ConfigError(f"results file not found: {results_path}")
    rows = read_jsonl(results_path)
    if bounds is None:
        bounds = _bounds_near(results_path)
    report, cooccurrence = analyze_records(rows, top, bounds)
    out = Path(out_dir) if out_dir is not None else results_path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out / "cooccurrence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element_i", "element_j", "value_i", "value_j", "count"])
        writer.writerows(cooccurrence)
    if figures:
        from . import figures as figs

        ordered = sorted(rows, key=_record_key)
        genomes = np.array([r["genome"] for r in ordered[:top]], dtype=np.int64)
        figs.rank_distribution(genomes, report, out / "distribution.png")
        figs.cooccurrence_heat(cooccurrence, genomes.shape[1], report["bounds"], out / "cooccurrence.png")
    return report


# --------------------------------------------------------------- ablation

def _cumulative_generation(rec: EvalRecord, gens_per_phase: int) -> int:
    if rec.phase <= 1:
        return rec.generation
    return (rec.phase - 1) * gens_per_phase + rec.generation


def run_ablation(
    cfg: RunConfig,
    ranking: Sequence[dict],
    data: SyntheticDataset | None = None,
    progress: ProgressFn | None = None,
) -> tuple[dict, list[EvalRecord], list[EvalRecord]]:
    """Progressive search vs a plain run of the same GA on the full rank
    box for the whole budget: pop_size x (count x generations) evaluations
    each, same master seed, same per-genome training seeds. Reports the
    best-so-far and its enumeration rank at every generation checkpoint
    G, 2G, ..., P*G for both arms."""
    if data is None:
        data = _make_dataset(cfg)
    master = cfg.phases.ga.seed
    gens = cfg.phases.ga.generations
    total_gens = cfg.phases.count * gens

    pstrn_result = run_search(cfg, None, data, progress)

    r_min, r_max = cfg.bounds
    full = tuple(tuple(range(r_min, r_max + 1)) for _ in range(cfg.genome_length))
    space = SearchSpace(full, cfg.bounds)
    plain_cfg = replace(cfg.phases.ga, generations=total_gens, seed=master)
    with EvaluationRunner(cfg, data, master) as runner:

        def evaluate_fn(genome: Genome) -> Objectives:
            return evaluate_genome(cfg, data, master, 1, genome)

        eval_many = None
        if cfg.parallelism > 1 or progress is not None:
            eval_many = lambda genomes: runner.run(1, genomes, progress)

        _, plain_records = run_evolution(
            space,
            evaluate_fn,
            plain_cfg,
            phase=1,
            rng=ga_rng(master, 1),
            eval_many=eval_many,
        )

    rows = []
    arms = [("progressive", pstrn_result.records), ("plain_nsga2", plain_records)]
    for method, records in arms:
        for checkpoint in range(gens, total_gens + 1, gens):
            seen = [
                r for r in records if _cumulative_generation(r, gens) <= checkpoint
            ]
            finite = [r for r in seen if math.isfinite(r.loss)]
            if not finite:
                raise DivergenceError(
                    f"{method}: no finite loss by generation {checkpoint}"
                )
            best = min(finite, key=_record_key)
            rows.append(
                {
                    "method": method,
                    "checkpoint": checkpoint,
                    "evaluations": len(seen),
                    "genome": list(best.genome),
                    "loss": best.loss,
                    "params": best.params,
                    "rank": rank_of(best.genome, ranking),
                }
            )
    final = {r["method"]: r for r in rows if r["checkpoint"] == total_gens}
    report = {
        "budget_per_arm": cfg.phases.ga.pop_size * total_gens,
        "checkpoints": rows,
        "final_rank": {m: final[m]["rank"] for m in final},
        "progressive_le_plain": final["progressive"]["rank"]
        <= final["plain_nsga2"]["rank"],
    }
    return report, pstrn_result.records, plain_records


def cmd_ablation(
    cfg: RunConfig,
    enum_dir: str | Path,
    out_dir: str | Path,
    figures: bool = True,
    data: SyntheticDataset | None = None,
    progress: ProgressFn | None = None,
) -> dict:
    enum_dir = Path(enum_dir)
    ranking_path = enum_dir / "ranking.jsonl"
    if not ranking_path.exists():
        raise ConfigError(f"no ranking.jsonl under {enum_dir}; run enumerate first")
    enum_bounds = _bounds_near(ranking_path)
    if enum_bounds is not None and enum_bounds != cfg.bounds:
        raise ConfigError(
            f"enumeration bounds {enum_bounds} do not match config bounds {cfg.bounds}"
        )
    ranking = read_jsonl(ranking_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "ablation", cfg)
    report, pstrn_records, plain_records = run_ablation(cfg, ranking, data, progress)
    (out / "ablation.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "checkpoint", "evaluations", "genome", "loss", "params", "rank"]
        )
        for row in report["checkpoints"]:
            writer.writerow(
                [
                    row["method"],
                    row["checkpoint"],
                    row["evaluations"],
                    " ".join(str(v) for v in row["genome"]),
                    row["loss"],
                    row["params"],
                    row["rank"],
                ]
            )
    write_jsonl(
        out / "timings.jsonl",
        timing_rows(pstrn_records, method="progressive")
        + timing_rows(plain_records, method="plain_nsga2"),
    )
    if figures:
        from . import figures as figs

        figs.ablation_plot(report["checkpoints"], out / "ablation.png")
    return report
