"""Run configuration: one JSON document, strictly validated.

Unknown keys are rejected anywhere in the tree so a typo cannot silently
fall back to a default. A manifest written by a previous run (top-level
{"command", "config"}) is accepted wherever a config is, and re-running
from it reproduces the original byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .evolve import ConfigError, GAConfig
from .models import TrainConfig
from .progressive import PhaseConfig


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _get(section: dict, key: str, default, caster, where: str):
    if key not in section or section[key] is None:
        return default
    try:
        return caster(section[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {where}.{key}: {exc}") from exc


@dataclass
class DatasetConfig:
    seed: int = 233
    true_rank: int = 4
    x_variance: float = 0.05
    noise_variance: float = 0.05


@dataclass
class ModelConfig:
    mode_dims: tuple[int, ...] = (12, 12, 12, 12)
    alpha: int = 2
    beta: int = 2
    layers: int = 1

    @property
    def in_dims(self) -> tuple[int, ...]:
        return self.mode_dims[: self.alpha]

    @property
    def out_dims(self) -> tuple[int, ...]:
        return self.mode_dims[self.alpha :]


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    bounds: tuple[int, int] = (3, 8)
    train: TrainConfig = field(default_factory=TrainConfig)
    phases: PhaseConfig = field(default_factory=PhaseConfig)
    enumeration_cap: int = 5000
    parallelism: int = 1

    @property
    def genome_length(self) -> int:
        """Per-edge ranks for a single layer; one uniform rank per layer
        in inheritance (multi-layer) mode."""
        if self.model.layers > 1:
            return self.model.layers
        return len(self.model.mode_dims)

    def to_dict(self) -> dict:
        """Fully resolved form; loading it back gives an identical config."""
        ga = self.phases.ga
        return {
            "dataset": {
                "seed": self.dataset.seed,
                "true_rank": self.dataset.true_rank,
                "x_variance": self.dataset.x_variance,
                "noise_variance": self.dataset.noise_variance,
            },
            "model": {
                "mode_dims": list(self.model.mode_dims),
                "alpha": self.model.alpha,
                "beta": self.model.beta,
                "layers": self.model.layers,
            },
            "bounds": {"r_min": self.bounds[0], "r_max": self.bounds[1]},
            "train": {
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "lr_decay": {
                    "factor": self.train.lr_decay_factor,
                    "every_epochs": self.train.lr_decay_every,
                },
                "adam": {
                    "beta1": self.train.beta1,
                    "beta2": self.train.beta2,
                    "epsilon": self.train.eps,
                },
                "seed": self.train.seed,
            },
            "phases": {
                "count": self.phases.count,
                "intervals": list(self.phases.intervals),
                "offsets": list(self.phases.offsets or ()),
                "n": self.phases.n,
                "top_k": self.phases.top_k,
                "explore_prob": self.phases.explore_prob,
                "fine_tune_epochs": self.phases.fine_tune_epochs,
                "warm_up_epochs": self.phases.warm_up_epochs,
            },
            "ga": {
                "pop_size": ga.pop_size,
                "generations": ga.generations,
                "crossover_prob": ga.crossover_prob,
                "mutation_prob_per_gene": ga.mutation_prob_per_gene,
                "mode": ga.mode,
                "seed": ga.seed,
                "memoize": ga.memoize,
            },
            "enumeration": {"cap": self.enumeration_cap},
            "parallelism": self.parallelism,
        }


_TOP_KEYS = {"dataset", "model", "bounds", "train", "phases", "ga", "enumeration", "parallelism"}


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    if set(doc) >= {"command", "config"}:
        # a manifest: re-run from its embedded resolved config
        _check_keys(doc, {"command", "config"}, "manifest")
        doc = doc["config"]
        if not isinstance(doc, dict):
            raise ConfigError("manifest 'config' must be an object")
    _check_keys(doc, _TOP_KEYS, "config")

    ds_doc = doc.get("dataset", {})
    _check_keys(ds_doc, {"seed", "true_rank", "x_variance", "noise_variance"}, "dataset")
    dataset = DatasetConfig(
        seed=_get(ds_doc, "seed", 233, int, "dataset"),
        true_rank=_get(ds_doc, "true_rank", 4, int, "dataset"),
        x_variance=_get(ds_doc, "x_variance", 0.05, float, "dataset"),
        noise_variance=_get(ds_doc, "noise_variance", 0.05, float, "dataset"),
    )
    if dataset.true_rank < 1:
        raise ConfigError(f"dataset.true_rank must be >= 1, got {dataset.true_rank}")
    if dataset.x_variance < 0 or dataset.noise_variance < 0:
        raise ConfigError("dataset variances must be >= 0")

    m_doc = doc.get("model", {})
    _check_keys(m_doc, {"mode_dims", "alpha", "beta", "layers"}, "model")
    model = ModelConfig(
        mode_dims=tuple(_get(m_doc, "mode_dims", [12, 12, 12, 12], list, "model")),
        alpha=_get(m_doc, "alpha", 2, int, "model"),
        beta=_get(m_doc, "beta", 2, int, "model"),
        layers=_get(m_doc, "layers", 1, int, "model"),
    )
    if model.alpha < 1 or model.beta < 1 or model.alpha + model.beta != len(model.mode_dims):
        raise ConfigError(
            f"model alpha={model.alpha} beta={model.beta} do not split "
            f"{len(model.mode_dims)} mode dims"
        )
    if model.layers < 1:
        raise ConfigError(f"model.layers must be >= 1, got {model.layers}")

    b_doc = doc.get("bounds", {})
    _check_keys(b_doc, {"r_min", "r_max"}, "bounds")
    bounds = (
        _get(b_doc, "r_min", 3, int, "bounds"),
        _get(b_doc, "r_max", 8, int, "bounds"),
    )
    if bounds[0] < 1 or bounds[1] < bounds[0]:
        raise ConfigError(f"bad bounds {bounds}")

    t_doc = doc.get("train", {})
    _check_keys(
        t_doc,
        {"learning_rate", "epochs", "batch_size", "lr_decay", "adam", "seed"},
        "train",
    )
    decay = t_doc.get("lr_decay", {})
    _check_keys(decay, {"factor", "every_epochs"}, "train.lr_decay")
    adam = t_doc.get("adam", {})
    _check_keys(adam, {"beta1", "beta2", "epsilon"}, "train.adam")
    try:
        train = TrainConfig(
            learning_rate=_get(t_doc, "learning_rate", 1e-2, float, "train"),
            epochs=_get(t_doc, "epochs", 100, int, "train"),
            batch_size=_get(t_doc, "batch_size", 128, int, "train"),
            lr_decay_factor=_get(decay, "factor", 0.1, float, "train.lr_decay"),
            lr_decay_every=_get(decay, "every_epochs", 30, int, "train.lr_decay"),
            beta1=_get(adam, "beta1", 0.9, float, "train.adam"),
            beta2=_get(adam, "beta2", 0.999, float, "train.adam"),
            eps=_get(adam, "epsilon", 1e-8, float, "train.adam"),
            seed=_get(t_doc, "seed", 233, int, "train"),
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc

    g_doc = doc.get("ga", {})
    _check_keys(
        g_doc,
        {
            "pop_size",
            "generations",
            "crossover_prob",
            "mutation_prob_per_gene",
            "mode",
            "seed",
            "memoize",
        },
        "ga",
    )
    mut = g_doc.get("mutation_prob_per_gene")
    ga = GAConfig(
        pop_size=_get(g_doc, "pop_size", 20, int, "ga"),
        generations=_get(g_doc, "generations", 10, int, "ga"),
        crossover_prob=_get(g_doc, "crossover_prob", 0.9, float, "ga"),
        mutation_prob_per_gene=None if mut is None else float(mut),
        mode=_get(g_doc, "mode", "multi_objective", str, "ga"),
        seed=_get(g_doc, "seed", 233, int, "ga"),
        memoize=bool(g_doc.get("memoize", True)),
    )

    p_doc = doc.get("phases", {})
    _check_keys(
        p_doc,
        {
            "count",
            "intervals",
            "offsets",
            "n",
            "top_k",
            "explore_prob",
            "fine_tune_epochs",
            "warm_up_epochs",
        },
        "phases",
    )
    offsets = p_doc.get("offsets")
    phases = PhaseConfig(
        count=_get(p_doc, "count", 3, int, "phases"),
        intervals=tuple(_get(p_doc, "intervals", [4, 2, 1], list, "phases")),
        offsets=None if offsets in (None, []) else tuple(int(s) for s in offsets),
        n=_get(p_doc, "n", 3, int, "phases"),
        top_k=_get(p_doc, "top_k", 5, int, "phases"),
        explore_prob=_get(p_doc, "explore_prob", 0.10, float, "phases"),
        fine_tune_epochs=_get(p_doc, "fine_tune_epochs", 1, int, "phases"),
        warm_up_epochs=_get(p_doc, "warm_up_epochs", 30, int, "phases"),
        ga=ga,
    )

    e_doc = doc.get("enumeration", {})
    _check_keys(e_doc, {"cap"}, "enumeration")
    cap = _get(e_doc, "cap", 5000, int, "enumeration")
    if cap < 1:
        raise ConfigError(f"enumeration.cap must be >= 1, got {cap}")

    parallelism = _get(doc, "parallelism", 1, int, "config")
    if parallelism < 1:
        raise ConfigError(f"parallelism must be >= 1, got {parallelism}")

    return RunConfig(
        dataset=dataset,
        model=model,
        bounds=bounds,
        train=train,
        phases=phases,
        enumeration_cap=cap,
        parallelism=parallelism,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)
