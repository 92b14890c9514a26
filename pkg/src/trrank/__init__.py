"""Tensor-ring network compression with progressive rank search.

The pieces, bottom up: dense tensor helpers (`tensors`), the ring format
and its size arithmetic (`ring`), the low-rank regression dataset
(`data`), trainable ring-factored linear models (`models`), the NSGA-II
engine (`evolve`), the progressive phase loop with warm-up and weight
inheritance (`progressive`), and the experiment drivers behind the CLI
(`harness`, `figures`, `cli`).
"""

from .tensors import ShapeError, contract, frobenius_distance, gaussian_tensor
from .ring import (
    TensorRingFormat,
    compression_ratio_cnn,
    compression_ratio_linear,
    init_trf,
    param_count,
    reconstruct,
)
from .data import SyntheticDataset, dump_dataset, gen_synthetic, load_dataset
from .models import (
    DivergenceError,
    TRLinearModel,
    TRStack,
    TrainConfig,
    TrainReport,
    core_gradients,
    evaluate,
    forward,
    make_model,
    mse_loss,
    train,
)
from .evolve import (
    ConfigError,
    EvalRecord,
    GAConfig,
    Individual,
    Objectives,
    best_individual,
    crowding_distance,
    fast_non_dominated_sort,
    run_evolution,
    top_k,
)
from .progressive import (
    CheckpointStore,
    PhaseConfig,
    PSTRNResult,
    SearchSpace,
    evaluation_seeds,
    inherit_weights,
    init_space,
    next_space,
    promising_rank,
    run_pstrn,
    warm_up,
)
from .config import DatasetConfig, ModelConfig, RunConfig, load_config, parse_config
from .harness import (
    InterestRegion,
    analyze_records,
    cmd_ablation,
    cmd_analyze,
    cmd_enumerate,
    cmd_search,
    evaluate_genome,
    rank_of,
    run_enumeration,
    run_search,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointStore",
    "ConfigError",
    "DatasetConfig",
    "DivergenceError",
    "EvalRecord",
    "GAConfig",
    "Individual",
    "InterestRegion",
    "ModelConfig",
    "Objectives",
    "PSTRNResult",
    "PhaseConfig",
    "RunConfig",
    "SearchSpace",
    "ShapeError",
    "SyntheticDataset",
    "TRLinearModel",
    "TRStack",
    "TensorRingFormat",
    "TrainConfig",
    "TrainReport",
    "analyze_records",
    "best_individual",
    "cmd_ablation",
    "cmd_analyze",
    "cmd_enumerate",
    "cmd_search",
    "compression_ratio_cnn",
    "compression_ratio_linear",
    "contract",
    "core_gradients",
    "crowding_distance",
    "dump_dataset",
    "evaluate",
    "evaluate_genome",
    "evaluation_seeds",
    "fast_non_dominated_sort",
    "forward",
    "frobenius_distance",
    "gaussian_tensor",
    "gen_synthetic",
    "inherit_weights",
    "init_space",
    "init_trf",
    "load_config",
    "load_dataset",
    "make_model",
    "mse_loss",
    "next_space",
    "param_count",
    "parse_config",
    "promising_rank",
    "rank_of",
    "reconstruct",
    "run_enumeration",
    "run_evolution",
    "run_pstrn",
    "run_search",
    "top_k",
    "train",
    "warm_up",
]
