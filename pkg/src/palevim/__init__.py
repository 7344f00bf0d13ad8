"""Model-agnostic ALE and path-ALE variable importance measures."""

from .core import Dataset, QuantilePartition, WeightedSeries, build_partition, weighted_variance
from .models import (ModelHandle, ScenarioSpec, generate_scenario, load_dataset, make_builtin,
                     normal_cdf, python_model, spawn_subprocess_model)
from .ale import (AleCurve, AleSurface, LocalEffects, ale_main_curve, ale_main_vim, ale_second_surface,
                  ale_second_vim, local_effects, r2_ale2)
from .pale import (LevelOrder, PaleResult, PathSet, categorical_local_effects, connected_paths, cpale_vim,
                   qpale_vim, quantile_paths, reorder_categorical_levels, spale_vim)
from .baselines import BaselineConfig, OracleVims, marginal_permutation_vim, marginal_shapley_vims, oracle_linear3

__all__ = [
    "Dataset", "QuantilePartition", "WeightedSeries", "build_partition", "weighted_variance",
    "ModelHandle", "ScenarioSpec", "generate_scenario", "load_dataset", "make_builtin",
    "normal_cdf", "python_model", "spawn_subprocess_model", "AleCurve", "AleSurface", "LocalEffects",
    "ale_main_curve", "ale_main_vim", "ale_second_surface", "ale_second_vim", "local_effects",
    "r2_ale2", "LevelOrder", "PaleResult", "PathSet", "categorical_local_effects",
    "connected_paths", "cpale_vim", "qpale_vim", "quantile_paths", "reorder_categorical_levels",
    "spale_vim", "BaselineConfig", "OracleVims", "marginal_permutation_vim",
    "marginal_shapley_vims", "oracle_linear3",
]

__version__ = "0.1.0"
