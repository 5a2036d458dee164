"""Stochastic low-rank bandits: hott-topics instances, LowRankElim and checks."""

from lowrank_bandits.matcore import DSubset, det, det_batch, det_max, enum_subsets, submatrix
from lowrank_bandits.environment import (
    HottTopicsInstance,
    NoiseModel,
    OracleQuantities,
    generate_instance,
    make_instance,
    oracle_quantities,
)
from lowrank_bandits.bandit import (
    ElimConfig,
    RegretTrace,
    StageState,
    c_of_n,
    lowrank_elim,
    noise_free_max,
    ucb1_baseline,
)

__all__ = [
    "DSubset",
    "det",
    "det_batch",
    "det_max",
    "enum_subsets",
    "submatrix",
    "HottTopicsInstance",
    "NoiseModel",
    "OracleQuantities",
    "generate_instance",
    "make_instance",
    "oracle_quantities",
    "ElimConfig",
    "RegretTrace",
    "StageState",
    "c_of_n",
    "lowrank_elim",
    "noise_free_max",
    "ucb1_baseline",
]
