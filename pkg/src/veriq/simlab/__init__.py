"""Simulation lab: synthetic data, game simulators and the ROC harness."""

from .census import CENSUS_SCHEMA, CensusProfile, census_queries, gen_census_like
from .games import (
    RoundOutcome,
    SimulationResult,
    TrialSummary,
    best_response,
    play_best_response,
    run_single_cloud,
    run_two_cloud,
)
from .roc import (
    DEFAULT_EPSILONS,
    DEFAULT_K,
    LAPLACE_DIVISORS,
    PAPER_K,
    ROC_COLUMNS,
    RocPoint,
    auc,
    default_strategies,
    group_curves,
    read_roc_csv,
    roc_sweep,
    write_roc_csv,
)

__all__ = [
    "CENSUS_SCHEMA", "CensusProfile", "census_queries", "gen_census_like",
    "RoundOutcome", "SimulationResult", "TrialSummary", "best_response", "play_best_response",
    "run_single_cloud", "run_two_cloud",
    "DEFAULT_EPSILONS", "DEFAULT_K", "LAPLACE_DIVISORS", "PAPER_K", "ROC_COLUMNS", "RocPoint",
    "auc", "default_strategies", "group_curves", "read_roc_csv", "roc_sweep", "write_roc_csv",
]
