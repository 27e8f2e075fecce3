"""Selective-layer MAML: adaptation patterns, training, evaluation and search."""

from ._core import (
    CheckpointError,
    Model,
    ParseError,
    Pattern,
    SearchReport,
    Splits,
    SweepRecord,
    enumerate_patterns,
    evaluate,
    flop_cost,
    make_model,
    run,
    select_fastest,
    synthetic_splits,
    time_adaptation,
    train,
    trivial_patterns,
)

__all__ = [
    "CheckpointError",
    "Model",
    "ParseError",
    "Pattern",
    "SearchReport",
    "Splits",
    "SweepRecord",
    "enumerate_patterns",
    "evaluate",
    "flop_cost",
    "make_model",
    "run",
    "select_fastest",
    "synthetic_splits",
    "time_adaptation",
    "train",
    "trivial_patterns",
]
