"""Desk-scale continual-learning lab for wrist-IMU gesture recognition.

Thin wrapper over the C++ core. The heavy lifting (data synthesis, exact
reverse-mode training, continual-learning strategies, sweep summaries) lives
in the compiled ``_owgr`` module.
"""

from ._owgr import (
    Dataset,
    OwgrError,
    accuracy_metrics,
    generate_dataset,
    load_dataset,
    quantile,
    run,
    save_dataset,
    summarize_results_csv,
    window_segments,
)

__all__ = [
    "Dataset",
    "OwgrError",
    "accuracy_metrics",
    "generate_dataset",
    "load_dataset",
    "quantile",
    "run",
    "save_dataset",
    "summarize_results_csv",
    "window_segments",
]
