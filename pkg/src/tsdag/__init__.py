"""Temporal causal discovery with instantaneous effects and history-dependent noise."""

__version__ = "0.1.0"

from .graph import (
    SummaryGraph,
    TemporalGraph,
    aggregate_summary_binary,
    aggregate_summary_prob,
    dag_penalty,
    is_dag,
    topological_order,
)

__all__ = [
    "SummaryGraph",
    "TemporalGraph",
    "aggregate_summary_binary",
    "aggregate_summary_prob",
    "dag_penalty",
    "is_dag",
    "topological_order",
    "__version__",
]
