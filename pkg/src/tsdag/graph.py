"""Temporal adjacency representation, DAG machinery and summary aggregation.

A temporal graph stacks K+1 binary adjacency slices: entry (tau, i, j) = 1
means node i at time t-tau influences node j at time t. Slice tau=0 holds
the within-timestep edges and is the only slice that can contain cycles.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import CycleError, ParseError


def _as_square(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def _check_binary(m: np.ndarray):
    if not np.isin(m, (0.0, 1.0)).all():
        raise ValueError("matrix entries must be 0 or 1")


@dataclass(frozen=True)
class TemporalGraph:
    """Binary adjacency stack over lags 0..K. Lag-0 diagonal is always zero."""

    num_nodes: int
    max_lag: int
    adjacency: np.ndarray  # (K+1, D, D), entries in {0, 1}
    finalized: bool = False

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        expect = (self.max_lag + 1, self.num_nodes, self.num_nodes)
        if adj.shape != expect:
            raise ValueError(f"adjacency shape {adj.shape} != {expect}")
        _check_binary(adj)
        if np.diag(adj[0]).any():
            raise ValueError("instantaneous slice has self-loops")
        if self.finalized and not is_dag(adj[0]):
            raise CycleError("finalized graph has a cyclic instantaneous slice")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def instantaneous(self) -> np.ndarray:
        return self.adjacency[0]

    @property
    def lagged(self) -> np.ndarray:
        return self.adjacency[1:]

    def finalize(self) -> "TemporalGraph":
        return TemporalGraph(self.num_nodes, self.max_lag, self.adjacency, finalized=True)

    def num_edges(self) -> int:
        return int(self.adjacency.sum())


@dataclass(frozen=True)
class SummaryGraph:
    """Time-aggregated graph; `adjacency` is binary or a probability matrix."""

    num_nodes: int
    adjacency: np.ndarray  # (D, D)

    def __post_init__(self):
        adj = _as_square(self.adjacency)
        if adj.shape[0] != self.num_nodes:
            raise ValueError("adjacency does not match num_nodes")
        if (adj < 0).any() or (adj > 1).any():
            raise ValueError("summary entries must lie in [0, 1]")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)


# ---------------------------------------------------------------------------
# DAG machinery


def matrix_exp(m: ad.Tensor, min_terms: int = 30) -> ad.Tensor:
    """Taylor-series matrix exponential, differentiable.

    Runs at least `min_terms` terms and keeps going until terms vanish, so
    binary DAG inputs give an exactly zero trace excess (no closed walks
    means every diagonal contribution past the identity is exactly 0).
    """
    d = m.shape[0]
    eye = ad.Tensor(np.eye(d))
    total = eye
    term = eye
    max_terms = max(min_terms, 4 * d + 40)
    for k in range(1, max_terms + 1):
        term = ad.matmul(term, m) * (1.0 / k)
        total = total + term
        if k >= min_terms and float(np.abs(term.data).max()) < 1e-30:
            break
    return total


def dag_penalty(inst):
    """h(G) = trace(exp(G*G)) - D; zero exactly on acyclic binary matrices.

    Accepts an ndarray (returns float) or a Tensor (returns a differentiable
    scalar Tensor, used by the graph prior on relaxed adjacencies).
    """
    if isinstance(inst, ad.Tensor):
        if inst.ndim != 2 or inst.shape[0] != inst.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {inst.shape}")
        d = inst.shape[0]
        expm = matrix_exp(inst * inst)
        trace = ad.tsum(expm * np.eye(d))
        return trace - float(d)
    m = _as_square(inst)
    return float(dag_penalty(ad.Tensor(m)).data)


def is_dag(inst) -> bool:
    """Exact acyclicity check by Kahn-style source elimination."""
    m = _as_square(inst)
    _check_binary(m)
    adj = m.astype(bool)
    remaining = np.ones(m.shape[0], dtype=bool)
    indeg = adj.sum(axis=0)
    while remaining.any():
        sources = remaining & (indeg == 0)
        if not sources.any():
            return False
        for i in np.nonzero(sources)[0]:
            indeg -= adj[i]
            remaining[i] = False
            adj[i] = False
    return True


def topological_order(inst) -> list[int]:
    """Node order with every edge source before its target; cyclic input raises."""
    m = _as_square(inst)
    _check_binary(m)
    adj = m.astype(bool)
    d = m.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    order: list[int] = []
    ready = sorted(i for i in range(d) if indeg[i] == 0)
    seen = set(ready)
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.nonzero(adj[i])[0]:
            indeg[j] -= 1
            if indeg[j] == 0 and j not in seen:
                ready.append(int(j))
                seen.add(int(j))
        ready.sort()
    if len(order) < d:
        cyclic = sorted(set(range(d)) - set(order))
        raise CycleError(f"graph has a cycle among nodes {cyclic}", nodes=cyclic)
    return order


# ---------------------------------------------------------------------------
# temporal -> summary aggregation


def aggregate_summary_binary(g: TemporalGraph, ignore_self: bool) -> SummaryGraph:
    """Edge (i, j) present iff it appears at any lag; optionally drop the diagonal."""
    summary = (g.adjacency.sum(axis=0) > 0).astype(np.float64)
    if ignore_self:
        np.fill_diagonal(summary, 0.0)
    return SummaryGraph(g.num_nodes, summary)


def aggregate_summary_prob(p, ignore_self: bool) -> SummaryGraph:
    """Per-pair max over lags of an edge-probability stack (K+1, D, D)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3 or p.shape[1] != p.shape[2]:
        raise ValueError(f"expected a (K+1, D, D) tensor, got shape {p.shape}")
    if (p < 0).any() or (p > 1).any() or not np.isfinite(p).all():
        raise ValueError("probabilities must lie in [0, 1]")
    summary = p.max(axis=0)
    if ignore_self:
        summary = summary.copy()
        np.fill_diagonal(summary, 0.0)
    return SummaryGraph(p.shape[1], summary)


# ---------------------------------------------------------------------------
# graph CSV format: header `tau,src,dst,value`, one row per nonzero entry


def write_graph_csv(path, adjacency: np.ndarray):
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.ndim == 2:
        adjacency = adjacency[None]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "src", "dst", "value"])
        for tau, src, dst in zip(*np.nonzero(adjacency)):
            writer.writerow([tau, src, dst, f"{adjacency[tau, src, dst]:.17g}"])


def read_graph_csv(path, num_nodes: int | None = None, max_lag: int | None = None) -> np.ndarray:
    """Load a (K+1, D, D) tensor; dims inferred from the data unless given."""
    entries: dict[tuple[int, int, int], float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["tau", "src", "dst", "value"]:
            raise ParseError(f"bad graph header {header!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                tau, src, dst = int(row[0]), int(row[1]), int(row[2])
                value = float(row[3])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad graph row {row!r}: {exc}", line=lineno) from None
            if tau < 0 or src < 0 or dst < 0:
                raise ParseError(f"negative index in row {row!r}", line=lineno)
            key = (tau, src, dst)
            if key in entries:
                raise ParseError(f"duplicate entry for (tau={tau}, src={src}, dst={dst})", line=lineno)
            entries[key] = value
    if num_nodes is None:
        num_nodes = 1 + max((max(s, d) for _, s, d in entries), default=-1)
    if max_lag is None:
        max_lag = max((t for t, _, _ in entries), default=0)
    adj = np.zeros((max_lag + 1, num_nodes, num_nodes))
    for (tau, src, dst), value in entries.items():
        if tau > max_lag or src >= num_nodes or dst >= num_nodes:
            raise ParseError(f"entry (tau={tau}, src={src}, dst={dst}) outside ({max_lag}, {num_nodes})")
        adj[tau, src, dst] = value
    return adj
