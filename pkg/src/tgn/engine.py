"""Synchronous typed message passing over a compiled plan."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .layers import TGNParams, lstm_step, mlp_forward
from .spec import CompiledTGN
from .tensor import DTYPE, SparseBinaryMatrix, Tensor, block_diag, concat_cols, concat_rows, spmm


class BatchError(ValueError):
    pass


@dataclass
class GraphBatch:
    """Vertices, adjacency and inputs for one or more disjoint graphs.

    ``membership[type][v]`` is the graph index of vertex ``v``. ``features``
    carries raw per-vertex inputs that model encoders turn into embeddings.
    """

    counts: dict[str, int]
    matrices: dict[str, SparseBinaryMatrix]
    membership: dict[str, np.ndarray]
    n_graphs: int = 1
    embeddings: dict[str, Tensor] = field(default_factory=dict)
    hidden: dict[str, Tensor] = field(default_factory=dict)
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def with_embeddings(self, embeddings: dict[str, Tensor], hidden: dict[str, Tensor] | None = None) -> "GraphBatch":
        return GraphBatch(
            self.counts, self.matrices, self.membership, self.n_graphs, dict(embeddings), dict(hidden or {}), self.features
        )

    def graph_counts(self, type_name: str) -> np.ndarray:
        return np.bincount(self.membership[type_name], minlength=self.n_graphs)


@dataclass
class TGNState:
    embeddings: dict[str, Tensor]
    hidden: dict[str, Tensor]
    t: int = 0

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.embeddings.items()}


def check_batch(plan: CompiledTGN, batch: GraphBatch, need_embeddings: bool = True) -> None:
    problems = []
    for t in plan.types:
        if t not in batch.counts:
            problems.append(f"no vertex count for type {t!r}")
    for name, (a, b) in plan.spec.matrices.items():
        m = batch.matrices.get(name)
        if m is None:
            problems.append(f"missing matrix {name!r}")
        elif a in batch.counts and b in batch.counts and m.shape != (batch.counts[a], batch.counts[b]):
            problems.append(f"matrix {name!r} is {m.shape}, expected {(batch.counts[a], batch.counts[b])}")
    for t in plan.types:
        n = batch.counts.get(t, 0)
        shape = (n, plan.sizes[t])
        if need_embeddings:
            e = batch.embeddings.get(t)
            if e is None:
                problems.append(f"missing initial embeddings for type {t!r}")
            elif e.shape != shape:
                problems.append(f"embeddings for {t!r} are {e.shape}, expected {shape}")
        h = batch.hidden.get(t)
        if h is not None and h.shape != shape:
            problems.append(f"hidden state for {t!r} is {h.shape}, expected {shape}")
        mem = batch.membership.get(t)
        if mem is None or len(mem) != n:
            problems.append(f"membership for {t!r} must have {n} entries")
        elif n and (mem.min() < 0 or mem.max() >= batch.n_graphs or np.any(np.diff(mem) < 0)):
            problems.append(f"membership for {t!r} must be sorted graph indices in 0..{batch.n_graphs - 1}")
    if problems:
        raise BatchError("; ".join(problems))


def aggregate(plan: CompiledTGN, params: TGNParams, batch: GraphBatch, embeddings: dict[str, Tensor], mean: bool = False) -> dict[str, Tensor]:
    """Aggregated message block fed to each updated type's update function.

    Columns follow the declared term order.
    """
    cache: dict[tuple[str | None, str], Tensor] = {}
    blocks = {}
    for target in plan.updated_types:
        parts = []
        for term in plan.terms[target]:
            key = (term.msg, term.var)
            if key not in cache:
                src = embeddings[term.var]
                cache[key] = src if term.msg is None else mlp_forward(params.messages[term.msg], src)
            parts.append(spmm(batch.matrices[term.mat], cache[key], transpose=term.transpose, mean=mean))
        blocks[target] = concat_cols(parts)
    return blocks


def run(
    plan: CompiledTGN,
    params: TGNParams,
    batch: GraphBatch,
    t_max: int,
    aggregation: str = "sum",
    on_step: Callable[[TGNState], None] | None = None,
) -> TGNState:
    """Run ``t_max`` message-passing iterations and return the final state.

    Every type update in an iteration reads only the previous iteration's
    embeddings. Missing hidden states start at zero.
    """
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    if aggregation not in ("sum", "mean"):
        raise ValueError(f"aggregation must be 'sum' or 'mean', got {aggregation!r}")
    check_batch(plan, batch)
    embeddings = dict(batch.embeddings)
    hidden = {
        t: batch.hidden[t] if t in batch.hidden else Tensor._wrap(np.zeros((batch.counts[t], plan.sizes[t]), dtype=DTYPE))
        for t in plan.types
    }
    state = TGNState(embeddings, hidden, 0)
    if on_step:
        on_step(state)
    for step in range(t_max):
        blocks = aggregate(plan, params, batch, state.embeddings, mean=aggregation == "mean")
        embeddings = dict(state.embeddings)
        hidden = dict(state.hidden)
        for target, x in blocks.items():
            embeddings[target], hidden[target] = lstm_step(
                params.updates[target], x, state.embeddings[target], state.hidden[target]
            )
        state = TGNState(embeddings, hidden, step + 1)
        if on_step:
            on_step(state)
    return state


def embedding_trace(plan: CompiledTGN, params: TGNParams, batch: GraphBatch, t_max: int, aggregation: str = "sum") -> list[dict[str, np.ndarray]]:
    snaps: list[dict[str, np.ndarray]] = []
    run(plan, params, batch, t_max, aggregation, on_step=lambda s: snaps.append(s.snapshot()))
    return snaps


def batch_concat(batches: Sequence[GraphBatch]) -> GraphBatch:
    """Disjoint union: block-diagonal matrices, stacked rows, offset graph ids."""
    if not batches:
        raise BatchError("nothing to concatenate")
    first = batches[0]
    if len(batches) == 1:
        return first
    for b in batches[1:]:
        if set(b.counts) != set(first.counts) or set(b.matrices) != set(first.matrices):
            raise BatchError("batches disagree on types or matrices")
        if set(b.embeddings) != set(first.embeddings) or set(b.hidden) != set(first.hidden):
            raise BatchError("batches disagree on which embeddings/hidden states are given")
        if set(b.features) != set(first.features):
            raise BatchError("batches disagree on features")
    offsets = np.cumsum([0] + [b.n_graphs for b in batches])
    counts = {t: sum(b.counts[t] for b in batches) for t in first.counts}
    matrices = {name: block_diag([b.matrices[name] for b in batches]) for name in first.matrices}
    membership = {
        t: np.concatenate([b.membership[t] + off for b, off in zip(batches, offsets)]).astype(np.int64) for t in first.counts
    }
    embeddings = {t: concat_rows([b.embeddings[t] for b in batches]) for t in first.embeddings}
    hidden = {t: concat_rows([b.hidden[t] for b in batches]) for t in first.hidden}
    features = {t: np.concatenate([b.features[t] for b in batches], axis=0) for t in first.features}
    return GraphBatch(counts, matrices, membership, int(offsets[-1]), embeddings, hidden, features)


TRACE_HEADER = ["type", "t", "vertex", "dim", "value"]


def write_trace_csv(trace: Sequence[dict[str, np.ndarray]], out: TextIO) -> None:
    out.write(",".join(TRACE_HEADER) + "\n")
    for t, snap in enumerate(trace):
        for type_name, arr in snap.items():
            for v in range(arr.shape[0]):
                for d in range(arr.shape[1]):
                    out.write(f"{type_name},{t},{v},{d},{arr[v, d]:.17g}\n")


def trace_to_csv(trace: Sequence[dict[str, np.ndarray]]) -> str:
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()


def read_trace_csv(src: TextIO) -> list[dict[str, np.ndarray]]:
    reader = csv.reader(src)
    header = next(reader, None)
    if header != TRACE_HEADER:
        raise ValueError(f"bad trace header {header}")
    cells: dict[int, dict[str, dict[tuple[int, int], float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 5:
            raise ValueError(f"line {lineno}: expected 5 fields")
        type_name, t, v, d, value = row
        cells.setdefault(int(t), {}).setdefault(type_name, {})[(int(v), int(d))] = float(value)
    trace = []
    for t in range(len(cells)):
        if t not in cells:
            raise ValueError(f"missing timestep {t}")
        snap = {}
        for type_name, entries in cells[t].items():
            rows = 1 + max(k[0] for k in entries)
            cols = 1 + max(k[1] for k in entries)
            arr = np.zeros((rows, cols), dtype=DTYPE)
            for (v, d), value in entries.items():
                arr[v, d] = value
            snap[type_name] = arr
        trace.append(snap)
    return trace
