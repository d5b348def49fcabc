"""Text formats for instances and dataset directories.

* SAT: DIMACS CNF. The label rides in a comment line ``c label sat|unsat``.
* TSP: ``n``, then n coordinate lines, then the target cost, then the label.
* Graphs: header ``n m directed`` followed by m ``u v`` lines. Colouring
  files append ``k K`` and ``label L``; centrality files append per-vertex
  ``vertex measure value`` lines and ``pair measure i j label`` lines.

Floats are written with 17 significant digits so they read back exactly.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .oracles import (
    CentralityInstance,
    CNFInstance,
    ColoringInstance,
    Graph,
    TSPDecisionInstance,
    euclidean_weights,
)

SUFFIX = {"sat": ".cnf", "tsp": ".tsp", "centrality": ".cent", "kcolor": ".col"}


class DatasetFormatError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str | None = None):
        where = ""
        if source:
            where += f"{source}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + msg)
        self.line = line


def _f(x: float) -> str:
    return f"{x:.17g}"


def _lines(text: str, comment: str | None = None) -> list[tuple[int, list[str]]]:
    out = []
    for no, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split()
        if not toks or (comment and toks[0] == comment):
            continue
        out.append((no, toks))
    return out


def _int(tok: str, line: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DatasetFormatError(f"expected an integer, got {tok!r}", line) from None


def _float(tok: str, line: int) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise DatasetFormatError(f"expected a number, got {tok!r}", line) from None
    if not np.isfinite(val):
        raise DatasetFormatError(f"non-finite number {tok!r}", line)
    return val


# ----------------------------------------------------------------------------
# SAT


def write_dimacs(cnf: CNFInstance) -> str:
    out = []
    if cnf.label is not None:
        out.append(f"c label {'sat' if cnf.label else 'unsat'}")
    out.append(f"p cnf {cnf.n_vars} {len(cnf.clauses)}")
    out.extend(" ".join(str(l) for l in c) + " 0" for c in cnf.clauses)
    return "\n".join(out) + "\n"


def read_dimacs(text: str) -> CNFInstance:
    label = None
    header = None
    clauses: list[tuple[int, ...]] = []
    current: list[int] = []
    for no, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split()
        if not toks:
            continue
        if toks[0] == "c":
            if len(toks) == 3 and toks[1] == "label":
                if toks[2] not in ("sat", "unsat"):
                    raise DatasetFormatError(f"bad label {toks[2]!r}", no)
                label = toks[2] == "sat"
            continue
        if toks[0] == "p":
            if header is not None:
                raise DatasetFormatError("second problem line", no)
            if len(toks) != 4 or toks[1] != "cnf":
                raise DatasetFormatError("problem line must read 'p cnf N M'", no)
            header = (_int(toks[2], no), _int(toks[3], no))
            if header[0] < 0 or header[1] < 0:
                raise DatasetFormatError("negative counts in problem line", no)
            continue
        if header is None:
            raise DatasetFormatError("clause before the 'p cnf' line", no)
        for tok in toks:
            lit = _int(tok, no)
            if lit == 0:
                if not current:
                    raise DatasetFormatError("empty clause", no)
                clauses.append(tuple(current))
                current = []
            else:
                if abs(lit) > header[0]:
                    raise DatasetFormatError(f"literal {lit} exceeds {header[0]} variables", no)
                current.append(lit)
    if header is None:
        raise DatasetFormatError("missing 'p cnf' line")
    if current:
        raise DatasetFormatError("last clause is not terminated by 0")
    if len(clauses) != header[1]:
        raise DatasetFormatError(f"header announces {header[1]} clauses, found {len(clauses)}")
    try:
        return CNFInstance(header[0], clauses, label)
    except ValueError as e:
        raise DatasetFormatError(str(e)) from None


# ----------------------------------------------------------------------------
# TSP


def write_tsp(inst: TSPDecisionInstance) -> str:
    out = [str(inst.n)]
    out.extend(f"{_f(x)} {_f(y)}" for x, y in inst.coords)
    out.append(_f(inst.target))
    out.append("1" if inst.label else "0")
    return "\n".join(out) + "\n"


def read_tsp(text: str) -> TSPDecisionInstance:
    lines = _lines(text, comment="#")
    if not lines:
        raise DatasetFormatError("empty TSP file")
    no, toks = lines[0]
    if len(toks) != 1:
        raise DatasetFormatError("first line must hold the city count", no)
    n = _int(toks[0], no)
    if n < 1:
        raise DatasetFormatError("city count must be positive", no)
    if len(lines) != n + 3:
        raise DatasetFormatError(f"expected {n + 3} non-empty lines, found {len(lines)}")
    coords = np.zeros((n, 2))
    for i in range(n):
        no, toks = lines[1 + i]
        if len(toks) != 2:
            raise DatasetFormatError("coordinate lines hold two numbers", no)
        coords[i] = [_float(toks[0], no), _float(toks[1], no)]
    no, toks = lines[n + 1]
    if len(toks) != 1:
        raise DatasetFormatError("target cost line holds one number", no)
    target = _float(toks[0], no)
    no, toks = lines[n + 2]
    if toks not in (["0"], ["1"]):
        raise DatasetFormatError("label line must be 0 or 1", no)
    return TSPDecisionInstance(coords, euclidean_weights(coords), target, toks == ["1"])


# ----------------------------------------------------------------------------
# graphs


def write_graph(g: Graph) -> str:
    out = [f"{g.n} {len(g.edges)} {1 if g.directed else 0}"]
    out.extend(f"{u} {v}" for u, v in g.edges)
    return "\n".join(out) + "\n"


def _read_graph_block(lines: list[tuple[int, list[str]]]) -> tuple[Graph, list[tuple[int, list[str]]]]:
    if not lines:
        raise DatasetFormatError("missing graph header")
    no, toks = lines[0]
    if len(toks) != 3 or toks[2] not in ("0", "1"):
        raise DatasetFormatError("graph header must read 'n m directed' with directed 0 or 1", no)
    n, m = _int(toks[0], no), _int(toks[1], no)
    directed = toks[2] == "1"
    if n < 0 or m < 0:
        raise DatasetFormatError("negative counts in graph header", no)
    if len(lines) < 1 + m:
        raise DatasetFormatError(f"header announces {m} edges, found {len(lines) - 1}")
    edges = []
    for no, toks in lines[1 : 1 + m]:
        if len(toks) != 2:
            raise DatasetFormatError("edge lines hold two vertex ids", no)
        u, v = _int(toks[0], no), _int(toks[1], no)
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetFormatError(f"edge ({u}, {v}) out of range", no)
        edges.append((u, v))
    return Graph(n, edges, directed), lines[1 + m :]


def read_graph(text: str) -> Graph:
    g, rest = _read_graph_block(_lines(text, comment="#"))
    if rest:
        raise DatasetFormatError("unexpected content after the edge list", rest[0][0])
    return g


def write_coloring(inst: ColoringInstance) -> str:
    return write_graph(inst.graph) + f"k {inst.k}\nlabel {1 if inst.label else 0}\n"


def read_coloring(text: str) -> ColoringInstance:
    g, rest = _read_graph_block(_lines(text, comment="#"))
    fields = {}
    for no, toks in rest:
        if len(toks) != 2 or toks[0] not in ("k", "label") or toks[0] in fields:
            raise DatasetFormatError("expected one 'k K' and one 'label L' line", no)
        fields[toks[0]] = (_int(toks[1], no), no)
    if set(fields) != {"k", "label"}:
        raise DatasetFormatError("colouring file needs 'k' and 'label' lines")
    if fields["label"][0] not in (0, 1):
        raise DatasetFormatError("label must be 0 or 1", fields["label"][1])
    if fields["k"][0] < 1:
        raise DatasetFormatError("k must be at least 1", fields["k"][1])
    return ColoringInstance(g, fields["k"][0], bool(fields["label"][0]))


def write_centrality(inst: CentralityInstance) -> str:
    out = [write_graph(inst.graph).rstrip("\n")]
    for measure, vals in inst.values.items():
        out.extend(f"{v} {measure} {_f(x)}" for v, x in enumerate(vals))
    for measure, pairs in inst.pairs.items():
        out.extend(f"pair {measure} {i} {j} {int(lab)}" for i, j, lab in pairs)
    return "\n".join(out) + "\n"


def read_centrality(text: str) -> CentralityInstance:
    g, rest = _read_graph_block(_lines(text, comment="#"))
    values: dict[str, np.ndarray] = {}
    seen: dict[str, set[int]] = {}
    pairs: dict[str, list[tuple[int, int, bool]]] = {}
    for no, toks in rest:
        if toks[0] == "pair":
            if len(toks) != 5 or toks[4] not in ("0", "1"):
                raise DatasetFormatError("pair lines read 'pair measure i j label'", no)
            i, j = _int(toks[2], no), _int(toks[3], no)
            if not (0 <= i < g.n and 0 <= j < g.n):
                raise DatasetFormatError("pair vertex out of range", no)
            pairs.setdefault(toks[1], []).append((i, j, toks[4] == "1"))
        elif len(toks) == 3:
            v = _int(toks[0], no)
            if not 0 <= v < g.n:
                raise DatasetFormatError(f"vertex {v} out of range", no)
            arr = values.setdefault(toks[1], np.zeros(g.n))
            arr[v] = _float(toks[2], no)
            seen.setdefault(toks[1], set()).add(v)
        else:
            raise DatasetFormatError("expected a value line or a pair line", no)
    for measure, vs in seen.items():
        if len(vs) != g.n:
            raise DatasetFormatError(f"measure {measure!r} lacks values for some vertices")
    return CentralityInstance(g, values, pairs)


WRITERS = {"sat": write_dimacs, "tsp": write_tsp, "centrality": write_centrality, "kcolor": write_coloring}
READERS = {"sat": read_dimacs, "tsp": read_tsp, "centrality": read_centrality, "kcolor": read_coloring}


# ----------------------------------------------------------------------------
# dataset directories


def write_dataset(path, task: str, instances: Iterable, meta: dict | None = None) -> Path:
    if task not in WRITERS:
        raise ValueError(f"unknown task {task!r}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files = []
    for i, inst in enumerate(instances):
        name = f"{i:06d}{SUFFIX[task]}"
        (root / name).write_text(WRITERS[task](inst))
        files.append(name)
    info = {"task": task, "count": len(files), "files": files, **(meta or {})}
    (root / "meta.json").write_text(json.dumps(info, indent=2) + "\n")
    return root


def read_dataset(path) -> tuple[str, list]:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no dataset at {root} (missing meta.json)")
    try:
        meta = json.loads(meta_path.read_text())
        task, files = meta["task"], meta["files"]
    except (json.JSONDecodeError, KeyError) as e:
        raise DatasetFormatError(f"bad meta.json: {e}", source=str(meta_path)) from None
    if task not in READERS:
        raise DatasetFormatError(f"unknown task {task!r}", source=str(meta_path))
    instances = []
    for name in files:
        try:
            instances.append(READERS[task]((root / name).read_text()))
        except DatasetFormatError as e:
            raise DatasetFormatError(str(e), source=name) from None
    return task, instances
