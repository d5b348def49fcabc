"""Declarative TGN descriptions and their compilation into a checked plan.

A description has four parts: embedding sizes per type, adjacency matrices
between types, message functions between types, and for every updated type
an ordered list of aggregation terms. On disk it is a JSON document with the
sections ``type_sizes``, ``matrices``, ``messages`` and ``updates``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

SECTIONS = ("type_sizes", "matrices", "messages", "updates")
GOLDEN_SPECS = ("neurosat", "tsp", "centrality", "kcolor", "graph_network")


@dataclass(frozen=True)
class AggregationTerm:
    mat: str
    var: str
    msg: str | None = None
    transpose: bool = False


@dataclass
class TGNSpec:
    type_sizes: dict[str, int]
    matrices: dict[str, tuple[str, str]]
    messages: dict[str, tuple[str, str]]
    updates: dict[str, list[AggregationTerm]]


@dataclass(frozen=True)
class SpecIssue:
    kind: str
    name: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.name}: {self.detail}"


class SpecError(ValueError):
    """Raised by :func:`validate` with every violation found."""

    def __init__(self, issues: list[SpecIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))

    @property
    def kinds(self) -> set[str]:
        return {i.kind for i in self.issues}


class SpecParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, column {col}: {msg}" if line else msg)


@dataclass
class CompiledTGN:
    spec: TGNSpec
    types: list[str]
    sizes: dict[str, int]
    message_dims: dict[str, tuple[int, int]]
    aggregated_dims: dict[str, int]
    update_input_dims: dict[str, int]
    terms: dict[str, list[AggregationTerm]] = field(default_factory=dict)

    @property
    def updated_types(self) -> list[str]:
        return [t for t in self.types if t in self.terms]

    def lstm_dims(self, type_name: str) -> tuple[int, int]:
        """(aggregated message width D, hidden width n) for a type's update."""
        return self.aggregated_dims[type_name], self.sizes[type_name]

    def describe(self) -> str:
        lines = []
        for t in self.types:
            n = self.sizes[t]
            if t in self.terms:
                d = self.aggregated_dims[t]
                lines.append(f"type {t}: n={n} D({t})={d} update_input={n + d}")
                for term in self.terms[t]:
                    arrow = f"{term.mat}{'^T' if term.transpose else ''}"
                    lines.append(f"  <- {arrow} x {term.msg or 'identity'}({term.var})")
            else:
                lines.append(f"type {t}: n={n} (not updated)")
        for name, (a, b) in self.message_dims.items():
            lines.append(f"message {name}: {a} -> {b}")
        return "\n".join(lines)


def _pair(value) -> tuple[str, str] | None:
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, str) for v in value):
        return (value[0], value[1])
    return None


def validate(spec: TGNSpec) -> CompiledTGN:
    """Check a description and compile it, or raise :class:`SpecError`.

    Matrix ``X`` declared as ``(A, B)`` has shape |A| x |B|. A term feeding
    type ``T`` from type ``S`` must use a matrix whose rows index ``T`` and
    whose columns index ``S`` once the optional transpose is applied.
    """
    issues: list[SpecIssue] = []

    def bad(kind, name, detail):
        issues.append(SpecIssue(kind, str(name), detail))

    sizes: dict[str, int] = {}
    type_sizes = spec.type_sizes if isinstance(spec.type_sizes, dict) else {}
    if not isinstance(spec.type_sizes, dict) or not spec.type_sizes:
        bad("malformed", "type_sizes", "must be a non-empty mapping of type name to size")
    for name, n in type_sizes.items():
        if not isinstance(name, str) or not name:
            bad("malformed", name, "type names must be non-empty strings")
        elif isinstance(n, bool) or not isinstance(n, int):
            bad("malformed", name, f"embedding size must be an integer, got {n!r}")
        elif n <= 0:
            bad("nonpositive_size", name, f"embedding size must be positive, got {n}")
        else:
            sizes[name] = n

    def check_endpoints(section, table):
        good = {}
        if not isinstance(table, dict):
            bad("malformed", section, "must be a mapping")
            return good
        for name, ends in table.items():
            pair = _pair(ends)
            if pair is None:
                bad("malformed", name, f"{section} entries must be (type, type) pairs")
                continue
            missing = [t for t in pair if t not in type_sizes]
            for t in missing:
                bad("undeclared_type", t, f"{section[:-1]} {name!r} references undeclared type {t!r}")
            if not missing:
                good[name] = pair
        return good

    matrices = check_endpoints("matrices", spec.matrices)
    messages = check_endpoints("messages", spec.messages)

    terms: dict[str, list[AggregationTerm]] = {}
    aggregated: dict[str, int] = {}
    updates = spec.updates if isinstance(spec.updates, dict) else {}
    if not isinstance(spec.updates, dict):
        bad("malformed", "updates", "must be a mapping")
    for target, term_list in updates.items():
        if target not in type_sizes:
            bad("undeclared_type", target, "update declared for an undeclared type")
            continue
        if not isinstance(term_list, (list, tuple)):
            bad("malformed", target, "update terms must be a list")
            continue
        if not term_list:
            bad("empty_update", target, "updated type has no aggregation terms")
            continue
        checked = []
        for k, term in enumerate(term_list):
            where = f"{target}[{k}]"
            if not isinstance(term, AggregationTerm):
                bad("malformed", where, "not an aggregation term")
                continue
            if not (isinstance(term.mat, str) and isinstance(term.var, str) and isinstance(term.msg, (str, type(None)))):
                bad("malformed", where, "mat, var and msg must be names")
                continue
            if term.var not in type_sizes:
                bad("undeclared_type", term.var, f"term {where} reads undeclared type")
                continue
            if term.mat not in matrices:
                if term.mat not in (spec.matrices if isinstance(spec.matrices, dict) else {}):
                    bad("undeclared_matrix", term.mat, f"term {where} uses an undeclared matrix")
                continue
            rows_t, cols_t = matrices[term.mat]
            if term.transpose:
                rows_t, cols_t = cols_t, rows_t
            if (rows_t, cols_t) != (target, term.var):
                bad(
                    "orientation",
                    term.mat,
                    f"term {where} needs a {target} x {term.var} matrix but "
                    f"{term.mat}{'^T' if term.transpose else ''} is {rows_t} x {cols_t}",
                )
            if term.msg is None:
                if term.var in sizes and target in sizes and sizes[term.var] != sizes[target]:
                    bad(
                        "identity_size",
                        where,
                        f"identity message from {term.var} (n={sizes[term.var]}) to {target} (n={sizes[target]})",
                    )
            elif term.msg not in messages:
                if term.msg not in (spec.messages if isinstance(spec.messages, dict) else {}):
                    bad("undeclared_message", term.msg, f"term {where} uses an undeclared message")
                continue
            elif messages[term.msg] != (term.var, target):
                src, dst = messages[term.msg]
                bad(
                    "message_endpoint",
                    term.msg,
                    f"term {where} needs a message {term.var} -> {target}, declared {src} -> {dst}",
                )
            checked.append(term)
        terms[target] = checked
        if target in sizes:
            aggregated[target] = sizes[target] * len(term_list)

    if issues:
        raise SpecError(issues)

    return CompiledTGN(
        spec=spec,
        types=list(type_sizes),
        sizes=dict(sizes),
        message_dims={m: (sizes[a], sizes[b]) for m, (a, b) in messages.items()},
        aggregated_dims=aggregated,
        update_input_dims={t: sizes[t] + d for t, d in aggregated.items()},
        terms=terms,
    )


# ----------------------------------------------------------------------------
# serialisation


class _Duplicate(Exception):
    def __init__(self, key):
        self.key = key


def _no_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise _Duplicate(k)
        seen[k] = v
    return seen


def _position(text: str, index: int) -> tuple[int, int]:
    line = text.count("\n", 0, index) + 1
    col = index - (text.rfind("\n", 0, index) + 1) + 1
    return line, col


def load_spec(text: str) -> TGNSpec:
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as e:
        raise SpecParseError(e.msg, e.lineno, e.colno) from None
    except _Duplicate as d:
        hits = [m.start() for m in re.finditer(re.escape(json.dumps(d.key)) + r"\s*:", text)]
        line, col = _position(text, hits[1]) if len(hits) > 1 else (0, 0)
        raise SpecParseError(f"duplicate key {d.key!r}", line, col) from None
    if not isinstance(doc, dict):
        raise SpecParseError("top level must be an object", 1, 1)
    for section in SECTIONS:
        if section not in doc:
            raise SpecParseError(f"missing section {section!r}")
    extra = set(doc) - set(SECTIONS)
    if extra:
        raise SpecParseError(f"unknown sections {sorted(extra)}")

    def pairs(section):
        table = doc[section]
        if not isinstance(table, dict):
            raise SpecParseError(f"section {section!r} must be an object")
        out = {}
        for name, ends in table.items():
            pair = _pair(ends)
            if pair is None:
                raise SpecParseError(f"{section}.{name} must be a two-element list of type names")
            out[name] = pair
        return out

    if not isinstance(doc["type_sizes"], dict):
        raise SpecParseError("section 'type_sizes' must be an object")
    if not isinstance(doc["updates"], dict):
        raise SpecParseError("section 'updates' must be an object")
    updates: dict[str, list[AggregationTerm]] = {}
    for target, raw_terms in doc["updates"].items():
        if not isinstance(raw_terms, list):
            raise SpecParseError(f"updates.{target} must be a list")
        parsed = []
        for k, raw in enumerate(raw_terms):
            if not isinstance(raw, dict) or "mat" not in raw or "var" not in raw:
                raise SpecParseError(f"updates.{target}[{k}] needs 'mat' and 'var'")
            unknown = set(raw) - {"mat", "msg", "var", "transpose?"}
            if unknown:
                raise SpecParseError(f"updates.{target}[{k}] has unknown keys {sorted(unknown)}")
            parsed.append(
                AggregationTerm(
                    mat=raw["mat"], var=raw["var"], msg=raw.get("msg"), transpose=bool(raw.get("transpose?", False))
                )
            )
        updates[target] = parsed
    return TGNSpec(dict(doc["type_sizes"]), pairs("matrices"), pairs("messages"), updates)


def spec_to_dict(spec: TGNSpec) -> dict[str, Any]:
    def term(t: AggregationTerm):
        d: dict[str, Any] = {"mat": t.mat}
        if t.msg is not None:
            d["msg"] = t.msg
        if t.transpose:
            d["transpose?"] = True
        d["var"] = t.var
        return d

    return {
        "type_sizes": dict(spec.type_sizes),
        "matrices": {k: list(v) for k, v in spec.matrices.items()},
        "messages": {k: list(v) for k, v in spec.messages.items()},
        "updates": {k: [term(t) for t in v] for k, v in spec.updates.items()},
    }


def save_spec(spec: TGNSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def golden_spec_text(name: str) -> str:
    if name not in GOLDEN_SPECS:
        raise KeyError(f"no shipped spec named {name!r}; choose from {GOLDEN_SPECS}")
    return resources.files("tgn.specs").joinpath(f"{name}.json").read_text()


def golden_spec(name: str, **sizes: int) -> TGNSpec:
    """Load a shipped spec, optionally overriding embedding sizes by type name."""
    spec = load_spec(golden_spec_text(name))
    for t, n in sizes.items():
        if t not in spec.type_sizes:
            raise KeyError(f"spec {name!r} has no type {t!r}")
        spec.type_sizes[t] = n
    return spec


def graph_network_example_spec(d_node: int = 16, d_edge: int = 16, d_global: int = 16) -> TGNSpec:
    """Node/edge/global dataflow of a classic graph network, written as a TGN.

    Edges read their source node, target node and the global vertex; nodes
    read the edges that target them and the global vertex; the global vertex
    reads all nodes and all edges through complete matrices.
    """
    return TGNSpec(
        type_sizes={"N": d_node, "E": d_edge, "G": d_global},
        matrices={"ES": ("E", "N"), "ET": ("E", "N"), "EG": ("E", "G"), "NG": ("N", "G")},
        messages={
            "N_src_E": ("N", "E"),
            "N_tgt_E": ("N", "E"),
            "G_msg_E": ("G", "E"),
            "E_msg_N": ("E", "N"),
            "G_msg_N": ("G", "N"),
            "N_msg_G": ("N", "G"),
            "E_msg_G": ("E", "G"),
        },
        updates={
            "E": [
                AggregationTerm("ES", "N", "N_src_E"),
                AggregationTerm("ET", "N", "N_tgt_E"),
                AggregationTerm("EG", "G", "G_msg_E"),
            ],
            "N": [
                AggregationTerm("ET", "E", "E_msg_N", transpose=True),
                AggregationTerm("NG", "G", "G_msg_N"),
            ],
            "G": [
                AggregationTerm("NG", "N", "N_msg_G", transpose=True),
                AggregationTerm("EG", "E", "E_msg_G", transpose=True),
            ],
        },
    )
