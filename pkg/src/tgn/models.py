"""The four reference TGN instantiations with their encoders and readouts.

Each model couples a shipped TGN description with:

* an encoder turning one problem instance into a :class:`GraphBatch`
  (structure plus raw features, no embeddings yet),
* an embedder producing initial embeddings from learned parameters,
* a readout turning final embeddings into logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .engine import GraphBatch, batch_concat, run
from .layers import MLPParams, init_mlp, init_params, mlp_forward
from .oracles import CentralityInstance, CNFInstance, ColoringInstance, TSPDecisionInstance
from .spec import CompiledTGN, TGNSpec, golden_spec, validate
from .tensor import (
    DTYPE,
    SparseBinaryMatrix,
    Tensor,
    add_bias,
    concat_cols,
    matmul,
    mean_all,
    mul,
    repeat_rows,
    sigmoid,
    softplus,
    spmm,
    sub,
    take_rows,
)

TASKS = ("sat", "tsp", "centrality", "kcolor")


@dataclass
class ModelConfig:
    task: str
    d: int = 32
    t_max: int = 16
    seed: int = 0
    readout_layers: int = 3
    mlp_layers: int = 3
    layer_norm: bool = False
    aggregation: str = "sum"
    k: int = 3
    measures: tuple[str, ...] = ("degree", "betweenness")
    color_init: str = "uniform"
    sizes: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.d <= 0 or any(v <= 0 for v in self.sizes.values()):
            raise ValueError("embedding sizes must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.readout_layers < 1 or self.mlp_layers < 1:
            raise ValueError("layer counts must be at least 1")
        self.measures = tuple(self.measures)

    def size(self, type_name: str) -> int:
        return self.sizes.get(type_name, self.d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "d": self.d,
            "t_max": self.t_max,
            "seed": self.seed,
            "readout_layers": self.readout_layers,
            "mlp_layers": self.mlp_layers,
            "layer_norm": self.layer_norm,
            "aggregation": self.aggregation,
            "k": self.k,
            "measures": list(self.measures),
            "color_init": self.color_init,
            "sizes": dict(self.sizes),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(**{**d, "measures": tuple(d.get("measures", ("degree", "betweenness")))})


@dataclass
class Readout:
    """Vertex-wise vote MLP on one type, pooled by mean per graph."""

    vote: MLPParams
    type_name: str


@dataclass
class Example:
    """One encoded instance with its target(s)."""

    batch: GraphBatch
    label: float | None = None
    pairs: dict[str, np.ndarray] = field(default_factory=dict)  # measure -> rows (i, j, label)


class EncodingError(ValueError):
    pass


def membership_matrix(membership: np.ndarray, n_graphs: int) -> SparseBinaryMatrix:
    return SparseBinaryMatrix.from_pairs(n_graphs, len(membership), zip(membership.tolist(), range(len(membership))))


def graph_logits(readout: Readout, embeddings: dict[str, Tensor], membership: dict[str, np.ndarray], n_graphs: int) -> Tensor:
    """Mean vertex vote per graph, shape (n_graphs, 1)."""
    mem = membership[readout.type_name]
    counts = np.bincount(mem, minlength=n_graphs)
    if np.any(counts == 0):
        raise EncodingError(f"graph {int(np.argmin(counts))} has no {readout.type_name!r} vertices to vote")
    votes = mlp_forward(readout.vote, embeddings[readout.type_name])
    return spmm(membership_matrix(mem, n_graphs), votes, mean=True)


def predict(readout: Readout, embeddings: dict[str, Tensor], membership: dict[str, np.ndarray], n_graphs: int | None = None) -> np.ndarray:
    """Per-graph probability of a positive answer."""
    if n_graphs is None:
        mem = membership[readout.type_name]
        n_graphs = int(mem.max()) + 1 if len(mem) else 0
    return sigmoid(graph_logits(readout, embeddings, membership, n_graphs)).data[:, 0].copy()


def bce_loss(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy computed from logits: softplus(z) - y z."""
    y = np.asarray(labels, dtype=DTYPE).reshape(-1, 1)
    if y.shape != logits.shape:
        raise ValueError(f"{y.shape[0]} labels for {logits.rows} logits")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return mean_all(sub(softplus(logits), mul(Tensor._wrap(y), logits)))


class TaskModel:
    """Parameters and plumbing shared by the four models."""

    task = ""
    readout_type = ""

    def __init__(self, config: ModelConfig, spec: TGNSpec):
        if config.task != self.task:
            raise ValueError(f"config is for task {config.task!r}, not {self.task!r}")
        self.config = config
        self.spec = spec
        self.plan: CompiledTGN = validate(spec)
        self.rng = np.random.default_rng(config.seed)
        self.tgn = init_params(self.plan, self.rng, config.mlp_layers, config.layer_norm)
        self.inputs: dict[str, Tensor] = {}
        self.readouts: dict[str, Readout] = {}

    def _vote(self, in_dim: int, type_name: str) -> Readout:
        hidden = [self.config.d] * (self.config.readout_layers - 1)
        return Readout(init_mlp(self.rng, [in_dim] + hidden + [1]), type_name)

    def _tied(self, name: str, type_name: str) -> None:
        n = self.plan.sizes[type_name]
        self.inputs[name] = Tensor(self.rng.normal(0.0, 1.0 / np.sqrt(n), size=(1, n)), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.tgn.named())
        out.update({f"input/{k}": v for k, v in self.inputs.items()})
        for name, r in self.readouts.items():
            out.update({f"readout/{name}/{k}": v for k, v in r.vote.named().items()})
        return out

    @property
    def encoder(self):
        return self.encode

    @property
    def readout(self) -> Readout:
        return next(iter(self.readouts.values()))

    # subclasses implement encode() and embed()
    def encode(self, instance, rng: np.random.Generator | None = None) -> Example:
        raise NotImplementedError

    def embed(self, batch: GraphBatch) -> GraphBatch:
        raise NotImplementedError

    def collate(self, examples: Sequence[Example]) -> Example:
        batch = batch_concat([e.batch for e in examples])
        if self.task == "centrality":
            pairs: dict[str, list[np.ndarray]] = {m: [] for m in self.config.measures}
            offset = 0
            for e in examples:
                for m in pairs:
                    p = e.pairs.get(m, np.zeros((0, 3), dtype=np.int64)).copy()
                    p[:, :2] += offset
                    pairs[m].append(p)
                offset += e.batch.counts["V"]
            return Example(batch, None, {m: np.concatenate(v) for m, v in pairs.items()})
        return Example(batch, np.array([e.label for e in examples], dtype=DTYPE))

    def final_embeddings(self, batch: GraphBatch) -> dict[str, Tensor]:
        state = run(self.plan, self.tgn, self.embed(batch), self.config.t_max, self.config.aggregation)
        return state.embeddings

    def logits(self, example: Example) -> dict[str, Tensor]:
        """Logits per readout head; graph-level tasks use the key 'graph'."""
        emb = self.final_embeddings(example.batch)
        b = example.batch
        return {"graph": graph_logits(self.readout, emb, b.membership, b.n_graphs)}

    def targets(self, example: Example) -> dict[str, np.ndarray]:
        return {"graph": np.asarray(example.label, dtype=DTYPE).reshape(-1)}

    def loss(self, example: Example) -> tuple[Tensor, int, int]:
        """Loss (summed over heads) plus correct and total decision counts."""
        logits = self.logits(example)
        targets = self.targets(example)
        total_loss = None
        correct = total = 0
        for head, z in logits.items():
            y = targets[head]
            if len(y) == 0:
                continue
            l = bce_loss(z, y)
            total_loss = l if total_loss is None else total_loss + l
            correct += int(np.sum((z.data[:, 0] > 0) == (y > 0.5)))
            total += len(y)
        if total_loss is None:
            raise EncodingError("batch has no targets")
        return total_loss, correct, total


# ----------------------------------------------------------------------------
# SAT


def literal_index(lit: int, n_vars: int) -> int:
    """Positive literals take rows 0..N-1, negated ones N..2N-1."""
    return lit - 1 if lit > 0 else n_vars - lit - 1


class SATModel(TaskModel):
    task = "sat"
    readout_type = "L"

    def __init__(self, config: ModelConfig):
        super().__init__(config, golden_spec("neurosat", L=config.size("L"), C=config.size("C")))
        self._tied("L", "L")
        self._tied("C", "C")
        self.readouts["graph"] = self._vote(self.plan.sizes["L"], "L")

    def encode(self, cnf: CNFInstance, rng=None) -> Example:
        n, m = cnf.n_vars, len(cnf.clauses)
        if n < 1:
            raise EncodingError("formula has no variables")
        lc = []
        for c, clause in enumerate(cnf.clauses):
            if not clause:
                raise EncodingError(f"clause {c} is empty")
            for lit in clause:
                if lit == 0 or abs(lit) > n:
                    raise EncodingError(f"literal {lit} out of range for {n} variables")
                lc.append((literal_index(lit, n), c))
        ll = [(i, i + n) for i in range(n)] + [(i + n, i) for i in range(n)]
        batch = GraphBatch(
            counts={"L": 2 * n, "C": m},
            matrices={
                "LC": SparseBinaryMatrix.from_pairs(2 * n, m, sorted(set(lc))),
                "LL": SparseBinaryMatrix.from_pairs(2 * n, 2 * n, ll),
            },
            membership={"L": np.zeros(2 * n, dtype=np.int64), "C": np.zeros(m, dtype=np.int64)},
        )
        label = None if cnf.label is None else float(cnf.label)
        return Example(batch, label)

    def embed(self, batch: GraphBatch) -> GraphBatch:
        return batch.with_embeddings(
            {"L": repeat_rows(self.inputs["L"], batch.counts["L"]), "C": repeat_rows(self.inputs["C"], batch.counts["C"])},
            batch.hidden,
        )


# ----------------------------------------------------------------------------
# TSP


class TSPModel(TaskModel):
    """Edge features are (weight, target / n); target / n is the mean leg length
    of a tour that exactly meets the target."""

    task = "tsp"
    readout_type = "E"

    def __init__(self, config: ModelConfig):
        super().__init__(config, golden_spec("tsp", V=config.size("V"), E=config.size("E")))
        self._tied("V", "V")
        d_e = self.plan.sizes["E"]
        bound = np.sqrt(6.0 / (2 + d_e))
        self.inputs["E_proj_w"] = Tensor(self.rng.uniform(-bound, bound, size=(2, d_e)), requires_grad=True)
        self.inputs["E_proj_b"] = Tensor(np.zeros((1, d_e)), requires_grad=True)
        self.readouts["graph"] = self._vote(d_e, "E")

    def encode(self, inst: TSPDecisionInstance, rng=None) -> Example:
        w = np.asarray(inst.weights, dtype=DTYPE)
        n = w.shape[0]
        if w.shape != (n, n) or n < 2:
            raise EncodingError("weights must be a square matrix with n >= 2")
        if not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise EncodingError("weight matrix is not symmetric")
        iu, ju = np.triu_indices(n, k=1)
        m = len(iu)
        ev = [(e, int(iu[e])) for e in range(m)] + [(e, int(ju[e])) for e in range(m)]
        feats = np.stack([w[iu, ju], np.full(m, inst.target / n)], axis=1)
        batch = GraphBatch(
            counts={"V": n, "E": m},
            matrices={"EV": SparseBinaryMatrix.from_pairs(m, n, ev)},
            membership={"V": np.zeros(n, dtype=np.int64), "E": np.zeros(m, dtype=np.int64)},
            features={"E": feats},
        )
        return Example(batch, float(inst.label))

    def embed(self, batch: GraphBatch) -> GraphBatch:
        feats = Tensor._wrap(np.asarray(batch.features["E"], dtype=DTYPE))
        edges = add_bias(matmul(feats, self.inputs["E_proj_w"]), self.inputs["E_proj_b"])
        return batch.with_embeddings({"V": repeat_rows(self.inputs["V"], batch.counts["V"]), "E": edges}, batch.hidden)


# ----------------------------------------------------------------------------
# centrality


class CentralityModel(TaskModel):
    """Pairwise comparison heads, one per measure.

    A head scores the ordered pair (v_i, v_j) with an MLP f and outputs
    f(v_i, v_j) - f(v_j, v_i), so swapping the pair negates the logit and the
    decision for (i, j) is always the opposite of the decision for (j, i).
    """

    task = "centrality"
    readout_type = "V"

    def __init__(self, config: ModelConfig):
        super().__init__(config, golden_spec("centrality", V=config.size("V")))
        self._tied("V", "V")
        d = self.plan.sizes["V"]
        for m in config.measures:
            self.readouts[m] = self._vote(2 * d, "V")

    def encode(self, inst: CentralityInstance, rng=None) -> Example:
        g = inst.graph
        edges = sorted(set(g.edges))
        if not g.directed:
            edges = sorted(set(edges) | {(v, u) for u, v in edges})
        batch = GraphBatch(
            counts={"V": g.n},
            matrices={"M": SparseBinaryMatrix.from_pairs(g.n, g.n, edges)},
            membership={"V": np.zeros(g.n, dtype=np.int64)},
        )
        pairs = {}
        for m in self.config.measures:
            rows = inst.pairs.get(m, [])
            pairs[m] = np.array([(i, j, int(lab)) for i, j, lab in rows], dtype=np.int64).reshape(-1, 3)
        return Example(batch, None, pairs)

    def has_self_loops(self, inst: CentralityInstance) -> bool:
        return any(u == v for u, v in inst.graph.edges)

    def embed(self, batch: GraphBatch) -> GraphBatch:
        return batch.with_embeddings({"V": repeat_rows(self.inputs["V"], batch.counts["V"])}, batch.hidden)

    def compare(self, measure: str, emb: Tensor, i, j) -> Tensor:
        head = self.readouts[measure].vote
        a, b = take_rows(emb, i), take_rows(emb, j)
        return sub(mlp_forward(head, concat_cols([a, b])), mlp_forward(head, concat_cols([b, a])))

    def logits(self, example: Example) -> dict[str, Tensor]:
        emb = self.final_embeddings(example.batch)["V"]
        return {m: self.compare(m, emb, p[:, 0], p[:, 1]) for m, p in example.pairs.items() if len(p)}

    def targets(self, example: Example) -> dict[str, np.ndarray]:
        return {m: p[:, 2].astype(DTYPE) for m, p in example.pairs.items()}


# ----------------------------------------------------------------------------
# k-colouring


def hypersphere_points(k: int, d: int) -> np.ndarray:
    """k unit vectors with equal pairwise distances (a centred simplex); needs k <= d."""
    if k > d:
        raise ValueError(f"cannot place {k} equidistant points in {d} dimensions this way")
    if k == 1:
        pts = np.zeros((1, d))
        pts[0, 0] = 1.0
        return pts
    pts = np.eye(k) - 1.0 / k
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    out = np.zeros((k, d))
    out[:, :k] = pts
    return out


class KColorModel(TaskModel):
    """Colour vertices start from random points (or a fixed simplex) and are
    fully connected to every graph vertex; only vertex embeddings vote."""

    task = "kcolor"
    readout_type = "V"

    def __init__(self, config: ModelConfig, k: int | None = None):
        k = config.k if k is None else k
        if k < 1:
            raise ValueError("k must be at least 1")
        if config.color_init not in ("uniform", "hypersphere"):
            raise ValueError(f"unknown color_init {config.color_init!r}")
        self.k = k
        super().__init__(config, golden_spec("kcolor", V=config.size("V"), C=config.size("C")))
        self._tied("V", "V")
        self.readouts["graph"] = self._vote(self.plan.sizes["V"], "V")

    def color_embeddings(self, k: int, rng: np.random.Generator | None) -> np.ndarray:
        d_c = self.plan.sizes["C"]
        if self.config.color_init == "hypersphere":
            return hypersphere_points(k, d_c)
        rng = rng if rng is not None else np.random.default_rng()
        return rng.random((k, d_c))

    def encode(self, inst: ColoringInstance, rng=None) -> Example:
        g, k = inst.graph, inst.k
        if k < 1:
            raise EncodingError("k must be at least 1")
        und = sorted({(u, v) for u, v in g.edges} | {(v, u) for u, v in g.edges})
        vc = [(v, c) for v in range(g.n) for c in range(k)]
        batch = GraphBatch(
            counts={"V": g.n, "C": k},
            matrices={
                "VV": SparseBinaryMatrix.from_pairs(g.n, g.n, und),
                "VC": SparseBinaryMatrix.from_pairs(g.n, k, vc),
            },
            membership={"V": np.zeros(g.n, dtype=np.int64), "C": np.zeros(k, dtype=np.int64)},
            features={"C": self.color_embeddings(k, rng)},
        )
        return Example(batch, float(inst.label))

    def embed(self, batch: GraphBatch) -> GraphBatch:
        colors = Tensor._wrap(np.asarray(batch.features["C"], dtype=DTYPE))
        return batch.with_embeddings({"V": repeat_rows(self.inputs["V"], batch.counts["V"]), "C": colors}, batch.hidden)


def build_sat_model(config: ModelConfig) -> SATModel:
    return SATModel(config)


def build_tsp_model(config: ModelConfig) -> TSPModel:
    return TSPModel(config)


def build_centrality_model(config: ModelConfig) -> CentralityModel:
    return CentralityModel(config)


def build_kcolor_model(config: ModelConfig, k: int | None = None) -> KColorModel:
    return KColorModel(config, k)


def build_model(config: ModelConfig) -> TaskModel:
    return {"sat": SATModel, "tsp": TSPModel, "centrality": CentralityModel, "kcolor": KColorModel}[config.task](config)
