"""Exact solvers and seeded instance generators for the four tasks.

Every generator labels its output with an exact solver and re-checks the
label before returning, so datasets are correct by construction.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

MAX_SAT_VARS = 20
MAX_TSP_CITIES = 14
MAX_COLOR_VERTICES = 20
CLAUSE_WIDTHS = (2, 3, 4)


class OracleBoundError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class CNFInstance:
    n_vars: int
    clauses: list[tuple[int, ...]]
    label: bool | None = None

    def __post_init__(self):
        self.clauses = [tuple(int(l) for l in c) for c in self.clauses]
        for c in self.clauses:
            if not c:
                raise ValueError("empty clause")
            if any(l == 0 or abs(l) > self.n_vars for l in c):
                raise ValueError(f"literal out of range in clause {c}")
            if any(-l in c for l in c):
                raise ValueError(f"clause {c} contains a variable and its negation")


@dataclass
class TSPDecisionInstance:
    coords: np.ndarray
    weights: np.ndarray
    target: float
    label: bool
    optimum: float | None = None

    @property
    def n(self) -> int:
        return len(self.coords)


@dataclass
class Graph:
    n: int
    edges: list[tuple[int, int]]
    directed: bool = True

    def __post_init__(self):
        self.edges = [(int(u), int(v)) for u, v in self.edges]
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u}, {v}) out of range for n={self.n}")

    def successors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            out[u].append(v)
            if not self.directed:
                out[v].append(u)
        return [sorted(set(s)) for s in out]


@dataclass
class CentralityInstance:
    graph: Graph
    values: dict[str, np.ndarray]
    pairs: dict[str, list[tuple[int, int, bool]]] = field(default_factory=dict)


@dataclass
class ColoringInstance:
    graph: Graph
    k: int
    label: bool


# ----------------------------------------------------------------------------
# SAT


def _dpll(clauses: list[list[int]], assignment: dict[int, bool]) -> dict[int, bool] | None:
    while True:
        unit = None
        remaining = []
        for c in clauses:
            open_lits = []
            satisfied = False
            for l in c:
                val = assignment.get(abs(l))
                if val is None:
                    open_lits.append(l)
                elif val == (l > 0):
                    satisfied = True
                    break
            if satisfied:
                continue
            if not open_lits:
                return None
            if len(open_lits) == 1 and unit is None:
                unit = open_lits[0]
            remaining.append(open_lits)
        clauses = remaining
        if unit is None:
            break
        assignment = {**assignment, abs(unit): unit > 0}
    if not clauses:
        return assignment
    var = Counter(abs(l) for c in clauses for l in c).most_common(1)[0][0]
    for value in (True, False):
        found = _dpll(clauses, {**assignment, var: value})
        if found is not None:
            return found
    return None


def satisfies(clauses, assignment: dict[int, bool]) -> bool:
    return all(any(assignment.get(abs(l), False) == (l > 0) for l in c) for c in clauses)


def dpll_solve(cnf: CNFInstance, max_vars: int = MAX_SAT_VARS) -> tuple[bool, dict[int, bool] | None]:
    """Decide satisfiability; returns (sat, full witness assignment or None)."""
    if cnf.n_vars > max_vars:
        raise OracleBoundError(f"{cnf.n_vars} variables exceeds the bound of {max_vars}")
    found = _dpll([list(c) for c in cnf.clauses], {})
    if found is None:
        return False, None
    witness = {v: found.get(v, True) for v in range(1, cnf.n_vars + 1)}
    assert satisfies(cnf.clauses, witness)
    return True, witness


def gen_sat_pair(n_vars: int, seed, max_clauses: int = 1000) -> tuple[CNFInstance, CNFInstance]:
    """A (SAT, UNSAT) pair that differs in the sign of one literal.

    Random clauses are appended until the formula becomes unsatisfiable; then
    one literal of the last clause is negated. Every satisfying assignment of
    the prefix falsifies that clause, so the flipped formula is satisfiable.
    """
    if n_vars < 2:
        raise ValueError("need at least two variables")
    rng = np.random.default_rng(seed)
    clauses: list[tuple[int, ...]] = []
    for _ in range(max_clauses):
        width = min(int(rng.choice(CLAUSE_WIDTHS)), n_vars)
        chosen = rng.choice(n_vars, size=width, replace=False) + 1
        signs = rng.random(width) < 0.5
        clauses.append(tuple(int(v) if s else -int(v) for v, s in zip(chosen, signs)))
        if not dpll_solve(CNFInstance(n_vars, clauses))[0]:
            break
    else:
        raise GenerationError(f"still satisfiable after {max_clauses} clauses")
    last = list(clauses[-1])
    pos = int(rng.integers(len(last)))
    last[pos] = -last[pos]
    unsat = CNFInstance(n_vars, list(clauses), label=False)
    sat = CNFInstance(n_vars, clauses[:-1] + [tuple(last)], label=True)
    if not dpll_solve(sat)[0] or dpll_solve(unsat)[0]:
        raise GenerationError("pair labels failed the solver check")
    return sat, unsat


# ----------------------------------------------------------------------------
# TSP


def euclidean_weights(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def held_karp(weights, max_n: int = MAX_TSP_CITIES) -> float:
    """Optimal tour cost by dynamic programming over visited subsets."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    if w.shape != (n, n):
        raise ValueError("weights must be square")
    if n < 3:
        raise ValueError("a tour needs at least 3 cities")
    if n > max_n:
        raise OracleBoundError(f"{n} cities exceeds the bound of {max_n}")
    m = n - 1  # city 0 is the fixed start; bit j stands for city j+1
    inner = w[1:, 1:]
    best = np.full((1 << m, m), np.inf)
    for j in range(m):
        best[1 << j, j] = w[0, j + 1]
    for mask in range(1, 1 << m):
        bits = [j for j in range(m) if mask >> j & 1]
        if len(bits) < 2:
            continue
        prev = np.array([mask ^ (1 << j) for j in bits])
        # best[prev, i] is inf whenever i is not in prev, so no extra masking
        best[mask, bits] = (best[prev] + inner[:, bits].T).min(axis=1)
    return float((best[(1 << m) - 1] + w[1:, 0]).min())


def gen_tsp_pair(n: int, seed, deviation: float = 0.02) -> tuple[TSPDecisionInstance, TSPDecisionInstance]:
    """(YES, NO) decision instances on one random euclidean graph.

    The targets sit at (1 + deviation) and (1 - deviation) times the optimum.
    """
    if not 3 <= n <= MAX_TSP_CITIES:
        raise OracleBoundError(f"n={n} outside 3..{MAX_TSP_CITIES}")
    rng = np.random.default_rng(seed)
    coords = rng.random((n, 2))
    w = euclidean_weights(coords)
    opt = held_karp(w)
    yes = TSPDecisionInstance(coords, w, (1 + deviation) * opt, True, opt)
    no = TSPDecisionInstance(coords.copy(), w.copy(), (1 - deviation) * opt, False, opt)
    return yes, no


# ----------------------------------------------------------------------------
# centrality


def degree_centrality(g: Graph) -> np.ndarray:
    deg = np.zeros(g.n)
    for u, v in set(g.edges):
        deg[u] += 1
        deg[v] += 1
    return deg


def betweenness_centrality(g: Graph) -> np.ndarray:
    """Unnormalised shortest-path betweenness (Brandes, unweighted).

    Ordered pairs (s, t) are counted for directed graphs; for undirected
    graphs each unordered pair counts once.
    """
    succ = g.successors()
    bc = np.zeros(g.n)
    for s in range(g.n):
        order = []
        preds: list[list[int]] = [[] for _ in range(g.n)]
        sigma = np.zeros(g.n)
        sigma[s] = 1.0
        dist = np.full(g.n, -1)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in succ[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(g.n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc if g.directed else bc / 2.0


CENTRALITY_MEASURES = {"degree": degree_centrality, "betweenness": betweenness_centrality}


def centralities(g: Graph, measures=("degree", "betweenness")) -> dict[str, np.ndarray]:
    return {m: CENTRALITY_MEASURES[m](g) for m in measures}


def random_digraph(n: int, rng: np.random.Generator, p: float) -> Graph:
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    u, v = np.nonzero(mask)
    return Graph(n, list(zip(u.tolist(), v.tolist())), directed=True)


def sample_pairs(values: np.ndarray, count: int, rng: np.random.Generator, tol: float = 1e-9) -> list[tuple[int, int, bool]]:
    """Random vertex pairs (i, j, c(i) < c(j)), skipping ties."""
    n = len(values)
    candidates = [(i, j) for i in range(n) for j in range(n) if i != j and abs(values[i] - values[j]) > tol]
    if not candidates:
        return []
    picks = rng.choice(len(candidates), size=min(count, len(candidates)), replace=False)
    return [(i, j, bool(values[i] < values[j])) for i, j in (candidates[k] for k in picks)]


def gen_centrality_instance(
    n: int, seed, pairs_per_measure: int = 32, measures=("degree", "betweenness"), p: float | None = None
) -> CentralityInstance:
    rng = np.random.default_rng(seed)
    if p is None:
        p = float(rng.uniform(2.0, 5.0)) / max(n - 1, 1)
    g = random_digraph(n, rng, p)
    values = centralities(g, measures)
    pairs = {m: sample_pairs(values[m], pairs_per_measure, rng) for m in measures}
    return CentralityInstance(g, values, pairs)


# ----------------------------------------------------------------------------
# k-colouring


def kcoloring(g: Graph, k: int, max_n: int = MAX_COLOR_VERTICES) -> list[int] | None:
    """A proper k-colouring or None, by backtracking.

    Vertices are visited by decreasing degree; a vertex may only open the
    next unused colour, so the first vertex always takes colour 0.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if g.n > max_n:
        raise OracleBoundError(f"{g.n} vertices exceeds the bound of {max_n}")
    adj = [set(s) for s in Graph(g.n, g.edges, directed=False).successors()]
    if any(v in adj[v] for v in range(g.n)):
        return None
    order = sorted(range(g.n), key=lambda v: -len(adj[v]))
    colour = [-1] * g.n

    def place(pos: int, used: int) -> bool:
        if pos == len(order):
            return True
        v = order[pos]
        taken = {colour[u] for u in adj[v]}
        for c in range(min(used + 1, k)):
            if c not in taken:
                colour[v] = c
                if place(pos + 1, max(used, c + 1)):
                    return True
        colour[v] = -1
        return False

    return colour if place(0, 0) else None


def kcolorable(g: Graph, k: int, max_n: int = MAX_COLOR_VERTICES) -> bool:
    return kcoloring(g, k, max_n) is not None


def gen_coloring_pair(n: int, k: int, seed) -> tuple[ColoringInstance, ColoringInstance]:
    """(colourable, not colourable) graphs that differ by one edge.

    Edges are added in random order until the graph stops being
    k-colourable; the graph before the last edge is the positive sibling.
    """
    if not 2 <= n <= MAX_COLOR_VERTICES:
        raise OracleBoundError(f"n={n} outside 2..{MAX_COLOR_VERTICES}")
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    all_edges = list(combinations(range(n), 2))
    order = rng.permutation(len(all_edges))
    edges: list[tuple[int, int]] = []
    witness: list[int] | None = [0] * n
    for idx in order:
        u, v = all_edges[idx]
        edges.append((u, v))
        if witness is not None and witness[u] != witness[v]:
            continue
        witness = kcoloring(Graph(n, edges, directed=False), k)
        if witness is None:
            break
    else:
        raise GenerationError(f"complete graph on {n} vertices is {k}-colourable")
    neg = ColoringInstance(Graph(n, list(edges), directed=False), k, False)
    pos = ColoringInstance(Graph(n, edges[:-1], directed=False), k, True)
    if not kcolorable(pos.graph, k) or kcolorable(neg.graph, k):
        raise GenerationError("pair labels failed the solver check")
    return pos, neg
