"""Causal DAGs and the degree-normalized propagation operator.

A :class:`CausalGraph` is an ordered, named DAG with an optional prediction
target.  The propagation operator is the self-looped, degree-normalized
adjacency used by the graph-convolution feature extractor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    """Malformed graph specification or invalid graph operation."""


@dataclass(frozen=True)
class CausalGraph:
    """Directed acyclic graph over named variables.

    ``node_names`` fixes the node order used everywhere downstream (adjacency
    rows, data columns, propagation operator).  ``edges`` are (source, target)
    index pairs.  ``target_node`` optionally marks the prediction target.
    """

    node_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    target_node: int | None = None

    def __post_init__(self):
        names = tuple(self.node_names)
        edges = tuple((int(s), int(t)) for s, t in self.edges)
        object.__setattr__(self, "node_names", names)
        object.__setattr__(self, "edges", edges)
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise GraphError(f"duplicate node name: {dup!r}")
        n = len(names)
        for s, t in edges:
            if not (0 <= s < n and 0 <= t < n):
                raise GraphError(f"edge ({s}, {t}) references a missing node")
            if s == t:
                raise GraphError(f"self-edge on node {names[s]!r}")
        if len(set(edges)) != len(edges):
            raise GraphError("duplicate edge")
        if self.target_node is not None and not (0 <= self.target_node < n):
            raise GraphError(f"target index {self.target_node} out of range")
        cycle = _find_cycle(n, edges)
        if cycle is not None:
            pretty = " -> ".join(names[i] for i in cycle)
            raise GraphError(f"graph contains a cycle: {pretty}")

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    def parents(self, node: int) -> tuple[int, ...]:
        return tuple(s for s, t in self.edges if t == node)

    def children(self, node: int) -> tuple[int, ...]:
        return tuple(t for s, t in self.edges if s == node)

    def ancestors(self, node: int) -> set[int]:
        seen: set[int] = set()
        stack = list(self.parents(node))
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(self.parents(v))
        return seen

    def descendants(self, node: int) -> set[int]:
        seen: set[int] = set()
        stack = list(self.children(node))
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(self.children(v))
        return seen

    def topological_order(self) -> tuple[int, ...]:
        order = _topological_order(self.n_nodes, self.edges)
        assert order is not None  # acyclicity enforced at construction
        return order

    def index_of(self, name: str) -> int:
        try:
            return self.node_names.index(name)
        except ValueError:
            raise GraphError(f"unknown node {name!r}") from None


def _topological_order(n, edges) -> tuple[int, ...] | None:
    """Kahn's algorithm; returns None when a cycle blocks completion."""
    indeg = [0] * n
    children = [[] for _ in range(n)]
    for s, t in edges:
        indeg[t] += 1
        children[s].append(t)
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != n:
        return None
    return tuple(order)


def _find_cycle(n, edges) -> list[int] | None:
    """Return one directed cycle (as a closed node list) if any exists."""
    if _topological_order(n, edges) is not None:
        return None
    parents = [[] for _ in range(n)]
    for s, t in edges:
        parents[t].append(s)
    # Walk parent links from any node left out of a topological peel; a
    # repeat visit closes a cycle.
    indeg_order = _partial_peel(n, edges)
    start = next(i for i in range(n) if i not in indeg_order)
    path = [start]
    seen = {start}
    v = start
    while True:
        v = next(p for p in parents[v] if p not in indeg_order)
        if v in seen:
            i = path.index(v)
            return path[i:] + [v]
        seen.add(v)
        path.append(v)


def _partial_peel(n, edges) -> set[int]:
    order = _topological_order(n, edges)
    if order is not None:
        return set(order)
    indeg = [0] * n
    children = [[] for _ in range(n)]
    for s, t in edges:
        indeg[t] += 1
        children[s].append(t)
    ready = [i for i in range(n) if indeg[i] == 0]
    peeled = set()
    while ready:
        v = ready.pop()
        peeled.add(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return peeled


def parse_graph(spec_text: str) -> CausalGraph:
    """Parse the JSON graph schema into a validated :class:`CausalGraph`.

    Schema::

        {"nodes": ["a", "b", ...],
         "edges": [["a", "b"], ...],
         "target": "b"}          # optional

    Node order follows declaration order.  Edges name their endpoints.
    """
    try:
        payload = json.loads(spec_text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"graph spec is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise GraphError("graph spec must be a JSON object")
    if "nodes" not in payload:
        raise GraphError("graph spec is missing 'nodes'")
    names = payload["nodes"]
    if not isinstance(names, list) or not all(isinstance(x, str) for x in names):
        raise GraphError("'nodes' must be a list of names")
    index = {}
    for name in names:
        if name in index:
            raise GraphError(f"duplicate node name: {name!r}")
        index[name] = len(index)
    edges = []
    for item in payload.get("edges", []):
        if not (isinstance(item, list) and len(item) == 2):
            raise GraphError(f"edge {item!r} must be a [source, target] pair")
        src, dst = item
        for endpoint in (src, dst):
            if endpoint not in index:
                raise GraphError(f"unknown node {endpoint!r} in edge {item!r}")
        if src == dst:
            raise GraphError(f"self-edge on node {src!r}")
        edges.append((index[src], index[dst]))
    target = None
    if payload.get("target") is not None:
        tname = payload["target"]
        if tname not in index:
            raise GraphError(f"unknown target node {tname!r}")
        target = index[tname]
    return CausalGraph(tuple(names), tuple(edges), target)


def serialize_graph(g: CausalGraph) -> str:
    """Inverse of :func:`parse_graph`: JSON text with named endpoints."""
    payload = {
        "nodes": list(g.node_names),
        "edges": [[g.node_names[s], g.node_names[t]] for s, t in g.edges],
    }
    if g.target_node is not None:
        payload["target"] = g.node_names[g.target_node]
    return json.dumps(payload, indent=2) + "\n"


def adjacency_matrix(g: CausalGraph) -> np.ndarray:
    """Binary matrix with A[i, j] = 1 iff the edge i -> j exists."""
    a = np.zeros((g.n_nodes, g.n_nodes))
    for s, t in g.edges:
        a[s, t] = 1.0
    return a


@dataclass(frozen=True)
class PropagationOperator:
    """Self-looped, degree-normalized adjacency for graph convolutions."""

    matrix: np.ndarray
    node_order: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise GraphError("propagation operator must be square")
        if len(self.node_order) != m.shape[0]:
            raise GraphError("node order length must match operator size")
        if np.any(m < 0):
            raise GraphError("propagation operator entries must be nonnegative")
        if np.any(np.diag(m) <= 0):
            raise GraphError("propagation operator diagonal must be positive")


def propagation_operator(
    adjacency: np.ndarray,
    symmetrize: bool = True,
    node_order: tuple[str, ...] | None = None,
) -> PropagationOperator:
    """Build D^(-1/2) (A + I) D^(-1/2) from a zero-diagonal adjacency.

    With ``symmetrize`` the self-looped adjacency is replaced by its
    elementwise maximum with its transpose, which makes the operator
    symmetric.  Degrees are row sums of the self-looped matrix, so every
    degree is at least one and the normalization is always defined.
    """
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError("adjacency must be square")
    if np.any(np.diag(a) != 0):
        raise GraphError("adjacency must have a zero diagonal")
    n = a.shape[0]
    a_tilde = a + np.eye(n)
    if symmetrize:
        a_tilde = np.maximum(a_tilde, a_tilde.T)
    deg = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    s = inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]
    if node_order is None:
        node_order = tuple(str(i) for i in range(n))
    return PropagationOperator(s, tuple(node_order))


def restrict_to_inputs(g: CausalGraph) -> CausalGraph:
    """Induced subgraph on every node except the target, order preserved."""
    if g.target_node is None:
        raise GraphError("graph has no target node to remove")
    keep = [i for i in range(g.n_nodes) if i != g.target_node]
    remap = {old: new for new, old in enumerate(keep)}
    names = tuple(g.node_names[i] for i in keep)
    edges = tuple(
        (remap[s], remap[t]) for s, t in g.edges if s in remap and t in remap
    )
    return CausalGraph(names, edges, None)


_MAX_PERTURB_ATTEMPTS = 10_000


def perturb_graph(g: CausalGraph, mode: str, seed: int) -> CausalGraph:
    """Degrade the causal information in ``g`` reproducibly.

    ``partial`` rewires ceil(|E|/2) randomly chosen edges to random non-edge
    pairs; ``incorrect`` replaces the whole edge set with edges that are
    neither original edges nor their reversals.  Both modes rejection-sample
    until the result is acyclic and keep the node set (and target) intact.
    """
    if mode not in ("partial", "incorrect"):
        raise GraphError(f"unknown perturbation mode {mode!r}")
    n = g.n_nodes
    original = set(g.edges)
    if not original:
        return g
    rng = np.random.default_rng(seed)
    all_pairs = [(i, j) for i in range(n) for j in range(n) if i != j]

    if mode == "partial":
        k = math.ceil(len(original) / 2)
        chosen = rng.choice(len(g.edges), size=k, replace=False)
        kept = [e for idx, e in enumerate(g.edges) if idx not in set(chosen.tolist())]
        for _ in range(_MAX_PERTURB_ATTEMPTS):
            forbidden = set(kept)
            new_edges = list(kept)
            candidates = [p for p in all_pairs if p not in forbidden]
            if len(candidates) < k:
                raise GraphError("graph too dense to rewire")
            picks = rng.choice(len(candidates), size=k, replace=False)
            new_edges.extend(candidates[i] for i in picks)
            if _topological_order(n, new_edges) is not None:
                return CausalGraph(g.node_names, tuple(new_edges), g.target_node)
        raise GraphError("could not find an acyclic rewiring in 10000 attempts")

    reversed_edges = {(t, s) for s, t in original}
    candidates = [p for p in all_pairs if p not in original and p not in reversed_edges]
    if len(candidates) < len(original):
        raise GraphError("graph too dense to replace every edge")
    for _ in range(_MAX_PERTURB_ATTEMPTS):
        picks = rng.choice(len(candidates), size=len(original), replace=False)
        new_edges = [candidates[i] for i in picks]
        if _topological_order(n, new_edges) is not None:
            return CausalGraph(g.node_names, tuple(new_edges), g.target_node)
    raise GraphError("could not find an acyclic replacement in 10000 attempts")
