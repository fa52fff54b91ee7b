"""Approximators for compositional targets along a bounded-fan-in DAG.

Each non-input vertex carries a target function of its parents' values; the
built network wires per-vertex narrow approximators level by level, carrying
earlier values forward through identity pairs and clamping every vertex
output onto [-1, 1] so downstream domains stay valid. Width then scales with
the fan-in bound d_* instead of the ambient dimension d.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .builder import build_for_plan, feasible_plan
from .network import (
    IDENTITY,
    RELU,
    LayerSpec,
    ReluNetwork,
    affine_network,
    compose_serial,
    stack_padded,
)
from .partition import ConstructionPlan
from .reference import ReferenceEvaluator
from .targets import TargetFunction, make_target


class GraphError(ValueError):
    """Invalid composition graph."""


class DomainViolationError(Exception):
    """An intermediate value left [-1, 1], naming the receiving vertex."""

    def __init__(self, vertex: int, value: float):
        super().__init__(
            f"input to vertex {vertex} is {value:.6g}, outside [-1, 1]"
        )
        self.vertex = vertex
        self.value = value


@dataclass(frozen=True)
class CompositeVertex:
    id: int                 # 1-based; inputs occupy 1..d
    parents: tuple
    target: TargetFunction


@dataclass(frozen=True)
class CompositionGraph:
    """DAG with d input vertices and fan-in at most d_star.

    Vertices are listed in ascending id order d+1..T; every parent id must
    precede the vertex, the final vertex alone has no outgoing edges, and
    each vertex function must match its fan-in.
    """

    num_inputs: int
    d_star: int
    vertices: tuple

    def __post_init__(self):
        d = self.num_inputs
        if d < 1 or self.d_star < 1:
            raise GraphError("num_inputs and d_star must be positive")
        if not self.vertices:
            raise GraphError("graph needs at least one computation vertex")
        used = set()
        expected = d + 1
        for v in self.vertices:
            if v.id != expected:
                raise GraphError(f"vertex ids must be consecutive; expected {expected}, got {v.id}")
            expected += 1
            if not 1 <= len(v.parents) <= self.d_star:
                raise GraphError(f"vertex {v.id} has fan-in {len(v.parents)} > d_star = {self.d_star}")
            for p in v.parents:
                if not 1 <= p < v.id:
                    raise GraphError(f"vertex {v.id} references invalid parent {p}")
            if v.target.dim != len(v.parents):
                raise GraphError(
                    f"vertex {v.id} target has dim {v.target.dim}, fan-in is {len(v.parents)}"
                )
            used.update(v.parents)
        if self.vertices[-1].id in used:
            raise GraphError("the final vertex must have no outgoing edges")

    @property
    def total_vertices(self) -> int:
        return self.num_inputs + len(self.vertices)

    def levels(self) -> list:
        """Vertices grouped by topological level (inputs are level 0)."""
        level = {i: 0 for i in range(1, self.num_inputs + 1)}
        out: dict = {}
        for v in self.vertices:
            lv = 1 + max(level[p] for p in v.parents)
            level[v.id] = lv
            out.setdefault(lv, []).append(v)
        return [out[k] for k in sorted(out)]


def load_graph(doc: dict, beta: int) -> CompositionGraph:
    """Graph from the JSON format {d, d_star, vertices: [{id, parents, target}]}."""
    try:
        d = int(doc["d"])
        d_star = int(doc["d_star"])
        raw = doc["vertices"]
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"malformed graph document: {exc}") from exc
    vertices = []
    for item in raw:
        try:
            parents = tuple(int(p) for p in item["parents"])
            target = make_target(item["target"], len(parents), beta)
            vertices.append(CompositeVertex(int(item["id"]), parents, target))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed vertex entry {item!r}: {exc}") from exc
    return CompositionGraph(d, d_star, tuple(vertices))


def load_graph_file(path, beta: int) -> CompositionGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return load_graph(json.load(fh), beta)


def eval_composite(graph: CompositionGraph, x) -> float:
    """Exact recursive evaluation of F_T(x), the reference oracle."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != graph.num_inputs:
        raise GraphError(f"point has dim {x.shape[0]}, graph expects {graph.num_inputs}")
    values = {i + 1: float(x[i]) for i in range(graph.num_inputs)}
    for v in graph.vertices:
        args = np.array([values[p] for p in v.parents])
        for p, val in zip(v.parents, args):
            if abs(val) > 1.0 + 1e-9:
                raise DomainViolationError(v.id, val)
        values[v.id] = v.target.evaluate(args)
    return values[graph.vertices[-1].id]


def vertex_budgets(graph: CompositionGraph, eps: float) -> dict:
    """Per-vertex accuracy budgets from a backward amplification pass.

    amp(j) bounds how much an output perturbation at vertex j inflates the
    final output (children are lipschitz-bounded per coordinate); splitting
    eps as eps_j = eps / (#vertices * amp_j) makes sum_j amp_j * eps_j = eps.
    """
    amp = {graph.vertices[-1].id: 1.0}
    for v in reversed(graph.vertices):
        amp.setdefault(v.id, 0.0)
        for p in v.parents:
            if p > graph.num_inputs:
                amp[p] = amp.get(p, 0.0) + amp[v.id] * v.target.lipschitz
    t_eff = len(graph.vertices)
    budgets = {}
    for v in graph.vertices:
        a = max(amp.get(v.id, 0.0), 1e-12)
        budgets[v.id] = eps / (t_eff * a)
    return budgets


def clamp_network() -> ReluNetwork:
    """clamp(v) = relu(v+1) - relu(v-1) - 1; identity on [-1,1], saturates beyond."""
    l1 = LayerSpec(np.array([[1.0], [1.0]]), np.array([1.0, -1.0]), RELU)
    out = LayerSpec(np.array([[1.0, -1.0]]), np.array([-1.0]), IDENTITY)
    return ReluNetwork(1, [l1, out])


def clamp_ref(v: float) -> float:
    return max(v + 1.0, 0.0) - max(v - 1.0, 0.0) - 1.0


@dataclass
class CompositeBuild:
    net: ReluNetwork
    graph: CompositionGraph
    eps: float
    budgets: dict = field(default_factory=dict)
    plans: dict = field(default_factory=dict)   # vertex id -> ConstructionPlan


def build_composite(graph: CompositionGraph, eps: float, *,
                    width_budget: int | None = None) -> CompositeBuild:
    """One fully connected network for the whole DAG, accurate to eps.

    Vertices on the same topological level are built in parallel; values
    still needed later ride identity-pair channels, and every vertex output
    is clamped onto [-1, 1].
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    budgets = vertex_budgets(graph, eps)
    plans = {}
    vertex_nets = {}
    for v in graph.vertices:
        plan = feasible_plan(v.target, budgets[v.id], width_budget=width_budget)
        plans[v.id] = plan
        core = build_for_plan(v.target.in_ball(), plan)
        vertex_nets[v.id] = compose_serial(core, clamp_network())

    # liveness: keep a value while any later vertex (or the output) needs it
    last_use = {graph.vertices[-1].id: graph.total_vertices + 1}
    for v in graph.vertices:
        for p in v.parents:
            last_use[p] = max(last_use.get(p, 0), v.id)

    slots = {i + 1: i for i in range(graph.num_inputs)}  # value id -> state slot
    state = affine_network(np.eye(graph.num_inputs))
    for level in graph.levels():
        width_in = state.output_dim
        keep = [vid for vid in slots
                if last_use.get(vid, 0) > max(v.id for v in level)]
        keep.sort()
        parts = [affine_network(np.eye(len(keep)))] if keep else []
        rows = []
        for vid in keep:
            r = np.zeros(width_in)
            r[slots[vid]] = 1.0
            rows.append(r)
        for v in level:
            parts.append(vertex_nets[v.id])
            for p in v.parents:
                r = np.zeros(width_in)
                r[slots[p]] = 1.0
                rows.append(r)
        pre = affine_network(np.vstack(rows))
        stage = stack_padded(parts, shared_input=False)
        state = compose_serial(compose_serial(state, pre), stage)
        slots = {vid: i for i, vid in enumerate(keep)}
        for i, v in enumerate(level):
            slots[v.id] = len(keep) + i
    out_row = np.zeros((1, state.output_dim))
    out_row[0, slots[graph.vertices[-1].id]] = 1.0
    net = compose_serial(state, affine_network(out_row))
    return CompositeBuild(net=net, graph=graph, eps=eps, budgets=budgets, plans=plans)


def composite_reference(build: CompositeBuild):
    """Plain-arithmetic mirror of the composite network (clamps included)."""
    refs = {v.id: ReferenceEvaluator(v.target, build.plans[v.id])
            for v in build.graph.vertices}

    def evaluate(x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        values = {i + 1: float(x[i]) for i in range(build.graph.num_inputs)}
        for v in build.graph.vertices:
            args = np.array([values[p] for p in v.parents])
            values[v.id] = clamp_ref(refs[v.id](args))
        return values[build.graph.vertices[-1].id]

    return evaluate


def pair_interaction_graph(d: int, beta: int, pair_target: str = "prod_pair",
                           combiner: str = "half_sum") -> CompositionGraph:
    """Additive pair model: combine per-pair functions of (x1,x2) and (x3,x4)...

    Realizes the interaction structure f = combine(f_I1(x_I1), f_I2(x_I2), ...)
    over consecutive disjoint pairs, with fan-in 2 throughout.
    """
    if d < 4 or d % 2:
        raise GraphError("pair interaction model wants even d >= 4")
    vertices = []
    vid = d + 1
    pair_ids = []
    for k in range(0, d, 2):
        vertices.append(CompositeVertex(vid, (k + 1, k + 2),
                                        make_target(pair_target, 2, beta)))
        pair_ids.append(vid)
        vid += 1
    acc = pair_ids[0]
    for nxt in pair_ids[1:]:
        vertices.append(CompositeVertex(vid, (acc, nxt),
                                        make_target(combiner, 2, beta)))
        acc = vid
        vid += 1
    return CompositionGraph(d, 2, tuple(vertices))
