"""Application DAGs and heterogeneous architecture descriptions.

Both are immutable after construction and validated eagerly. Graphs are
read from and written to plain JSON documents.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ParseError, ValidationError
from .physics import PowerParams, ReliabilityParams, ThermalParams, VFLevel

DEFAULT_CLASSES = ("A", "B", "C", "D")


@dataclass(frozen=True, eq=False)
class Task:
    id: str
    wcet: Mapping[str, float]
    hetero: Mapping[str, float] = field(default_factory=dict)
    deadline: float | None = None

    def __post_init__(self):
        if not self.wcet:
            raise ValidationError(f"task {self.id!r}: empty wcet map")
        for cls, w in self.wcet.items():
            if not (w > 0 and math.isfinite(w)):
                raise ValidationError(f"task {self.id!r}: non-positive WCET {w!r} for class {cls!r}")
        for cls, h in self.hetero.items():
            if not (h > 0 and math.isfinite(h)):
                raise ValidationError(f"task {self.id!r}: non-positive heterogeneity {h!r} for class {cls!r}")
        if self.deadline is not None and not self.deadline > 0:
            raise ValidationError(f"task {self.id!r}: non-positive deadline {self.deadline!r}")

    def runs_on(self, core_class: str) -> bool:
        return core_class in self.wcet

    def nominal_time(self, core_class: str) -> float:
        """Execution time at the core's nominal (highest) frequency."""
        return self.wcet[core_class] * self.hetero.get(core_class, 1.0)

    @property
    def max_wcet(self) -> float:
        return max(self.nominal_time(c) for c in self.wcet)

    @property
    def effective_deadline(self) -> float:
        return math.inf if self.deadline is None else self.deadline


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    comm: float = 0.0


class AppGraph:
    """Weighted task DAG.

    Exposes ``preds``/``succs`` adjacency keyed by task id and a
    deterministic topological ``order`` (Kahn's algorithm, ties by id).
    """

    def __init__(self, tasks: Iterable[Task], edges: Iterable[Edge] = (), name: str = ""):
        self.name = name
        self.tasks: tuple[Task, ...] = tuple(tasks)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.by_id: dict[str, Task] = {}
        for t in self.tasks:
            if t.id in self.by_id:
                raise ValidationError(f"duplicate task id {t.id!r}")
            self.by_id[t.id] = t
        self.preds: dict[str, dict[str, float]] = {t.id: {} for t in self.tasks}
        self.succs: dict[str, dict[str, float]] = {t.id: {} for t in self.tasks}
        for e in self.edges:
            if e.src == e.dst:
                raise ValidationError(f"self-edge on task {e.src!r}")
            for end in (e.src, e.dst):
                if end not in self.by_id:
                    raise ValidationError(f"edge {e.src!r}->{e.dst!r} references unknown task {end!r}")
            if e.dst in self.succs[e.src]:
                raise ValidationError(f"duplicate edge {e.src!r}->{e.dst!r}")
            if not (e.comm >= 0 and math.isfinite(e.comm)):
                raise ValidationError(f"edge {e.src!r}->{e.dst!r}: invalid comm cost {e.comm!r}")
            self.succs[e.src][e.dst] = e.comm
            self.preds[e.dst][e.src] = e.comm
        self.order: tuple[str, ...] = self._toposort()

    def _toposort(self):
        indeg = {tid: len(p) for tid, p in self.preds.items()}
        frontier = sorted(tid for tid, d in indeg.items() if d == 0)
        order = []
        while frontier:
            tid = frontier.pop(0)
            order.append(tid)
            released = []
            for s in self.succs[tid]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    released.append(s)
            if released:
                frontier = sorted(frontier + released)
        if len(order) != len(self.tasks):
            stuck = sorted(tid for tid, d in indeg.items() if d > 0)
            raise ValidationError(f"cycle detected among tasks {stuck}")
        return tuple(order)

    def __len__(self):
        return len(self.tasks)

    def critical_path(self, weight=None, include_comm: bool = False) -> float:
        """Longest path length; ``weight(task)`` defaults to the maximum nominal WCET."""
        weight = weight or (lambda t: t.max_wcet)
        finish: dict[str, float] = {}
        for tid in self.order:
            start = 0.0
            for p, comm in self.preds[tid].items():
                start = max(start, finish[p] + (comm if include_comm else 0.0))
            finish[tid] = start + weight(self.by_id[tid])
        return max(finish.values(), default=0.0)

    def tail_lengths(self, weight=None) -> dict[str, float]:
        """Longest path from each task to a sink, the task itself included."""
        weight = weight or (lambda t: t.max_wcet)
        tail: dict[str, float] = {}
        for tid in reversed(self.order):
            tail[tid] = weight(self.by_id[tid]) + max((tail[s] for s in self.succs[tid]), default=0.0)
        return tail

    def to_dict(self) -> dict:
        tasks = []
        for t in self.tasks:
            d = {"id": t.id, "wcet": dict(t.wcet)}
            if t.deadline is not None:
                d["deadline"] = t.deadline
            if t.hetero:
                d["hetero"] = dict(t.hetero)
            tasks.append(d)
        doc = {"tasks": tasks, "edges": [{"src": e.src, "dst": e.dst, "comm": e.comm} for e in self.edges]}
        if self.name:
            doc["name"] = self.name
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def ready_set(graph: AppGraph, completed: set[str] | frozenset[str]) -> set[str]:
    """Uncompleted tasks whose predecessors have all completed."""
    return {
        tid
        for tid in graph.order
        if tid not in completed and all(p in completed for p in graph.preds[tid])
    }


def _load(text):
    if isinstance(text, (dict, list)):
        return text
    try:
        return json.loads(text)
    except (TypeError, json.JSONDecodeError) as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc


def parse_app_graph(text: str | Mapping) -> AppGraph:
    doc = _load(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("tasks"), list):
        raise ParseError("application graph must be an object with a 'tasks' list")
    tasks = []
    try:
        for i, t in enumerate(doc["tasks"]):
            if "id" not in t or "wcet" not in t:
                raise ParseError(f"task #{i} lacks 'id' or 'wcet'")
            if not isinstance(t["wcet"], dict):
                raise ParseError(f"task {t['id']!r}: 'wcet' must map core class to seconds")
            tasks.append(
                Task(
                    id=str(t["id"]),
                    wcet={str(k): float(v) for k, v in t["wcet"].items()},
                    hetero={str(k): float(v) for k, v in t.get("hetero", {}).items()},
                    deadline=None if t.get("deadline") is None else float(t["deadline"]),
                )
            )
        edges = [
            Edge(str(e["src"]), str(e["dst"]), float(e.get("comm", 0.0)))
            for e in doc.get("edges", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(f"malformed graph element: {exc!r}") from exc
    return AppGraph(tasks, edges, name=str(doc.get("name", "")))


# --- synthetic generation -------------------------------------------------


def generate_synthetic(
    n_tasks: int,
    seed: int,
    width: int | None = None,
    depth: int | None = None,
    ccr: float = 0.1,
    wcet_range: tuple[float, float] = (5e-3, 25e-3),
    hetero_range: tuple[float, float] = (0.6, 1.4),
    classes: tuple[str, ...] = DEFAULT_CLASSES,
    rho: float = 2.0,
    name: str | None = None,
) -> AppGraph:
    """Layered random DAG, a pure function of its arguments.

    Tasks are spread over ``depth`` layers (default ~sqrt(n)). Every task
    outside the last layer gets at least one successor in the next layer and
    every task outside the first layer at least one predecessor in the
    previous one; extra forward edges are sprinkled on top. Deadlines are
    latest-finish times: ``rho * CP - (tail - wcet)``.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    if (width is not None and width < 1) or (depth is not None and depth < 1):
        raise ValueError("width and depth must be >= 1")
    if depth is None:
        depth = max(1, round(math.sqrt(n_tasks))) if width is None else math.ceil(n_tasks / width)
    depth = min(depth, n_tasks)
    if ccr < 0:
        raise ValueError("ccr must be non-negative")
    rng = np.random.default_rng(seed)

    # at least one task per layer, remainder spread at random
    sizes = np.ones(depth, dtype=int)
    extra = rng.integers(0, depth, size=n_tasks - depth)
    np.add.at(sizes, extra, 1)
    layers, k = [], 0
    for s in sizes:
        layers.append([f"T{i}" for i in range(k, k + s)])
        k += s

    mean_wcet = 0.5 * (wcet_range[0] + wcet_range[1])
    pairs = set()
    for upper, lower in zip(layers, layers[1:]):
        for src in upper:
            pairs.add((src, lower[rng.integers(len(lower))]))
        for dst in lower:
            if not any((src, dst) in pairs for src in upper):
                pairs.add((upper[rng.integers(len(upper))], dst))
    # sparse long-range edges
    flat = [(li, tid) for li, layer in enumerate(layers) for tid in layer]
    for li, tid in flat:
        if li + 2 < depth and rng.random() < 0.2:
            target_layer = layers[rng.integers(li + 2, depth)]
            pairs.add((tid, target_layer[rng.integers(len(target_layer))]))
    edges = []
    index = {tid: i for i, (_, tid) in enumerate(flat)}
    for src, dst in sorted(pairs, key=lambda e: (index[e[0]], index[e[1]])):
        comm = float(rng.uniform(0.0, 2.0 * ccr * mean_wcet))
        edges.append(Edge(src, dst, comm))

    tasks = []
    for _, tid in flat:
        base = float(rng.uniform(*wcet_range))
        hetero = {c: float(rng.uniform(*hetero_range)) for c in classes}
        tasks.append(Task(tid, {c: base for c in classes}, hetero))
    graph = AppGraph(tasks, edges)
    tail = graph.tail_lengths()
    cp = max(tail.values())
    tasks = [
        Task(t.id, t.wcet, t.hetero, deadline=rho * cp - (tail[t.id] - t.max_wcet)) for t in tasks
    ]
    return AppGraph(tasks, edges, name=name or f"synthetic-n{n_tasks}-s{seed}")


# --- architecture ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoreSpec:
    id: str
    core_class: str
    vf_levels: tuple[VFLevel, ...]
    neighbors: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.vf_levels:
            raise ValidationError(f"core {self.id!r} has no V/F levels")
        freqs = [v.frequency for v in self.vf_levels]
        if freqs != sorted(freqs):
            raise ValidationError(f"core {self.id!r}: V/F levels must ascend by frequency")
        for n, g in self.neighbors.items():
            if not g >= 0:
                raise ValidationError(f"core {self.id!r}: negative conductance to {n!r}")

    @property
    def nominal_frequency(self) -> float:
        return self.vf_levels[-1].frequency


@dataclass(frozen=True)
class Ranges:
    """Normalization bounds of the four scheduler inputs.

    Each input maps to [0, 1] as (x - lo) / (hi - lo), clamped. The failure
    rate spans several decades, so by default it is normalized on log10.
    """

    u_max: float = 1.0
    p_max: float = 50.0
    theta_max: float = 450.0
    lambda_max: float = 1e-3
    u_min: float = 0.0
    p_min: float = 15.0
    theta_min: float = 293.0
    lambda_min: float = 1e-10
    lambda_log: bool = True

    def __post_init__(self):
        for lo, hi in self.bounds():
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValidationError(f"invalid normalization range ({lo}, {hi})")
        if not (self.u_max > 0 and self.p_max > 0 and self.theta_max > 0 and self.lambda_max > 0):
            raise ValidationError("normalization maxima must be strictly positive")
        if self.lambda_log and not self.lambda_min > 0:
            raise ValidationError("log-scaled lambda range needs lambda_min > 0")

    def bounds(self):
        return (
            (self.u_min, self.u_max),
            (self.p_min, self.p_max),
            (self.theta_min, self.theta_max),
            (self.lambda_min, self.lambda_max),
        )


class ArchGraph:
    def __init__(
        self,
        cores: Iterable[CoreSpec],
        thermal: ThermalParams | None = None,
        power: PowerParams | None = None,
        reliability: ReliabilityParams | None = None,
        ranges: Ranges | None = None,
    ):
        self.cores: tuple[CoreSpec, ...] = tuple(cores)
        self.thermal = thermal or ThermalParams()
        self.power = power or PowerParams()
        self.reliability = reliability or ReliabilityParams()
        self.ranges = ranges or Ranges()
        if not self.cores:
            raise ValidationError("architecture needs at least one core")
        ids = [c.id for c in self.cores]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate core ids")
        by_id = {c.id: c for c in self.cores}
        for c in self.cores:
            for n, g in c.neighbors.items():
                if n not in by_id:
                    raise ValidationError(f"core {c.id!r} lists unknown neighbour {n!r}")
                if n == c.id:
                    raise ValidationError(f"core {c.id!r} lists itself as neighbour")
                if by_id[n].neighbors.get(c.id) != g:
                    raise ValidationError(f"asymmetric conductance between {c.id!r} and {n!r}")
        for name, obj in (("thermal", self.thermal), ("power", self.power)):
            if not all(math.isfinite(v) for v in asdict(obj).values()):
                raise ValidationError(f"non-finite {name} constant")
        self.by_id = by_id
        self.index = {c.id: i for i, c in enumerate(self.cores)}

    def to_dict(self) -> dict:
        rel = asdict(self.reliability)
        return {
            "cores": [
                {
                    "id": c.id,
                    "core_class": c.core_class,
                    "vf_levels": [{"voltage": v.voltage, "frequency": v.frequency} for v in c.vf_levels],
                    "neighbors": dict(c.neighbors),
                }
                for c in self.cores
            ],
            "thermal": asdict(self.thermal),
            "power": asdict(self.power),
            "reliability": rel,
            "ranges": asdict(self.ranges),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def parse_arch_graph(text: str | Mapping) -> ArchGraph:
    doc = _load(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("cores"), list):
        raise ParseError("architecture must be an object with a 'cores' list")
    try:
        cores = [
            CoreSpec(
                id=str(c["id"]),
                core_class=str(c["core_class"]),
                vf_levels=tuple(VFLevel(float(v["voltage"]), float(v["frequency"])) for v in c["vf_levels"]),
                neighbors={str(k): float(g) for k, g in c.get("neighbors", {}).items()},
            )
            for c in doc["cores"]
        ]
        thermal = ThermalParams(**doc["thermal"]) if "thermal" in doc else None
        power = PowerParams(**doc["power"]) if "power" in doc else None
        reliability = ReliabilityParams(**doc["reliability"]) if "reliability" in doc else None
        ranges = Ranges(**doc["ranges"]) if "ranges" in doc else None
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed architecture element: {exc!r}") from exc
    return ArchGraph(cores, thermal, power, reliability, ranges)


TABLE1_LEVELS = (VFLevel(1.06, 300e6), VFLevel(1.1, 600e6), VFLevel(1.2, 900e6))


def default_arch(g_neighbor: float = 0.1) -> ArchGraph:
    """Four heterogeneous cores on a 2x2 mesh, three V/F levels each."""
    mesh = {"P0": ("P1", "P2"), "P1": ("P0", "P3"), "P2": ("P0", "P3"), "P3": ("P1", "P2")}
    cores = [
        CoreSpec(cid, cls, TABLE1_LEVELS, {n: g_neighbor for n in mesh[cid]})
        for cid, cls in zip(sorted(mesh), DEFAULT_CLASSES)
    ]
    return ArchGraph(cores, ThermalParams(G_neighbor=g_neighbor))
