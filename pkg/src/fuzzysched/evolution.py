"""NSGA-II over rule-base consequents and the corpus-level learning loop.

Each chromosome is the consequent vector of a rule base. Its fitness is
the four-objective outcome of scheduling a training graph with it:
(makespan, mean temperature, mean power, GSFR), all minimized.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, EvaluationError, FuzzySchedError
from .fuzzy import RuleBase, build_uniform_rulebase
from .graphs import AppGraph, ArchGraph
from .scheduler import SchedulerConfig, schedule_online

log = logging.getLogger(__name__)

OBJECTIVES = ("makespan_s", "avg_temp_K", "avg_power_W", "gsfr_per_s")


@dataclass
class EvolutionConfig:
    pop_size: int = 200
    iterations: int = 500
    p_crossover: float = 0.40
    p_mutation: float = 0.70
    mutation_sigma: float = 0.1
    gene_mutation_rate: float | None = None  # None: p_mutation / n_genes
    tournament_size: int = 2
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.pop_size < 2 or self.pop_size % 2:
            raise ConfigError("pop_size must be an even number >= 2")
        for name in ("p_crossover", "p_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.tournament_size < 1:
            raise ConfigError("tournament_size must be >= 1")


@dataclass
class Individual:
    genes: np.ndarray
    cost: tuple | None = None
    rank: int = -1
    crowding: float = 0.0


@dataclass
class ParetoFront:
    members: list[Individual]
    history: list[dict] = field(default_factory=list)

    def costs(self) -> np.ndarray:
        return np.array([m.cost for m in self.members], dtype=float)

    def to_csv(self, genes_file: str = "front_genes.json") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*OBJECTIVES, "genes_file"])
        for k, m in enumerate(self.members):
            w.writerow([*(repr(float(v)) for v in m.cost), f"{genes_file}#{k}"])
        return buf.getvalue()


def history_csv(history: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["generation", "front0_size"]
    for o in OBJECTIVES:
        cols += [f"{o}_min", f"{o}_mean"]
    w.writerow(cols)
    for h in history:
        row = [h["generation"], h["front0_size"]]
        for k in range(len(OBJECTIVES)):
            row += [repr(h["min"][k]), repr(h["mean"][k])]
        w.writerow(row)
    return buf.getvalue()


# --- Pareto machinery -----------------------------------------------------


def dominates(a, b) -> bool:
    """Minimization dominance: no worse everywhere and strictly better somewhere."""
    if len(a) != len(b):
        raise ValueError("cost vectors differ in length")
    strictly = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            strictly = True
    return strictly


def _cost_matrix(pop) -> np.ndarray:
    if len(pop) and isinstance(pop[0], Individual):
        return np.array([ind.cost for ind in pop], dtype=float)
    return np.asarray(pop, dtype=float)


def non_dominated_sort(pop) -> list[list[int]]:
    """Indices grouped into fronts; accepts Individuals or raw cost rows."""
    costs = _cost_matrix(pop)
    n = len(costs)
    if n == 0:
        return []
    le = (costs[:, None, :] <= costs[None, :, :]).all(axis=2)
    lt = (costs[:, None, :] < costs[None, :, :]).any(axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(front) -> np.ndarray:
    costs = _cost_matrix(front)
    n = len(costs)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
    else:
        for m in range(costs.shape[1]):
            col = costs[:, m]
            span = col.max() - col.min()
            if span == 0:
                continue
            order = np.argsort(col, kind="stable")
            dist[order[0]] = dist[order[-1]] = np.inf
            gaps = (col[order[2:]] - col[order[:-2]]) / span
            dist[order[1:-1]] += gaps
    if len(front) and isinstance(front[0], Individual):
        for ind, d in zip(front, dist):
            ind.crowding = float(d)
    return dist


def rank_population(pop: list[Individual]) -> list[list[int]]:
    fronts = non_dominated_sort(pop)
    for r, idx in enumerate(fronts):
        for i in idx:
            pop[i].rank = r
        crowding_distance([pop[i] for i in idx])
    return fronts


def truncate(pop: list[Individual], size: int) -> list[Individual]:
    """Elitist survivor selection by (rank, crowding)."""
    fronts = rank_population(pop)
    survivors = []
    for idx in fronts:
        if len(survivors) + len(idx) <= size:
            survivors.extend(pop[i] for i in idx)
            continue
        room = size - len(survivors)
        by_crowd = sorted(idx, key=lambda i: -pop[i].crowding)
        survivors.extend(pop[i] for i in by_crowd[:room])
        break
    return survivors


def middle_point(front, log_objectives: Sequence[int] = ()) -> int:
    """Index of the member closest (sum of squared distances) to all others.

    Costs are min-max normalized per objective over the front first.
    Objectives listed in ``log_objectives`` are compared in decades, which
    keeps a single extreme failure rate from flattening that axis.
    """
    costs = _cost_matrix(front)
    if len(costs) == 0:
        raise ValueError("empty front")
    if len(log_objectives):
        costs = costs.copy()
        cols = list(log_objectives)
        costs[:, cols] = np.log10(np.maximum(costs[:, cols], np.finfo(float).tiny))
    lo, hi = costs.min(axis=0), costs.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    z = (costs - lo) / span
    d = ((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=2).sum(axis=1)
    return int(np.argmin(d))


# --- variation ------------------------------------------------------------


def _better(a: Individual, b: Individual) -> bool:
    return a.rank < b.rank or (a.rank == b.rank and a.crowding > b.crowding)


def tournament(pop: list[Individual], rng: np.random.Generator, size: int) -> Individual:
    picks = rng.integers(len(pop), size=size)
    best = pop[picks[0]]
    for i in picks[1:]:
        if _better(pop[i], best):
            best = pop[i]
    return best


def make_offspring(pop: list[Individual], cfg: EvolutionConfig, rng: np.random.Generator) -> list[np.ndarray]:
    n_genes = len(pop[0].genes)
    rate = cfg.gene_mutation_rate if cfg.gene_mutation_rate is not None else cfg.p_mutation / n_genes
    children = []
    while len(children) < cfg.pop_size:
        a = tournament(pop, rng, cfg.tournament_size).genes.copy()
        b = tournament(pop, rng, cfg.tournament_size).genes.copy()
        if rng.random() < cfg.p_crossover:
            swap = rng.random(n_genes) < 0.5
            a[swap], b[swap] = b[swap], a[swap].copy()
        for child in (a, b):
            if rng.random() < cfg.p_mutation:
                hit = rng.random(n_genes) < rate
                child[hit] = np.clip(child[hit] + rng.normal(0.0, cfg.mutation_sigma, hit.sum()), 0.0, 1.0)
            children.append(child)
    return children[: cfg.pop_size]


# --- engine ---------------------------------------------------------------


def _generation_stats(gen: int, pop: list[Individual]) -> dict:
    costs = np.array([p.cost for p in pop], dtype=float)
    front0 = [p for p in pop if p.rank == 0]
    return {
        "generation": gen,
        "front0_size": len(front0),
        "min": [float(v) for v in costs.min(axis=0)],
        "mean": [float(v) for v in costs.mean(axis=0)],
        "front0_costs": [tuple(float(v) for v in p.cost) for p in front0],
    }


def nsga2(
    evaluate: Callable[[list[np.ndarray]], list[tuple]],
    n_genes: int,
    cfg: EvolutionConfig,
    initial: Sequence[np.ndarray] | None = None,
) -> tuple[list[Individual], list[dict]]:
    """Run NSGA-II; ``evaluate`` maps a batch of gene vectors to cost tuples."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    if initial is None:
        genes = [rng.random(n_genes) for _ in range(cfg.pop_size)]
    else:
        genes = [np.asarray(g, dtype=float).copy() for g in initial]
        if len(genes) != cfg.pop_size:
            raise ConfigError("initial population must have pop_size members")

    cache: dict[bytes, tuple] = {}

    def assess(batch):
        todo = [g for g in batch if g.tobytes() not in cache]
        uniq = {}
        for g in todo:
            uniq.setdefault(g.tobytes(), g)
        if uniq:
            keys = list(uniq)
            for k, c in zip(keys, evaluate([uniq[k] for k in keys])):
                cache[k] = tuple(float(v) for v in c)
        return [Individual(g, cache[g.tobytes()]) for g in batch]

    pop = assess(genes)
    rank_population(pop)
    history = [_generation_stats(0, pop)]
    for gen in range(1, cfg.iterations + 1):
        grng = np.random.default_rng(np.random.SeedSequence([cfg.seed, gen]))
        children = assess(make_offspring(pop, cfg, grng))
        pop = truncate(pop + children, cfg.pop_size)
        live = {p.genes.tobytes() for p in pop}
        cache = {k: v for k, v in cache.items() if k in live}
        history.append(_generation_stats(gen, pop))
        log.debug("generation %d: front0=%d", gen, history[-1]["front0_size"])
    return pop, history


class _ScheduleFitness:
    """Picklable fitness function: genes -> scheduling objectives on one graph."""

    def __init__(self, app: AppGraph, arch: ArchGraph, sched_cfg: SchedulerConfig, sets_per_input: int = 5):
        self.app = app
        self.arch = arch
        self.sched_cfg = sched_cfg
        self.template = build_uniform_rulebase(sets_per_input, 4)

    def __call__(self, genes: np.ndarray) -> tuple:
        rb = self.template.with_consequents(genes)
        try:
            return schedule_online(self.app, self.arch, rb, self.sched_cfg).objectives()
        except FuzzySchedError as exc:
            raise EvaluationError(f"{type(exc).__name__}: {exc}", genes=[float(g) for g in genes]) from exc


_WORKER_FITNESS = None


def _init_worker(fitness):
    global _WORKER_FITNESS
    _WORKER_FITNESS = fitness


def _eval_in_worker(genes):
    return _WORKER_FITNESS(genes)


def evolve(
    train_graph: AppGraph,
    arch: ArchGraph,
    cfg: EvolutionConfig,
    sched_cfg: SchedulerConfig | None = None,
    sets_per_input: int = 5,
) -> ParetoFront:
    """Evolve consequent vectors on one graph; return the final rank-0 front."""
    sched_cfg = sched_cfg or SchedulerConfig()
    fitness = _ScheduleFitness(train_graph, arch, sched_cfg, sets_per_input)
    n_genes = fitness.template.n_rules
    if cfg.jobs > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(cfg.jobs, initializer=_init_worker, initargs=(fitness,)) as pool:
            pop, history = nsga2(lambda batch: pool.map(_eval_in_worker, batch), n_genes, cfg)
    else:
        pop, history = nsga2(lambda batch: [fitness(g) for g in batch], n_genes, cfg)
    front = [p for p in pop if p.rank == 0]
    return ParetoFront(front, history)


# --- learning across a corpus --------------------------------------------


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def graph_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, 1000 + index]).generate_state(1)[0])


def fire_stats(app: AppGraph, arch: ArchGraph, genes, sched_cfg: SchedulerConfig, sets_per_input: int = 5):
    rb = build_uniform_rulebase(sets_per_input, 4).with_consequents(genes)
    res = schedule_online(app, arch, rb, sched_cfg)
    return rb.firing_mean, res


# failure rate spans several decades across a front
LOG_OBJECTIVES = (3,)


def combine_middle_points(mids: Sequence[np.ndarray], actives: Sequence[np.ndarray]) -> np.ndarray:
    """Per-rule mean over the graphs on which a rule fired; never-fired rules get the overall mean."""
    mids = np.asarray(mids, dtype=float)
    actives = np.asarray(actives, dtype=bool)
    hits = actives.sum(axis=0)
    summed = (mids * actives).sum(axis=0)
    out = np.zeros(mids.shape[1])
    seen = hits > 0
    out[seen] = summed[seen] / hits[seen]
    out[~seen] = out[seen].mean() if seen.any() else 0.5
    return out


@dataclass
class LearnResult:
    rulebase: RuleBase
    manifest: dict
    fronts: list[ParetoFront]
    middles: list[int]


def learn(
    corpus: Sequence[AppGraph],
    arch: ArchGraph,
    cfg: EvolutionConfig,
    sched_cfg: SchedulerConfig | None = None,
    checkpoint_dir: str | os.PathLike | None = None,
    active_threshold: float = 0.0,
    sets_per_input: int = 5,
    log_objectives: Sequence[int] = LOG_OBJECTIVES,
) -> LearnResult:
    """Evolve per graph, pick each front's middle point, and average them rule by rule."""
    if not corpus:
        raise ConfigError("training corpus is empty")
    sched_cfg = sched_cfg or SchedulerConfig()
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
    cfg_digest = _digest(
        {"evo": {k: v for k, v in asdict(cfg).items() if k != "jobs"}, "sched": asdict(sched_cfg),
         "arch": arch.to_dict(), "sets": sets_per_input, "threshold": active_threshold,
         "log_objectives": list(log_objectives)}
    )
    mids, actives, fronts, middles, entries = [], [], [], [], []
    for i, app in enumerate(corpus):
        g_digest = _digest(app.to_dict())
        path = ckdir / f"graph_{i:03d}.json" if ckdir is not None else None
        ck = None
        if path is not None and path.exists():
            ck = json.loads(path.read_text())
            if ck.get("config_digest") != cfg_digest or ck.get("graph_digest") != g_digest:
                ck = None
        if ck is None:
            seed = graph_seed(cfg.seed, i)
            front = evolve(app, arch, replace(cfg, seed=seed), sched_cfg, sets_per_input)
            mid = middle_point(front.members, log_objectives)
            genes = front.members[mid].genes
            firing, _ = fire_stats(app, arch, genes, sched_cfg, sets_per_input)
            ck = {
                "index": i,
                "graph_name": app.name,
                "graph_digest": g_digest,
                "config_digest": cfg_digest,
                "seed": seed,
                "middle_index": mid,
                "middle_genes": [float(v) for v in genes],
                "active": [bool(v) for v in firing > active_threshold],
                "front_costs": [list(m.cost) for m in front.members],
                "front_genes": [[float(v) for v in m.genes] for m in front.members],
                "history": [{k: v for k, v in h.items() if k != "front0_costs"} for h in front.history],
            }
            if path is not None:
                path.write_text(json.dumps(ck))
            log.info("graph %d (%s): front of %d, middle #%d", i, app.name, len(front.members), mid)
        members = [Individual(np.array(g), tuple(c), 0) for g, c in zip(ck["front_genes"], ck["front_costs"])]
        fronts.append(ParetoFront(members, ck["history"]))
        middles.append(ck["middle_index"])
        mids.append(np.array(ck["middle_genes"]))
        actives.append(np.array(ck["active"], dtype=bool))
        entries.append({k: ck[k] for k in ("index", "graph_name", "graph_digest", "seed", "middle_index")}
                       | {"front_size": len(members), "active_rules": int(sum(ck["active"]))})
    final = combine_middle_points(mids, actives)
    rb = build_uniform_rulebase(sets_per_input, 4).with_consequents(final)
    manifest = {"config_digest": cfg_digest, "graphs": entries}
    return LearnResult(rb, manifest, fronts, middles)
