"""Command-line front end: generate, train, schedule, evaluate.

Every command writes ``manifest.json`` next to its outputs. The manifest
echoes the fully resolved options, so ``--config manifest.json`` replays
the run (later command-line flags still win).
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
import logging
import platform
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import ConfigError, EvaluationError, FuzzySchedError, ParseError, ValidationError
from .evolution import EvolutionConfig, history_csv, learn
from .fuzzy import RuleBase
from .graphs import ArchGraph, default_arch, generate_synthetic, parse_app_graph, parse_arch_graph
from .scheduler import SchedulerConfig, SimResult, make_policy, run_policy, schedule_online
from .validate import validate_schedule

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4
POLICIES = ("fnn", "greedy-eft", "weighted-sum", "random")
TABLE_COLUMNS = ("theta_K", "power_W", "gsfr_per_s", "exec_time_s")

log = logging.getLogger("fuzzysched")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects inputs, outputs and stage timings for the manifest."""

    def __init__(self, ctx: click.Context, out: Path):
        self.command = ctx.info_name
        self.params = {k: v for k, v in ctx.params.items() if k != "config"}
        self.out = out
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def read(self, path) -> str:
        p = Path(path)
        text = p.read_text()
        self.inputs[str(p)] = hashlib.sha256(text.encode()).hexdigest()
        return text

    def write(self, rel: str, text: str):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.outputs[rel] = hashlib.sha256(text.encode()).hexdigest()

    def stage(self, name: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = time.perf_counter() - self.t

        return _Timer()

    def finish(self, extra: dict | None = None):
        self.timings["total"] = time.perf_counter() - self._t0
        manifest = {
            "command": self.command,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config": _jsonable(self.params),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_s": self.timings,
        }
        if extra:
            manifest.update(extra)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _load_config(ctx: click.Context, param, value):
    if not value:
        return value
    try:
        doc = json.loads(Path(value).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{value}: invalid JSON config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{value}: config must be a JSON object")
    if "command" in doc and "config" in doc:  # a manifest from an earlier run
        if doc["command"] != ctx.info_name:
            raise ConfigError(f"{value}: manifest is for '{doc['command']}', not '{ctx.info_name}'")
        doc = doc["config"]
    known = {p.name for p in ctx.command.params}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{value}: unknown keys {unknown}")
    ctx.default_map = {**(ctx.default_map or {}), **doc}
    return value


def common_options(fn):
    @click.option("--config", type=click.Path(dir_okay=False), callback=_load_config, is_eager=True,
                  expose_value=True, help="JSON file (or an earlier manifest) supplying option values.")
    @click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("out"),
                  show_default=True, help="Output directory.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def sched_options(fn):
    opts = [
        click.option("--polarity", type=click.Choice(["min", "max"]), default="min", show_default=True,
                     help="Whether the lowest or highest degree wins."),
        click.option("--t-max", type=float, default=None, help="Insert cooling slack above this temperature (K)."),
        click.option("--max-step", type=float, default=0.01, show_default=True, help="Thermal sub-step (s)."),
        click.option("--lambda-sample", type=click.Choice(["end", "mid"]), default="end", show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _sched_cfg(kw, **extra) -> SchedulerConfig:
    return SchedulerConfig(
        polarity=kw["polarity"], t_max=kw["t_max"], max_step=kw["max_step"],
        lambda_sample=kw["lambda_sample"], **extra,
    )


def _arch(run: Run, path) -> ArchGraph:
    return parse_arch_graph(run.read(path)) if path else default_arch()


def _graph_paths(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.glob("*.json") if q.name != "manifest.json"))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not out:
        raise ConfigError("corpus is empty")
    return out


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def cli(verbose):
    """Fuzzy-neural task scheduling for heterogeneous multicore chips."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# --- generate -----------------------------------------------------------------


@cli.command()
@common_options
@click.option("--n", "n_tasks", type=int, default=None, help="Size of a single graph.")
@click.option("--corpus", "corpus_size", type=int, default=None, help="Number of graphs to generate.")
@click.option("--min", "min_tasks", type=int, default=8, show_default=True)
@click.option("--max", "max_tasks", type=int, default=100, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--ccr", type=float, default=0.1, show_default=True, help="Communication-to-computation ratio.")
@click.option("--rho", type=float, default=2.0, show_default=True, help="Deadline looseness factor.")
@click.option("--arch-out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also write the default four-core architecture to this file.")
@click.pass_context
def generate(ctx, config, out, n_tasks, corpus_size, min_tasks, max_tasks, seed, ccr, rho, arch_out):
    """Write synthetic layered task graphs as JSON."""
    if (n_tasks is None) == (corpus_size is None):
        raise ConfigError("give exactly one of --n or --corpus")
    if n_tasks is not None and n_tasks < 1:
        raise ConfigError(f"--n must be >= 1, got {n_tasks}")
    if corpus_size is not None and (corpus_size < 1 or not 1 <= min_tasks <= max_tasks):
        raise ConfigError("need --corpus >= 1 and 1 <= --min <= --max")
    run = Run(ctx, out)
    jobs = []
    if n_tasks is not None:
        jobs.append((f"graph_n{n_tasks}_s{seed}.json", n_tasks, seed))
    else:
        sizes = np.rint(np.linspace(min_tasks, max_tasks, corpus_size)).astype(int)
        for i, n in enumerate(sizes):
            sub = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
            jobs.append((f"graph_{i:03d}_n{n}.json", int(n), sub))
    with run.stage("generate"):
        for fname, n, s in jobs:
            g = generate_synthetic(n, s, ccr=ccr, rho=rho)
            run.write(fname, g.to_json())
            click.echo(f"{fname}: n={len(g.tasks)} edges={len(g.edges)} cp={g.critical_path():.6g}s")
    if arch_out is not None:
        text = default_arch().to_json()
        arch_out.parent.mkdir(parents=True, exist_ok=True)
        arch_out.write_text(text)
        run.outputs[str(arch_out)] = hashlib.sha256(text.encode()).hexdigest()
    run.finish()


# --- train --------------------------------------------------------------------


@cli.command()
@common_options
@click.option("--corpus", "corpus", multiple=True, required=True, help="Graph files or directories.")
@click.option("--arch", type=click.Path(dir_okay=False), default=None, help="Architecture JSON (default: built-in).")
@click.option("--seed", type=int, required=True)
@click.option("--pop", "pop_size", type=int, default=200, show_default=True)
@click.option("--iterations", type=int, default=500, show_default=True)
@click.option("--p-crossover", type=float, default=0.40, show_default=True)
@click.option("--p-mutation", type=float, default=0.70, show_default=True)
@click.option("--mutation-sigma", type=float, default=0.1, show_default=True)
@click.option("--gene-mutation-rate", type=float, default=None, help="Per-gene rate (default p_mutation / rules).")
@click.option("--tournament", "tournament_size", type=int, default=2, show_default=True)
@click.option("--active-threshold", type=float, default=0.0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel fitness evaluations.")
@sched_options
@click.pass_context
def train(ctx, config, out, corpus, arch, seed, pop_size, iterations, p_crossover, p_mutation, mutation_sigma,
          gene_mutation_rate, tournament_size, active_threshold, jobs, **kw):
    """Learn rule-base consequents over a corpus of graphs."""
    run = Run(ctx, out)
    paths = _graph_paths(corpus)
    graphs = [parse_app_graph(run.read(p)) for p in paths]
    arch_g = _arch(run, arch)
    evo = EvolutionConfig(
        pop_size=pop_size, iterations=iterations, p_crossover=p_crossover, p_mutation=p_mutation,
        mutation_sigma=mutation_sigma, gene_mutation_rate=gene_mutation_rate,
        tournament_size=tournament_size, seed=seed, jobs=jobs,
    )
    sched = _sched_cfg(kw)
    ckdir = out / "checkpoints"
    try:
        with run.stage("learn"):
            res = learn(graphs, arch_g, evo, sched, checkpoint_dir=ckdir, active_threshold=active_threshold)
    except EvaluationError as exc:
        raise EvaluationError(f"{exc} (finished graphs are checkpointed in {ckdir})", exc.genes) from exc
    run.write("rulebase.json", res.rulebase.to_json())
    for i, front in enumerate(res.fronts):
        run.write(f"pareto/graph_{i:03d}.csv", front.to_csv(genes_file=f"graph_{i:03d}_genes.json"))
        run.write(f"pareto/graph_{i:03d}_genes.json", json.dumps([[float(v) for v in m.genes] for m in front.members]))
        run.write(f"stats/graph_{i:03d}.csv", history_csv(front.history))
    with run.stage("fired_rules"):
        rb = res.rulebase.with_consequents(res.rulebase.consequents)
        for g in graphs:
            schedule_online(g, arch_g, rb, sched)
        run.write("fired_rules.csv", rb.fired_rule_report())
    for p in sorted(ckdir.glob("*.json")):
        run.outputs[str(p.relative_to(out))] = sha256_file(p)
    click.echo(f"rulebase: {out / 'rulebase.json'} ({res.rulebase.n_rules} rules)")
    for e in res.manifest["graphs"]:
        click.echo(f"  {e['graph_name']}: front={e['front_size']} middle=#{e['middle_index']} active={e['active_rules']}")
    run.finish({"training": res.manifest})


# --- schedule -------------------------------------------------------------------


def _policy(policy, rulebase_text, seed, weights, polarity):
    if policy == "fnn":
        if rulebase_text is None:
            raise ConfigError("--policy fnn needs --rulebase")
        return make_policy("fnn", rb=RuleBase.from_json(rulebase_text), polarity=polarity)
    if policy == "random" and seed is None:
        raise ConfigError("--policy random needs --seed")
    return make_policy(policy, seed=seed, weights=weights)


@cli.command()
@common_options
@click.option("--app", type=click.Path(dir_okay=False), required=True, help="Application graph JSON.")
@click.option("--arch", type=click.Path(dir_okay=False), default=None)
@click.option("--rulebase", type=click.Path(dir_okay=False), default=None)
@click.option("--policy", type=click.Choice(POLICIES), default="fnn", show_default=True)
@click.option("--seed", type=int, default=None, help="Seed for the random policy.")
@click.option("--weights", type=float, nargs=4, default=None, help="weighted-sum weights: time power temp rate.")
@click.option("--trace", is_flag=True, help="Also write a per-slice thermal/power trace.")
@click.option("--noise-theta", type=float, default=0.0, help="Sensor noise sigma on temperature (K).")
@click.option("--noise-power", type=float, default=0.0, help="Sensor noise sigma on power (W).")
@click.option("--noise-seed", type=int, default=0)
@sched_options
@click.pass_context
def schedule(ctx, config, out, app, arch, rulebase, policy, seed, weights, trace, noise_theta, noise_power,
             noise_seed, **kw):
    """Schedule one graph with the learned rule base or a baseline."""
    run = Run(ctx, out)
    graph = parse_app_graph(run.read(app))
    arch_g = _arch(run, arch)
    rb_text = run.read(rulebase) if rulebase else None
    pol = _policy(policy, rb_text, seed, weights, kw["polarity"])
    sched = _sched_cfg(kw, noise_sigma_theta=noise_theta, noise_sigma_power=noise_power,
                       noise_seed=noise_seed, record_trace=trace)
    with run.stage("schedule"):
        if policy == "fnn":
            res = schedule_online(graph, arch_g, pol.rb, sched)
        else:
            res = run_policy(graph, arch_g, pol, sched)
    problems = validate_schedule(graph, arch_g, res.records)
    if problems:
        raise ValidationError("schedule failed validation: " + "; ".join(problems[:5]))
    run.write("result.json", res.to_json())
    run.write("gantt.csv", res.gantt_csv())
    if policy == "fnn":
        run.write("fired_rules.csv", pol.rb.fired_rule_report())
    if trace:
        run.write("trace.csv", res.trace_csv())
    click.echo(
        f"{policy}: makespan={res.makespan:.6g}s avg_temp={res.avg_temp:.6g}K "
        f"avg_power={res.avg_power:.6g}W gsfr={res.gsfr:.6g}/s misses={res.deadline_misses}"
    )
    run.finish()


# --- evaluate -------------------------------------------------------------------


def evaluation_rows(results) -> list[dict]:
    """``results``: iterable of (graph name, policy, SimResult) -> table rows."""
    return [
        {"graph": g, "policy": p, "theta_K": r.avg_temp, "power_W": r.avg_power,
         "gsfr_per_s": r.gsfr, "exec_time_s": r.makespan}
        for g, p, r in results
    ]


def normalized_rows(rows: list[dict]) -> list[dict]:
    """Each objective divided by its per-graph maximum over policies."""
    peak: dict[str, dict[str, float]] = {}
    for r in rows:
        m = peak.setdefault(r["graph"], {c: 0.0 for c in TABLE_COLUMNS})
        for c in TABLE_COLUMNS:
            m[c] = max(m[c], r[c])
    out = []
    for r in rows:
        m = peak[r["graph"]]
        out.append({"graph": r["graph"], "policy": r["policy"],
                    **{c: (r[c] / m[c] if m[c] > 0 else 0.0) for c in TABLE_COLUMNS}})
    return out


def rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["graph", "policy", *TABLE_COLUMNS])
    for r in rows:
        w.writerow([r["graph"], r["policy"], *(repr(float(r[c])) for c in TABLE_COLUMNS)])
    return buf.getvalue()


@cli.command()
@common_options
@click.option("--corpus", "corpus", multiple=True, required=True, help="Graph files or directories.")
@click.option("--arch", type=click.Path(dir_okay=False), default=None)
@click.option("--rulebase", type=click.Path(dir_okay=False), default=None)
@click.option("--policies", default=",".join(POLICIES), show_default=True, help="Comma-separated policy list.")
@click.option("--seed", type=int, default=None, help="Seed for the random policy.")
@click.option("--weights", type=float, nargs=4, default=None)
@sched_options
@click.pass_context
def evaluate(ctx, config, out, corpus, arch, rulebase, policies, seed, weights, **kw):
    """Compare the learned scheduler against baselines over a corpus."""
    run = Run(ctx, out)
    names = [p.strip() for p in policies.split(",") if p.strip()]
    bad = sorted(set(names) - set(POLICIES))
    if bad or not names:
        raise ConfigError(f"unknown policies {bad}" if bad else "no policies given")
    paths = _graph_paths(corpus)
    graphs = [(p.stem, parse_app_graph(run.read(p))) for p in paths]
    arch_g = _arch(run, arch)
    rb_text = run.read(rulebase) if rulebase else None
    sched = _sched_cfg(kw)
    results = []
    with run.stage("evaluate"):
        for gname, g in graphs:
            for name in names:
                pol = _policy(name, rb_text, seed, weights, kw["polarity"])
                res = schedule_online(g, arch_g, pol.rb, sched) if name == "fnn" else run_policy(g, arch_g, pol, sched)
                run.write(f"results/{gname}__{name}.json", res.to_json())
                results.append((gname, name, res))
    rows = evaluation_rows(results)
    run.write("table.csv", rows_csv(rows))
    run.write("normalized.csv", rows_csv(normalized_rows(rows)))
    for r in rows:
        click.echo(
            f"{r['graph']:>24} {r['policy']:>12}  theta={r['theta_K']:.5g}K P={r['power_W']:.5g}W "
            f"gsfr={r['gsfr_per_s']:.4g}/s E={r['exec_time_s']:.5g}s"
        )
    run.finish()


# --- entry point ------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="fuzzysched", standalone_mode=False)
        return rv if isinstance(rv, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except (ParseError, ValidationError, ConfigError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION
    except FuzzySchedError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
