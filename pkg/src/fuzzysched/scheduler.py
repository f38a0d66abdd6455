"""Online list scheduler driven by a fuzzy rule base, plus simple baselines.

Decisions happen on a monotone clock. At each decision instant the most
urgent ready task (smallest deadline - WCET slack) is placed on the
(core, V/F) candidate preferred by the policy; once no task is ready the
clock jumps to the next task completion. A lockstep thermal simulation of
all cores runs underneath, splitting time at task boundaries and at
``max_step`` with neighbour temperatures frozen over each slice.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import physics
from .errors import ConfigError, UncoolableError
from .fuzzy import RuleBase
from .graphs import AppGraph, ArchGraph, Task

EPS = 1e-12


@dataclass
class SchedulerConfig:
    polarity: str = "min"  # "min": lowest degree wins; "max" flips
    max_step: float = 0.01
    t_max: float | None = None
    lambda_sample: str = "end"  # "end" | "mid"
    noise_sigma_theta: float = 0.0
    noise_sigma_power: float = 0.0
    noise_seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if self.polarity not in ("min", "max"):
            raise ConfigError(f"polarity must be 'min' or 'max', got {self.polarity!r}")
        if self.lambda_sample not in ("end", "mid"):
            raise ConfigError(f"lambda_sample must be 'end' or 'mid', got {self.lambda_sample!r}")
        if not self.max_step > 0:
            raise ConfigError("max_step must be positive")


@dataclass
class Candidate:
    core: int
    vf_index: int
    start: float
    finish: float
    exec_time: float
    temp_end: float
    power: float
    utilization: float
    gsfr: float
    rate: float
    predicted: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    degree: float = math.nan

    @property
    def core_id(self):
        return self.core


@dataclass
class ScheduleRecord:
    task_id: str
    core_id: str
    vf_index: int
    start: float
    finish: float
    sample_temp: float = math.nan
    rate: float = math.nan

    @property
    def duration(self):
        return self.finish - self.start


@dataclass
class SimResult:
    records: list[ScheduleRecord]
    makespan: float
    energy: float
    avg_power: float
    avg_temp: float
    peak_temp: float
    gsfr: float
    per_core_utilization: dict[str, float]
    deadline_misses: int
    core_states: dict[str, physics.CoreState]
    policy: str = "fnn"
    fired_rule_mean: list[float] | None = None
    trace: list[tuple] | None = field(default=None, repr=False)

    def objectives(self) -> tuple[float, float, float, float]:
        """(execution time, temperature, power, failure rate), all minimized."""
        return (self.makespan, self.avg_temp, self.avg_power, self.gsfr)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "makespan": self.makespan,
            "energy": self.energy,
            "avg_power": self.avg_power,
            "avg_temp": self.avg_temp,
            "peak_temp": self.peak_temp,
            "gsfr": self.gsfr,
            "per_core_utilization": self.per_core_utilization,
            "deadline_misses": self.deadline_misses,
            "core_states": {k: asdict(v) for k, v in self.core_states.items()},
            "records": [asdict(r) for r in self.records],
            "fired_rule_mean": self.fired_rule_mean,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc) -> "SimResult":
        return cls(
            records=[ScheduleRecord(**r) for r in doc["records"]],
            makespan=doc["makespan"],
            energy=doc["energy"],
            avg_power=doc["avg_power"],
            avg_temp=doc["avg_temp"],
            peak_temp=doc["peak_temp"],
            gsfr=doc["gsfr"],
            per_core_utilization=doc["per_core_utilization"],
            deadline_misses=doc["deadline_misses"],
            core_states={k: physics.CoreState(**v) for k, v in doc["core_states"].items()},
            policy=doc.get("policy", "fnn"),
            fired_rule_mean=doc.get("fired_rule_mean"),
        )

    def gantt_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "core", "vf", "start", "finish"])
        for r in self.records:
            w.writerow([r.task_id, r.core_id, r.vf_index, repr(r.start), repr(r.finish)])
        return buf.getvalue()

    def trace_csv(self) -> str:
        """One row per simulated slice end: power is the slice's mean power."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "core", "event", "temp", "power", "duration"])
        for row in self.trace or ():
            w.writerow([repr(row[0]), row[1], row[2], repr(row[3]), repr(row[4]), repr(row[5])])
        return buf.getvalue()


# --- ordering -------------------------------------------------------------


def urgency_key(task: Task):
    return (task.effective_deadline - task.max_wcet, -task.max_wcet, task.id)


def urgency_order(tasks: Sequence[Task]) -> list[Task]:
    """Ascending slack D - WCET; without deadlines this is descending WCET; ties by id."""
    return sorted(tasks, key=urgency_key)


# --- cooling --------------------------------------------------------------


def cooling_delay(t_now: float, exec_time: float, a: float, idle_inf: float, busy_inf: float, t_max: float) -> float:
    """Idle time after which running for ``exec_time`` ends at or below ``t_max``.

    The core relaxes toward ``idle_inf`` while idle, then toward
    ``busy_inf`` while running; both with decay rate ``a``.
    """
    if idle_inf >= t_max:
        raise UncoolableError(f"idle steady state {idle_inf:.2f} K is not below t_max={t_max:.2f} K")
    decay = math.exp(-a * exec_time)
    end_now = busy_inf + (t_now - busy_inf) * decay
    if end_now <= t_max:
        return 0.0
    # start temperature that lands exactly on t_max at the end of the task
    required = busy_inf + (t_max - busy_inf) / decay
    if required <= idle_inf:
        raise UncoolableError(
            f"even from the idle steady state the task ends above t_max={t_max:.2f} K"
        )
    return math.log((t_now - idle_inf) / (required - idle_inf)) / a


# --- policies -------------------------------------------------------------


class Policy:
    name = "policy"
    wants_features = True

    def choose(self, cands: list[Candidate], features: np.ndarray, sim: "Simulation") -> int:
        raise NotImplementedError


class FNNPolicy(Policy):
    name = "fnn"

    def __init__(self, rb: RuleBase, polarity: str = "min"):
        self.rb = rb
        self.polarity = polarity

    def choose(self, cands, features, sim):
        deg = self.rb.infer_batch(features)
        for c, d in zip(cands, deg):
            c.degree = float(d)
        return int(np.argmin(deg) if self.polarity == "min" else np.argmax(deg))


class GreedyEFT(Policy):
    name = "greedy-eft"
    wants_features = False

    def choose(self, cands, features, sim):
        best = 0
        for i, c in enumerate(cands):
            if c.finish < cands[best].finish - EPS:
                best = i
        return best


class WeightedSum(Policy):
    """Minimizes w . (finish / max finish, p, theta, lambda) over normalized predictions."""

    name = "weighted-sum"

    def __init__(self, weights=(0.25, 0.25, 0.25, 0.25)):
        if len(weights) != 4:
            raise ConfigError("weighted-sum needs four weights")
        self.weights = tuple(float(w) for w in weights)

    def choose(self, cands, features, sim):
        fmax = max(c.finish for c in cands)
        wt, wp, wth, wl = self.weights
        best, best_score = 0, math.inf
        for i, (c, x) in enumerate(zip(cands, features)):
            score = wt * c.finish / fmax + wp * x[1] + wth * x[2] + wl * x[3]
            if score < best_score - EPS:
                best, best_score = i, score
        return best


class RandomPolicy(Policy):
    name = "random"
    wants_features = False

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def choose(self, cands, features, sim):
        return int(self.rng.integers(len(cands)))


# --- simulation -----------------------------------------------------------


class _Pending:
    __slots__ = ("rec", "core", "dyn", "voltage", "pred_rate", "mid_temp", "exec_time")

    def __init__(self, rec, core, dyn, voltage, pred_rate, exec_time):
        self.rec = rec
        self.core = core
        self.dyn = dyn
        self.voltage = voltage
        self.pred_rate = pred_rate
        self.mid_temp = math.nan
        self.exec_time = exec_time


class Simulation:
    """Mutable state of one scheduling run."""

    def __init__(self, app: AppGraph, arch: ArchGraph, cfg: SchedulerConfig | None = None):
        self.app = app
        self.arch = arch
        self.cfg = cfg or SchedulerConfig()
        th, pw = arch.thermal, arch.power
        self.n = len(arch.cores)
        self.nbr = []
        self.a = []
        for core in arch.cores:
            links = [(arch.index[k], g) for k, g in sorted(core.neighbors.items())]
            self.nbr.append(links)
            self.a.append(physics.decay_rate(th, pw, sum(g for _, g in links)))
        self.inv_C = 1.0 / th.C
        self.b_base = (th.G * th.T_amb + pw.beta) / th.C
        self.alpha = pw.alpha
        self.beta = pw.beta
        self.dyn = [[physics.dynamic_power(v, pw) for v in c.vf_levels] for c in arch.cores]

        # execution time per (task, core, vf); None marks an incompatible core
        self.exec_time: dict[str, list[list[float] | None]] = {}
        for t in app.tasks:
            row = []
            for c in arch.cores:
                if not t.runs_on(c.core_class):
                    row.append(None)
                    continue
                base = t.nominal_time(c.core_class) * c.nominal_frequency
                row.append([base / v.frequency for v in c.vf_levels])
            if all(r is None for r in row):
                raise ConfigError(f"task {t.id!r} is compatible with no core")
            self.exec_time[t.id] = row

        self.now = 0.0
        self.temp = [th.T_amb] * self.n
        self.states = [physics.CoreState(temp=th.T_amb) for _ in range(self.n)]
        self.busy_until = [0.0] * self.n
        self.span = 0.0  # latest committed finish over all cores
        self.committed_busy = [0.0] * self.n
        self.pred_lam = [0.0] * self.n
        self.pred_exe = [0.0] * self.n
        self.pending: list[list[_Pending]] = [[] for _ in range(self.n)]
        self.finished: set[str] = set()
        self.placed: dict[str, ScheduleRecord] = {}
        self.core_of: dict[str, int] = {}
        self.records: list[ScheduleRecord] = []
        self.peak = th.T_amb
        self.trace = [] if self.cfg.record_trace else None
        self.noise_rng = np.random.default_rng(self.cfg.noise_seed)
        rng = arch.ranges
        self._lo = [rng.u_min, rng.p_min, rng.theta_min, rng.lambda_min]
        self._hi = [rng.u_max, rng.p_max, rng.theta_max, rng.lambda_max]
        if rng.lambda_log:
            self._lo[3] = math.log10(rng.lambda_min)
            self._hi[3] = math.log10(rng.lambda_max)
        self._lam_log = rng.lambda_log

    # --- physics helpers -------------------------------------------------

    def t_inf(self, core: int, dyn: float, temps=None) -> float:
        temps = self.temp if temps is None else temps
        heat = 0.0
        for j, g in self.nbr[core]:
            heat += g * temps[j]
        return (self.b_base + (heat + dyn) * self.inv_C) / self.a[core]

    def rate(self, temp: float, voltage: float) -> float:
        return physics.core_failure_rate(temp, voltage, self.arch.reliability)

    def normalize(self, u, p, theta, lam) -> tuple[float, float, float, float]:
        if self._lam_log:
            lam = math.log10(lam) if lam > 0 else -math.inf
        out = []
        for v, lo, hi in zip((u, p, theta, lam), self._lo, self._hi):
            x = (v - lo) / (hi - lo)
            out.append(0.0 if x < 0.0 else (1.0 if x > 1.0 else x))
        return tuple(out)

    # --- prediction ------------------------------------------------------

    def data_ready(self, tid: str, core: int) -> float:
        ready = 0.0
        for p, comm in self.app.preds[tid].items():
            rec = self.placed[p]
            t = rec.finish + (0.0 if self.core_of[p] == core else comm)
            if t > ready:
                ready = t
        return ready

    def core_outlook(self, core: int) -> tuple[float, float]:
        """(time, temperature) when the core drains its committed queue, neighbours frozen."""
        t, temp = self.now, self.temp[core]
        a = self.a[core]
        idle_inf = self.t_inf(core, 0.0)
        for pend in self.pending[core]:
            rec = pend.rec
            s = max(rec.start, t)
            if s > t:
                temp = idle_inf + (temp - idle_inf) * math.exp(-a * (s - t))
                t = s
            if rec.finish > t:
                busy_inf = self.t_inf(core, pend.dyn)
                temp = busy_inf + (temp - busy_inf) * math.exp(-a * (rec.finish - t))
                t = rec.finish
        return t, temp

    def predict(self, tid: str, core: int, vf: int, outlook=None, extra_delay: float = 0.0) -> Candidate:
        e = self.exec_time[tid][core][vf]
        t_free, temp = outlook or self.core_outlook(core)
        start = max(t_free, self.data_ready(tid, core)) + extra_delay
        a = self.a[core]
        if start > t_free:
            idle_inf = self.t_inf(core, 0.0)
            temp = idle_inf + (temp - idle_inf) * math.exp(-a * (start - t_free))
        dyn = self.dyn[core][vf]
        busy_inf = self.t_inf(core, dyn)
        temp_end = busy_inf + (temp - busy_inf) * math.exp(-a * e)
        voltage = self.arch.cores[core].vf_levels[vf].voltage
        if self.cfg.lambda_sample == "mid":
            sample = busy_inf + (temp - busy_inf) * math.exp(-a * 0.5 * e)
        else:
            sample = temp_end
        lam = self.rate(sample, voltage)
        finish = start + e
        return Candidate(
            core=core,
            vf_index=vf,
            start=start,
            finish=finish,
            exec_time=e,
            temp_end=temp_end,
            power=dyn + self.alpha * temp_end + self.beta,
            utilization=(self.committed_busy[core] + e) / max(finish, self.span),
            gsfr=(self.pred_lam[core] + lam * e) / (self.pred_exe[core] + e),
            rate=lam,
        )

    def candidates(self, tid: str) -> list[Candidate]:
        out = []
        for core in range(self.n):
            row = self.exec_time[tid][core]
            if row is None:
                continue
            outlook = self.core_outlook(core)
            for vf in range(len(row)):
                out.append(self.predict(tid, core, vf, outlook))
        return out

    def features(self, cands: list[Candidate]) -> np.ndarray:
        sig_t, sig_p = self.cfg.noise_sigma_theta, self.cfg.noise_sigma_power
        rows = []
        for c in cands:
            theta, p = c.temp_end, c.power
            if sig_t > 0:
                theta += self.noise_rng.normal(0.0, sig_t)
            if sig_p > 0:
                p += self.noise_rng.normal(0.0, sig_p)
            c.predicted = self.normalize(c.utilization, p, theta, c.gsfr)
            rows.append(c.predicted)
        return np.array(rows)

    def cooling(self, tid: str, cand: Candidate) -> float:
        """Idle slack before ``cand`` so that it ends below ``cfg.t_max``."""
        core = cand.core
        t_free, temp = self.core_outlook(core)
        start = max(t_free, self.data_ready(tid, core))
        a = self.a[core]
        idle_inf = self.t_inf(core, 0.0)
        if start > t_free:
            temp = idle_inf + (temp - idle_inf) * math.exp(-a * (start - t_free))
        busy_inf = self.t_inf(core, self.dyn[core][cand.vf_index])
        return cooling_delay(temp, cand.exec_time, a, idle_inf, busy_inf, self.cfg.t_max)

    # --- commit & advance -------------------------------------------------

    def commit(self, tid: str, cand: Candidate) -> ScheduleRecord:
        core = cand.core
        rec = ScheduleRecord(tid, self.arch.cores[core].id, cand.vf_index, cand.start, cand.finish)
        voltage = self.arch.cores[core].vf_levels[cand.vf_index].voltage
        pend = _Pending(rec, core, self.dyn[core][cand.vf_index], voltage, cand.rate, cand.exec_time)
        self.pending[core].append(pend)
        self.placed[tid] = rec
        self.core_of[tid] = core
        self.records.append(rec)
        self.busy_until[core] = cand.finish
        self.states[core].busy_until = cand.finish
        self.committed_busy[core] += cand.exec_time
        self.span = max(self.span, cand.finish)
        self.pred_lam[core] += cand.rate * cand.exec_time
        self.pred_exe[core] += cand.exec_time
        return rec

    def _next_boundary(self, target: float) -> float:
        nb = min(target, self.now + self.cfg.max_step)
        mid = self.cfg.lambda_sample == "mid"
        for q in self.pending:
            for pend in q:
                rec = pend.rec
                for t in (rec.start, 0.5 * (rec.start + rec.finish) if mid else None, rec.finish):
                    if t is not None and t > self.now + EPS and t < nb:
                        nb = t
                if rec.start > self.now + EPS:
                    break
        return nb

    def advance(self, target: float):
        """Simulate every core from ``now`` to ``target``."""
        while self.now < target:
            t0 = self.now
            t1 = self._next_boundary(target)
            dt = t1 - t0
            frozen = list(self.temp)
            new = list(frozen)
            for c in range(self.n):
                running = None
                for pend in self.pending[c]:
                    if pend.rec.start <= t0 + EPS and pend.rec.finish > t0 + EPS:
                        running = pend
                        break
                dyn = running.dyn if running else 0.0
                t_inf = self.t_inf(c, dyn, frozen)
                end, integral = physics.exp_segment(frozen[c], t_inf, self.a[c], dt)
                st = self.states[c]
                e_slice = dyn * dt + self.alpha * integral + self.beta * dt
                st.energy_total += e_slice
                st.temp_time_integral += integral
                new[c] = end
                if end > self.peak:
                    self.peak = end
                if self.trace is not None and dt > 0:
                    self.trace.append((t1, self.arch.cores[c].id, running.rec.task_id if running else "idle", end, e_slice / dt, dt))
            self.temp = new
            self.now = t1
            for c in range(self.n):
                self.states[c].temp = new[c]
                q = self.pending[c]
                while q:
                    pend = q[0]
                    rec = pend.rec
                    if self.cfg.lambda_sample == "mid" and math.isnan(pend.mid_temp) and abs(0.5 * (rec.start + rec.finish) - t1) <= EPS:
                        pend.mid_temp = new[c]
                    if rec.finish <= t1 + EPS:
                        sample = new[c] if self.cfg.lambda_sample == "end" else pend.mid_temp
                        lam = self.rate(sample, pend.voltage)
                        rec.sample_temp = sample
                        rec.rate = lam
                        st = self.states[c]
                        st.lambda_time_integral += lam * pend.exec_time
                        st.exe_time_total += pend.exec_time
                        self.pred_lam[c] += (lam - pend.pred_rate) * pend.exec_time
                        self.finished.add(rec.task_id)
                        q.pop(0)
                        if self.trace is not None:
                            self.trace.append((t1, self.arch.cores[c].id, f"finish:{rec.task_id}", new[c], 0.0, 0.0))
                    else:
                        break

    def next_finish(self) -> float:
        return min(p.rec.finish for q in self.pending for p in q)

    def ready(self) -> list[Task]:
        out = []
        for tid in self.app.order:
            if tid in self.placed:
                continue
            if all(p in self.finished for p in self.app.preds[tid]):
                out.append(self.app.by_id[tid])
        return out

    def result(self, policy_name: str) -> SimResult:
        makespan = max(r.finish for r in self.records)
        self.advance(makespan)
        energy = sum(s.energy_total for s in self.states)
        avg_temp = sum(s.temp_time_integral for s in self.states) / (self.n * makespan)
        misses = sum(
            1 for r in self.records if r.finish > self.app.by_id[r.task_id].effective_deadline + EPS
        )
        return SimResult(
            records=self.records,
            makespan=makespan,
            energy=energy,
            avg_power=energy / makespan,
            avg_temp=avg_temp,
            peak_temp=self.peak,
            gsfr=physics.gsfr(self.states),
            per_core_utilization={c.id: s.exe_time_total / makespan for c, s in zip(self.arch.cores, self.states)},
            deadline_misses=misses,
            core_states={c.id: s for c, s in zip(self.arch.cores, self.states)},
            policy=policy_name,
            trace=self.trace,
        )


def run_policy(app: AppGraph, arch: ArchGraph, policy: Policy, cfg: SchedulerConfig | None = None) -> SimResult:
    cfg = cfg or SchedulerConfig()
    sim = Simulation(app, arch, cfg)
    remaining = len(app.tasks)
    while remaining:
        ready = sim.ready()
        if not ready:
            sim.advance(sim.next_finish())
            continue
        task = min(ready, key=urgency_key)
        cands = sim.candidates(task.id)
        feats = sim.features(cands) if policy.wants_features or cfg.noise_sigma_theta or cfg.noise_sigma_power else None
        choice = cands[policy.choose(cands, feats, sim)]
        if cfg.t_max is not None and all(c.temp_end > cfg.t_max for c in cands):
            coolest = min(cands, key=lambda c: (c.temp_end, c.core, c.vf_index))
            delay = sim.cooling(task.id, coolest)
            choice = sim.predict(task.id, coolest.core, coolest.vf_index, extra_delay=delay)
        sim.commit(task.id, choice)
        remaining -= 1
    return sim.result(policy.name)


def schedule_online(app: AppGraph, arch: ArchGraph, rb: RuleBase, cfg: SchedulerConfig | None = None) -> SimResult:
    cfg = cfg or SchedulerConfig()
    # collect this run's firing stats in a private buffer, then merge
    sum0, count0 = rb.firing_sum, rb.firing_count
    rb.reset_stats()
    try:
        res = run_policy(app, arch, FNNPolicy(rb, cfg.polarity), cfg)
        res.fired_rule_mean = (rb.firing_sum / rb.firing_count).tolist()
    finally:
        run_sum, run_count = rb.firing_sum, rb.firing_count
        rb.firing_sum, rb.firing_count = sum0 + run_sum, count0 + run_count
    return res


def make_policy(name: str, seed: int | None = None, weights=None, rb: RuleBase | None = None, polarity="min") -> Policy:
    if name == "fnn":
        if rb is None:
            raise ConfigError("fnn policy needs a rule base")
        return FNNPolicy(rb, polarity)
    if name == "greedy-eft":
        return GreedyEFT()
    if name == "weighted-sum":
        return WeightedSum(weights or (0.25, 0.25, 0.25, 0.25))
    if name == "random":
        if seed is None:
            raise ConfigError("random policy needs a seed")
        return RandomPolicy(seed)
    raise ConfigError(f"unknown policy {name!r}")


def baseline_schedulers(app, arch, policy: str, seed: int | None = None, weights=None, cfg=None) -> SimResult:
    return run_policy(app, arch, make_policy(policy, seed=seed, weights=weights), cfg)
