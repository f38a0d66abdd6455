"""Schedule checker that only looks at the committed records.

Kept deliberately separate from the simulator so it can serve as an
independent judge of its output.
"""

from __future__ import annotations

from .graphs import AppGraph, ArchGraph


def validate_schedule(app: AppGraph, arch: ArchGraph, records, tol: float = 1e-9) -> list[str]:
    """Return human-readable violations; an empty list means the schedule is valid."""
    problems = []
    by_task = {}
    for r in records:
        if r.task_id in by_task:
            problems.append(f"task {r.task_id} scheduled twice")
        by_task[r.task_id] = r
    for t in app.tasks:
        if t.id not in by_task:
            problems.append(f"task {t.id} never scheduled")
    for tid in by_task:
        if tid not in app.by_id:
            problems.append(f"unknown task {tid}")
    if problems:
        return problems

    for r in records:
        if r.core_id not in arch.by_id:
            problems.append(f"task {r.task_id}: unknown core {r.core_id}")
            continue
        core = arch.by_id[r.core_id]
        task = app.by_id[r.task_id]
        if not task.runs_on(core.core_class):
            problems.append(f"task {r.task_id} placed on incompatible core {r.core_id}")
            continue
        if not 0 <= r.vf_index < len(core.vf_levels):
            problems.append(f"task {r.task_id}: bad V/F index {r.vf_index}")
            continue
        expected = task.nominal_time(core.core_class) * core.nominal_frequency / core.vf_levels[r.vf_index].frequency
        if not r.finish > r.start:
            problems.append(f"task {r.task_id}: finish {r.finish} not after start {r.start}")
        if abs((r.finish - r.start) - expected) > tol * max(1.0, expected):
            problems.append(f"task {r.task_id}: duration {r.finish - r.start} != execution time {expected}")
        if r.start < -tol:
            problems.append(f"task {r.task_id}: negative start")

    per_core = {}
    for r in records:
        per_core.setdefault(r.core_id, []).append(r)
    for cid, rs in per_core.items():
        rs = sorted(rs, key=lambda r: r.start)
        for prev, nxt in zip(rs, rs[1:]):
            if nxt.start < prev.finish - tol:
                problems.append(f"core {cid}: {prev.task_id} and {nxt.task_id} overlap")

    for e in app.edges:
        src, dst = by_task[e.src], by_task[e.dst]
        comm = 0.0 if src.core_id == dst.core_id else e.comm
        if dst.start < src.finish + comm - tol:
            problems.append(
                f"edge {e.src}->{e.dst}: start {dst.start} before ready time {src.finish + comm}"
            )
    return problems
