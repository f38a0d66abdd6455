"""Fuzzy-neural online scheduling for heterogeneous multicore chips.

The rule-base consequents are tuned with NSGA-II against makespan,
temperature, power and lifetime failure rate.
"""

from .errors import FuzzySchedError
from .evolution import EvolutionConfig, evolve, learn, middle_point, non_dominated_sort
from .fuzzy import RuleBase, build_uniform_rulebase
from .graphs import AppGraph, ArchGraph, default_arch, generate_synthetic, parse_app_graph, parse_arch_graph
from .scheduler import SchedulerConfig, SimResult, baseline_schedulers, schedule_online
from .validate import validate_schedule

__version__ = "0.1.0"

__all__ = [
    "AppGraph",
    "ArchGraph",
    "EvolutionConfig",
    "FuzzySchedError",
    "RuleBase",
    "SchedulerConfig",
    "SimResult",
    "baseline_schedulers",
    "build_uniform_rulebase",
    "default_arch",
    "evolve",
    "generate_synthetic",
    "learn",
    "middle_point",
    "non_dominated_sort",
    "parse_app_graph",
    "parse_arch_graph",
    "schedule_online",
    "validate_schedule",
]
