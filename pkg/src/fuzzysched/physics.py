"""Power, temperature and wear-out models for a single core.

Power is the usual dynamic + temperature-linear leakage model. Temperature
follows a first-order RC network in which neighbour temperatures are held
constant over a step, which gives an exact exponential solution. Lifetime
failure rates come from four wear-out mechanisms (EM, SM, TDDB, NBTI)
combined with the sum-of-failure-rates rule.

All temperatures are kelvin, times seconds, powers watts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import DomainError, EmptyScheduleError, InstabilityError

SECONDS_PER_YEAR = 365.25 * 24 * 3600.0
MECHANISMS = ("EM", "SM", "TDDB", "NBTI")


@dataclass(frozen=True)
class VFLevel:
    voltage: float
    frequency: float

    def __post_init__(self):
        if not (self.voltage > 0 and self.frequency > 0):
            raise ValueError(f"voltage and frequency must be positive, got {self}")


@dataclass(frozen=True)
class PowerParams:
    C_eff: float = 1e-8
    alpha: float = 0.1
    beta: float = -11.0

    def __post_init__(self):
        if not self.C_eff > 0:
            raise ValueError("C_eff must be positive")


@dataclass(frozen=True)
class ThermalParams:
    C: float = 0.03
    G: float = 0.3
    T_amb: float = 293.0
    G_neighbor: float = 0.1

    def __post_init__(self):
        if not (self.C > 0 and self.G > 0 and self.T_amb > 0):
            raise ValueError("C, G and T_amb must be positive")


def dynamic_power(vf: VFLevel | None, p: PowerParams) -> float:
    if vf is None:
        return 0.0
    return p.C_eff * vf.voltage * vf.voltage * vf.frequency


def power(vf: VFLevel | None, temp: float, p: PowerParams) -> float:
    """Instantaneous core power; ``vf=None`` is an idle core (leakage only)."""
    return dynamic_power(vf, p) + p.alpha * temp + p.beta


def decay_rate(th: ThermalParams, p: PowerParams, neighbor_g_sum: float = 0.0) -> float:
    a = (th.G - p.alpha + neighbor_g_sum) / th.C
    if not a > 0:
        raise InstabilityError(
            f"thermal decay rate a={a:g} <= 0: alpha={p.alpha} exceeds G + sum(G_nbr)"
        )
    return a


def _neighbor_terms(neighbor_temps, th, conductances):
    g_sum = 0.0
    heat = 0.0
    for key, t in neighbor_temps.items():
        g = th.G_neighbor if conductances is None else conductances[key]
        g_sum += g
        heat += g * t
    return g_sum, heat


def steady_state(
    vf: VFLevel | None,
    neighbor_temps: Mapping[str, float],
    th: ThermalParams,
    p: PowerParams,
    conductances: Mapping[str, float] | None = None,
) -> float:
    """Asymptotic temperature b/a for a fixed operating point and frozen neighbours."""
    g_sum, heat = _neighbor_terms(neighbor_temps, th, conductances)
    a = decay_rate(th, p, g_sum)
    b = (th.G * th.T_amb + heat + dynamic_power(vf, p) + p.beta) / th.C
    return b / a


def temp_after(
    t0: float,
    duration: float,
    vf: VFLevel | None,
    neighbor_temps: Mapping[str, float],
    th: ThermalParams,
    p: PowerParams,
    conductances: Mapping[str, float] | None = None,
) -> float:
    """Core temperature after ``duration`` seconds at ``vf`` starting from ``t0``.

    ``conductances`` maps neighbour keys to G(c, c'); when omitted every
    neighbour uses ``th.G_neighbor``.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    g_sum, heat = _neighbor_terms(neighbor_temps, th, conductances)
    a = decay_rate(th, p, g_sum)
    if duration == 0:
        return t0
    t_inf = (th.G * th.T_amb + heat + dynamic_power(vf, p) + p.beta) / th.C / a
    return t_inf + (t0 - t_inf) * math.exp(-a * duration)


def temp_derivative(
    temp: float,
    vf: VFLevel | None,
    neighbor_temps: Mapping[str, float],
    th: ThermalParams,
    p: PowerParams,
    conductances: Mapping[str, float] | None = None,
) -> float:
    """Right-hand side dT/dt of the per-core heat balance (used by numerical checks)."""
    spread = 0.0
    for key, t in neighbor_temps.items():
        g = th.G_neighbor if conductances is None else conductances[key]
        spread += g * (temp - t)
    return (-th.G * (temp - th.T_amb) - spread + power(vf, temp, p)) / th.C


def exp_segment(t0: float, t_inf: float, a: float, duration: float) -> tuple[float, float]:
    """End temperature and time-integral of T over an exponential segment."""
    decay = math.exp(-a * duration)
    end = t_inf + (t0 - t_inf) * decay
    integral = t_inf * duration + (t0 - t_inf) * (1.0 - decay) / a
    return end, integral


# --- lifetime reliability -------------------------------------------------


@dataclass
class ReliabilityParams:
    # Activation energies are stored already divided by Boltzmann's constant.
    Ea_em_sm: float = 10444.07
    J: float = 150.0
    J_circ: float = 0.0
    n_em: float = 1.1
    n_sm: float = 2.5
    T0_sm: float = 500.0
    Ea_nbti: float = 4651.16
    gamma_nbti: float = 5.0
    tddb: dict = field(
        default_factory=lambda: {"a": 78.0, "b": -0.08, "x": 0.76, "y": -66.8, "z": -8.37e-4}
    )
    k_B: float = 8.61e-5
    scale: dict | None = None
    ref_temp: float = 353.15
    ref_voltage: float = 1.1
    ref_mttf_years: float = 10.0

    def __post_init__(self):
        if not self.J > self.J_circ:
            raise ValueError("J must exceed J_circ")
        if self.scale is None:
            self.scale = calibrate_scales(self)
        missing = set(MECHANISMS) - set(self.scale)
        if missing:
            raise ValueError(f"missing scale factors for {sorted(missing)}")
        if any(not v > 0 for v in self.scale.values()):
            raise ValueError("scale factors must be positive")


def _unscaled_mttf(temp: float, voltage: float, r: ReliabilityParams) -> dict[str, float]:
    if not temp > 0:
        raise DomainError(f"temperature must be positive, got {temp}")
    if temp >= r.T0_sm:
        raise DomainError(f"T={temp:.2f} K is at or above the SM stress-free temperature {r.T0_sm} K")
    arrh = math.exp(r.Ea_em_sm / temp)
    c = r.tddb
    tddb = (1.0 / voltage) ** (c["a"] - c["b"] * temp) * math.exp(
        (c["x"] + c["y"] / temp + c["z"] * temp) / (r.k_B * temp)
    )
    return {
        "EM": (r.J - r.J_circ) ** (-r.n_em) * arrh,
        "SM": (r.T0_sm - temp) ** (-r.n_sm) * arrh,
        "TDDB": tddb,
        "NBTI": voltage ** (-r.gamma_nbti) * math.exp(r.Ea_nbti / temp),
    }


def calibrate_scales(r: ReliabilityParams) -> dict[str, float]:
    """Scale factors giving every mechanism the reference MTTF at the reference point."""
    target = r.ref_mttf_years * SECONDS_PER_YEAR
    base = _unscaled_mttf(r.ref_temp, r.ref_voltage, r)
    return {m: target / base[m] for m in MECHANISMS}


def mechanism_failure_rates(temp: float, vf: VFLevel | float, r: ReliabilityParams) -> dict[str, float]:
    """Failure rate (1/s) of each wear-out mechanism; accepts a VFLevel or a bare voltage."""
    voltage = vf.voltage if isinstance(vf, VFLevel) else float(vf)
    base = _unscaled_mttf(temp, voltage, r)
    return {m: 1.0 / (r.scale[m] * base[m]) for m in MECHANISMS}


def core_failure_rate(temp: float, vf: VFLevel | float, r: ReliabilityParams) -> float:
    return sum(mechanism_failure_rates(temp, vf, r).values())


def sofr(per_core_rates: Iterable[Mapping[str, float]]) -> float:
    """Sum of failure rates over every core and every mechanism."""
    total = 0.0
    for rates in per_core_rates:
        for value in rates.values():
            if value < 0:
                raise ValueError("failure rates must be non-negative")
            total += value
    return total


def mttf(total_rate: float) -> float:
    return math.inf if total_rate == 0 else 1.0 / total_rate


@dataclass
class CoreState:
    """Accumulators of one core over a simulation."""

    temp: float
    busy_until: float = 0.0
    lambda_time_integral: float = 0.0
    exe_time_total: float = 0.0
    energy_total: float = 0.0
    temp_time_integral: float = 0.0


def gsfr(states: Iterable[CoreState]) -> float:
    """Failure rate weighted by executed task time, pooled over cores."""
    num = 0.0
    den = 0.0
    for s in states:
        num += s.lambda_time_integral
        den += s.exe_time_total
    if not den > 0:
        raise EmptyScheduleError("no task has executed; GSFR is undefined")
    return num / den
