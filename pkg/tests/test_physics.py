import math

import numpy as np
import pytest

from fuzzysched import physics
from fuzzysched.errors import DomainError, EmptyScheduleError, InstabilityError
from fuzzysched.physics import (
    CoreState,
    PowerParams,
    ReliabilityParams,
    ThermalParams,
    VFLevel,
    core_failure_rate,
    gsfr,
    mechanism_failure_rates,
    power,
    sofr,
    temp_after,
)

TH = ThermalParams()
PW = PowerParams()
REL = ReliabilityParams()
LEVELS = [VFLevel(1.06, 300e6), VFLevel(1.1, 600e6), VFLevel(1.2, 900e6)]


def rhs(T, V, f, nbrs, g_nbr=0.1, C=0.03, G=0.3, T_amb=293.0, C_eff=1e-8, alpha=0.1, beta=-11.0):
    """Per-core heat balance written out directly from the RC model."""
    spread = sum(g_nbr * (T - tn) for tn in nbrs)
    return (-G * (T - T_amb) - spread + C_eff * V * V * f + alpha * T + beta) / C


def rk4(T, V, f, nbrs, duration, h):
    steps = max(1, round(duration / h))
    h = duration / steps
    for _ in range(steps):
        k1 = rhs(T, V, f, nbrs)
        k2 = rhs(T + 0.5 * h * k1, V, f, nbrs)
        k3 = rhs(T + 0.5 * h * k2, V, f, nbrs)
        k4 = rhs(T + h * k3, V, f, nbrs)
        T += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return T


def test_power_examples():
    assert power(VFLevel(1.1, 600e6), 300.0, PW) == pytest.approx(26.26, abs=1e-12)
    assert power(VFLevel(1.06, 300e6), 293.0, PW) == pytest.approx(21.6708, abs=1e-12)
    bare = PowerParams(C_eff=1e-8, alpha=0.0, beta=0.0)
    assert power(VFLevel(1.0, 1e-30), 300.0, bare) == pytest.approx(0.0, abs=1e-30)


def test_power_strictly_increasing():
    base = power(VFLevel(1.1, 600e6), 320.0, PW)
    assert power(VFLevel(1.2, 600e6), 320.0, PW) > base
    assert power(VFLevel(1.1, 900e6), 320.0, PW) > base
    assert power(VFLevel(1.1, 600e6), 321.0, PW) > base


def test_temp_after_fixed_point_and_asymptote():
    vf = LEVELS[1]
    t_inf = physics.steady_state(vf, {}, TH, PW)
    assert temp_after(t_inf, 0.37, vf, {}, TH, PW) == pytest.approx(t_inf, abs=1e-9)
    assert temp_after(300.0, 1e6, vf, {}, TH, PW) == pytest.approx(t_inf, abs=1e-9)
    assert temp_after(312.5, 0.0, vf, {}, TH, PW) == 312.5


def test_temp_after_matches_rk4_single_step():
    closed = temp_after(300.0, 0.01, LEVELS[1], {}, TH, PW)
    numeric = rk4(300.0, 1.1, 600e6, [], 0.01, 1e-5)
    assert abs(closed - numeric) < 1e-6


def test_temp_after_matches_rk4_with_neighbours():
    nb = {"x": 350.0, "y": 330.0}
    closed = temp_after(310.0, 0.2, LEVELS[2], nb, TH, PW)
    numeric = rk4(310.0, 1.2, 900e6, [350.0, 330.0], 0.2, 1e-5)
    assert abs(closed - numeric) < 1e-6


def test_explicit_conductances_override_default():
    nb = {"x": 350.0}
    assert temp_after(300.0, 0.1, None, nb, TH, PW, {"x": 0.1}) == temp_after(300.0, 0.1, None, nb, TH, PW)
    assert temp_after(300.0, 0.1, None, nb, TH, PW, {"x": 0.0}) == temp_after(300.0, 0.1, None, {}, TH, PW)


def test_semigroup():
    rng = np.random.default_rng(3)
    for _ in range(200):
        t0 = rng.uniform(293, 450)
        d1, d2 = rng.uniform(0, 0.5, 2)
        vf = LEVELS[rng.integers(3)]
        nb = {"a": rng.uniform(293, 450)}
        one = temp_after(t0, d1 + d2, vf, nb, TH, PW)
        two = temp_after(temp_after(t0, d1, vf, nb, TH, PW), d2, vf, nb, TH, PW)
        assert abs(one - two) < 1e-9


def test_instability_error():
    with pytest.raises(InstabilityError):
        temp_after(300.0, 0.1, LEVELS[0], {}, TH, PowerParams(alpha=0.5))


def test_exp_segment_integral_matches_quadrature():
    a, t0, tinf, d = 6.0, 300.0, 400.0, 0.3
    end, integral = physics.exp_segment(t0, tinf, a, d)
    ts = np.linspace(0, d, 20001)
    vals = tinf + (t0 - tinf) * np.exp(-a * ts)
    assert integral == pytest.approx(np.trapezoid(vals, ts), rel=1e-8)
    assert end == pytest.approx(vals[-1])


# --- reliability ----------------------------------------------------------


def test_mechanism_rates_increase_with_temperature():
    for vf in LEVELS:
        lo = mechanism_failure_rates(310.0, vf, REL)
        hi = mechanism_failure_rates(360.0, vf, REL)
        for m in physics.MECHANISMS:
            assert hi[m] > lo[m], m


def test_monotone_on_grid():
    grid = np.linspace(293.0, 400.0, 108)
    for vf in LEVELS:
        p = [power(vf, t, PW) for t in grid]
        assert all(b >= a for a, b in zip(p, p[1:]))
        rates = [mechanism_failure_rates(t, vf, REL) for t in grid]
        for m in physics.MECHANISMS:
            seq = [r[m] for r in rates]
            assert all(b >= a for a, b in zip(seq, seq[1:])), m


def test_scale_linearity():
    doubled = dict(REL.scale, EM=2 * REL.scale["EM"])
    r2 = ReliabilityParams(scale=doubled)
    a = mechanism_failure_rates(340.0, 1.1, REL)["EM"]
    b = mechanism_failure_rates(340.0, 1.1, r2)["EM"]
    assert b == pytest.approx(a / 2, rel=1e-15)


def test_nbti_voltage_ratio():
    hi = mechanism_failure_rates(330.0, 1.2, REL)["NBTI"]
    lo = mechanism_failure_rates(330.0, 1.06, REL)["NBTI"]
    # (1.2 / 1.06) ** 5, evaluated by hand: 1.8594
    assert hi / lo == pytest.approx(1.8594, abs=5e-4)
    assert hi / lo == pytest.approx((1.2 / 1.06) ** 5, rel=1e-12)


def test_calibration_reference_point():
    rates = mechanism_failure_rates(REL.ref_temp, REL.ref_voltage, REL)
    for m, r in rates.items():
        assert 1.0 / r == pytest.approx(10 * physics.SECONDS_PER_YEAR, rel=1e-12), m


def test_tddb_form():
    c = REL.tddb
    T, V = 340.0, 1.06
    raw = (1 / V) ** (c["a"] - c["b"] * T) * math.exp((c["x"] + c["y"] / T + c["z"] * T) / (REL.k_B * T))
    assert mechanism_failure_rates(T, V, REL)["TDDB"] == pytest.approx(1 / (REL.scale["TDDB"] * raw), rel=1e-12)


def test_sm_domain_error():
    with pytest.raises(DomainError):
        mechanism_failure_rates(REL.T0_sm, 1.1, REL)


def test_sofr_examples():
    assert sofr([{"EM": 3e-9}]) == 3e-9
    assert sofr([{m: 1e-9 for m in physics.MECHANISMS}] * 2) == pytest.approx(8e-9)
    rates = mechanism_failure_rates(320.0, 1.1, REL)
    assert sofr([rates]) == pytest.approx(sum(rates[m] for m in physics.MECHANISMS), rel=1e-15)
    assert core_failure_rate(320.0, 1.1, REL) == pytest.approx(sofr([rates]), rel=1e-15)
    assert physics.mttf(0.0) == math.inf


def test_gsfr_examples():
    assert gsfr([CoreState(300.0, lambda_time_integral=2e-6 * 10, exe_time_total=10)]) == pytest.approx(2e-6)
    two = [CoreState(300.0, lambda_time_integral=1e-6 * 1 + 3e-6 * 3, exe_time_total=4.0)]
    assert gsfr(two) == pytest.approx(2.5e-6)
    doubled = two + [CoreState(300.0, lambda_time_integral=1e-5, exe_time_total=4.0)]
    assert gsfr(doubled) == pytest.approx(gsfr(two))


def test_gsfr_empty():
    with pytest.raises(EmptyScheduleError):
        gsfr([CoreState(300.0)])
