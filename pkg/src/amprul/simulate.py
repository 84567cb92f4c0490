"""Synthetic cell cycler with a known capacity-fade law.

Generates cycling logs (canonical CSV channels) for cells whose true capacity
is an exact closed form of discharge throughput::

    capacity(tau) = nominal * max(0, 1 - fade_per_ah * tau)

where tau is cumulative discharge amp-hours. Terminal voltage is a monotone
piecewise-linear open-circuit curve of SOC plus an ohmic drop; everything else
(thermal coupling, calendar aging, hysteresis) is deliberately absent. The
point is an oracle, not physics.

The emitted sample grid is the ground truth: the simulator's internal
throughput/SOC state is the trapezoidal integral of the (noise-free) currents
it emits, so downstream coulomb counting reproduces the internal bookkeeping
up to segment-boundary truncation.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InvalidConfig
from .ingest import CellSeries

# Open-circuit voltage anchors: monotone, loosely Li-ion shaped. Synthetic
# constants, not fit to any cell.
OCV_SOC = np.array([0.0, 0.1, 0.9, 1.0])
OCV_V = np.array([3.0, 3.5, 4.0, 4.2])

INTERNAL_RESISTANCE_OHM = 0.05

SOH_STOP_FRACTION = 0.6  # simulate until 60% SOH so both EOL thresholds are crossed


class Profile(str, Enum):
    CONSTANT_CURRENT = "ConstantCurrent"
    RANDOMIZED_PARTIAL = "RandomizedPartial"


@dataclass
class NoiseStd:
    """Per-channel Gaussian noise standard deviations."""

    voltage_v: float = 0.0
    current_a: float = 0.0
    temperature_c: float = 0.0


@dataclass
class SimConfig:
    nominal_capacity_ah: float = 2.0
    fade_per_ah: float = 4e-4
    profile: Profile = Profile.CONSTANT_CURRENT
    charge_rate_a: float = 1.0
    max_discharge_rate_a: float = 2.0
    soc_bounds: tuple = (0.2, 0.9)
    noise_std: NoiseStd = field(default_factory=NoiseStd)
    ambient_temp_c: float = 25.0
    sample_period_s: float = 10.0
    seed: int = 0
    # Characterization schedule for partial-usage cells: a full reference
    # discharge at reference_rate_a once per reference_period_ah of throughput.
    reference_period_ah: float = 20.0
    reference_rate_a: float = 0.5
    max_duration_s: float = 1e8

    def __post_init__(self):
        try:
            self.profile = Profile(self.profile)
        except ValueError:
            raise InvalidConfig(
                f"profile must be one of {[p.value for p in Profile]}, "
                f"got {self.profile!r}") from None
        if isinstance(self.noise_std, dict):
            self.noise_std = NoiseStd(**self.noise_std)
        self.soc_bounds = (float(self.soc_bounds[0]), float(self.soc_bounds[1]))
        problems = []
        if self.nominal_capacity_ah <= 0:
            problems.append("nominal_capacity_ah must be > 0")
        if self.fade_per_ah < 0:
            problems.append("fade_per_ah must be >= 0")
        if self.sample_period_s <= 0:
            problems.append("sample_period_s must be > 0")
        if self.charge_rate_a <= 0 or self.max_discharge_rate_a <= 0:
            problems.append("rates must be > 0")
        if self.reference_rate_a <= 0 or self.reference_period_ah <= 0:
            problems.append("reference schedule must be > 0")
        if self.max_duration_s <= 0:
            problems.append("max_duration_s must be > 0")
        lo, hi = self.soc_bounds
        if not (0.0 <= lo < hi <= 1.0):
            problems.append(f"soc_bounds must satisfy 0 <= low < high <= 1, got ({lo}, {hi})")
        ns = self.noise_std
        if min(ns.voltage_v, ns.current_a, ns.temperature_c) < 0:
            problems.append("noise_std values must be >= 0")
        if problems:
            raise InvalidConfig("; ".join(problems))


@dataclass
class SimResult:
    series: CellSeries
    # (cumulative_discharge_ah, capacity_ah) rows; capacity is linear in
    # throughput between rows, so interpolation is exact.
    true_capacity_trace: np.ndarray
    soc_min: float = 0.0
    soc_max: float = 1.0


def ocv(soc):
    """Open-circuit voltage at a state of charge (piecewise linear)."""
    return np.interp(soc, OCV_SOC, OCV_V)


def _capacity(nominal: float, fade: float, tau):
    return nominal * np.maximum(0.0, 1.0 - fade * tau)


def _integrate(currents: np.ndarray, i_prev: float, soc0: float, tau0: float,
               nominal: float, fade: float, dt: float):
    """Trapezoid-integrate emitted currents into per-sample (tau, capacity, soc).

    Discharge throughput integrates max(0, -I); SOC integrates the signed
    current against the capacity at each interval's throughput midpoint and is
    clipped into [0, 1].
    """
    nodes = np.concatenate(([i_prev], currents))
    dis = np.maximum(0.0, -nodes)
    step_dis = (dis[:-1] + dis[1:]) * (dt / 7200.0)
    tau = tau0 + np.cumsum(step_dis)
    cap = _capacity(nominal, fade, tau)
    step_signed = (nodes[:-1] + nodes[1:]) * (dt / 7200.0)
    cap_mid = _capacity(nominal, fade, tau - step_dis / 2.0)
    soc = np.clip(soc0 + np.cumsum(step_signed / np.maximum(cap_mid, 1e-12)), 0.0, 1.0)
    return tau, cap, soc


def _plan_phase(rate_a: float, sign: float, soc: float, soc_target: float,
                tau: float, nominal: float, fade: float, dt: float, i_prev: float):
    """Choose the current sequence that moves SOC to soc_target exactly.

    Cruise at rate_a, then close with a solved sub-rate sample followed by a
    zero-current sample, so the trapezoidal integral of the emitted currents
    lands on the target to within the capacity drift over the last two
    intervals (absorbed by the SOC clip/snap).
    """
    c = rate_a * dt / 3600.0  # Ah transferred per full cruise interval
    dsoc = abs(soc_target - soc)
    cap_now = _capacity(nominal, fade, tau)
    if sign < 0 and fade > 0:
        # Ah needed for a discharge swing under linear fade (capacity shrinks
        # as the swing progresses): closed form of d(soc) = -dAh / cap(tau+Ah).
        a_need = (1.0 - fade * tau) * -math.expm1(-nominal * fade * dsoc) / fade
    else:
        a_need = dsoc * cap_now
    if a_need < 1e-12:
        return np.empty(0)

    if a_need <= 1.5 * c:
        # Short swing: two equal sub-rate samples then zero close the whole
        # transfer (total = 2 * i * dt/3600 with a zero predecessor).
        i_land = a_need * 3600.0 / (2.0 * dt)
        return sign * np.array([i_land, i_land, 0.0])

    n = max(1, math.ceil((a_need - 2.0 * c) / c))
    for _ in range(10000):
        cruise = np.full(n, sign * rate_a)
        _, cap_n, soc_n = _integrate(cruise, i_prev, soc, tau, nominal, fade, dt)
        rem = abs(soc_n[-1] - soc_target) * cap_n[-1]
        if rem > 1.5 * c:
            n += 1
        elif rem <= 0.5 * c and n > 1:
            n -= 1
        else:
            break
    i_land = min(rate_a, max(0.0, rem * 3600.0 / dt - rate_a / 2.0))
    return np.concatenate((cruise, sign * np.array([i_land, 0.0])))


def simulate_cell(config: SimConfig, cell_id: str = "sim-000") -> SimResult:
    """Run one cell to 60% SOH (or the duration cap) and return its log + truth."""
    nominal = config.nominal_capacity_ah
    fade = config.fade_per_ah
    dt = config.sample_period_s
    stop_cap = SOH_STOP_FRACTION * nominal
    ss = np.random.SeedSequence(config.seed)
    rng_profile, rng_noise = (np.random.default_rng(c) for c in ss.spawn(2))

    soc, tau, cap = 1.0, 0.0, nominal
    t_last, i_prev = 0.0, 0.0
    soc_lo = soc_hi = soc
    times, currents_out = [np.array([0.0])], [np.array([0.0])]
    volts = [np.array([ocv(soc)])]
    trace = [(0.0, nominal)]

    lo, hi = config.soc_bounds
    next_ref_tau = 0.0  # reference discharge immediately, then every period
    queue: list = []  # pending (rate, sign, target) phases
    discharging_next = True
    running = True

    while running and cap > stop_cap and t_last + dt <= config.max_duration_s:
        if not queue:
            if config.profile is Profile.CONSTANT_CURRENT:
                queue = [(config.max_discharge_rate_a, -1.0, 0.0),
                         (config.charge_rate_a, +1.0, 1.0)]
            elif tau >= next_ref_tau:
                queue = [(config.charge_rate_a, +1.0, 1.0),
                         (config.reference_rate_a, -1.0, 0.0)]
                next_ref_tau = (math.floor(tau / config.reference_period_ah) + 1) \
                    * config.reference_period_ah
                discharging_next = False  # empty after the reference discharge
            elif discharging_next:
                target = rng_profile.uniform(lo, min(soc, hi)) if soc > lo else soc
                # Rate floor at 5% of max: an arbitrarily small draw would pin
                # the cell in one half-cycle for most of its life.
                rate = config.max_discharge_rate_a * rng_profile.uniform(0.05, 1.0)
                queue = [(rate, -1.0, target)]
                discharging_next = False
            else:
                target = rng_profile.uniform(max(soc, lo), hi) if soc < hi else soc
                queue = [(config.charge_rate_a, +1.0, target)]
                discharging_next = True

        rate, sign, target = queue.pop(0)
        plan = _plan_phase(rate, sign, soc, target, tau, nominal, fade, dt, i_prev)
        if plan.size == 0:
            continue
        tau_arr, cap_arr, soc_arr = _integrate(plan, i_prev, soc, tau, nominal, fade, dt)
        t_arr = t_last + dt * np.arange(1, plan.size + 1)

        cut = plan.size
        over_time = t_arr > config.max_duration_s
        if over_time.any():
            cut = int(np.argmax(over_time))
            running = False
        dead = cap_arr[:cut] <= stop_cap
        if dead.any():
            cut = int(np.argmax(dead)) + 1
            running = False
        if cut == 0:
            break

        completed = cut == plan.size
        plan, tau_arr, cap_arr, soc_arr, t_arr = (
            a[:cut] for a in (plan, tau_arr, cap_arr, soc_arr, t_arr))
        times.append(t_arr)
        currents_out.append(plan)
        volts.append(ocv(soc_arr) + INTERNAL_RESISTANCE_OHM * plan)
        soc_lo = min(soc_lo, float(soc_arr.min()))
        soc_hi = max(soc_hi, float(soc_arr.max()))
        tau, cap = float(tau_arr[-1]), float(cap_arr[-1])
        # Ah bookkeeping is authoritative; snap the derived SOC state to the
        # target to keep sub-sample capacity drift from accumulating.
        soc = target if completed else float(soc_arr[-1])
        t_last, i_prev = float(t_arr[-1]), float(plan[-1])
        trace.append((tau, cap))

    t = np.concatenate(times)
    i_true = np.concatenate(currents_out)
    v_true = np.concatenate(volts)
    ns = config.noise_std
    noise = rng_noise.normal(size=(t.size, 3))
    series = CellSeries(
        cell_id=cell_id,
        timestamp_s=t,
        voltage_v=v_true + ns.voltage_v * noise[:, 0],
        current_a=i_true + ns.current_a * noise[:, 1],
        temperature_c=config.ambient_temp_c + ns.temperature_c * noise[:, 2],
        nominal_capacity_ah=nominal,
    )
    return SimResult(series, np.array(trace), soc_min=soc_lo, soc_max=soc_hi)


def derive_cell_config(base: SimConfig, index: int, fleet_seed: int) -> SimConfig:
    """Deterministic per-cell jitter of fade, rates, and ambient temperature."""
    rng = np.random.default_rng(np.random.SeedSequence(fleet_seed, spawn_key=(index,)))
    return replace(
        base,
        fade_per_ah=base.fade_per_ah * rng.uniform(0.9, 1.1),
        charge_rate_a=base.charge_rate_a * rng.uniform(0.8, 1.2),
        max_discharge_rate_a=base.max_discharge_rate_a * rng.uniform(0.8, 1.2),
        ambient_temp_c=base.ambient_temp_c + rng.uniform(-5.0, 5.0),
        noise_std=replace(base.noise_std),
        seed=int(rng.integers(0, 2**63)),
    )


def _fleet_worker(args) -> SimResult:
    config, cell_id = args
    return simulate_cell(config, cell_id=cell_id)


def simulate_fleet(base: SimConfig, n_cells: int, seed: int, jobs: int = 1) -> list:
    """Simulate n_cells with per-cell jitter; parallel and serial runs agree."""
    if n_cells < 1:
        raise InvalidConfig(f"n_cells must be >= 1, got {n_cells}")
    tasks = [(derive_cell_config(base, i, seed), f"sim-{i:03d}") for i in range(n_cells)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fleet_worker, tasks))
    return [_fleet_worker(task) for task in tasks]


# ---- config / truth file formats ---------------------------------------------


def save_sim_config(config: SimConfig, path: Union[str, Path]) -> None:
    doc = asdict(config)
    doc["profile"] = config.profile.value
    doc["soc_bounds"] = list(config.soc_bounds)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_sim_config(source: Union[str, Path, dict]) -> SimConfig:
    doc = dict(source) if isinstance(source, dict) else json.loads(
        Path(source).read_text(encoding="utf-8"))
    try:
        return SimConfig(**doc)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def write_truth_csv(trace: np.ndarray, path: Union[str, Path]) -> None:
    lines = ["cumulative_discharge_ah,capacity_ah"]
    for tau, cap in np.asarray(trace):
        lines.append(f"{float(tau)!r},{float(cap)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_truth_csv(path: Union[str, Path]) -> np.ndarray:
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()[1:]
    return np.array([[float(x) for x in row.split(",")] for row in rows])


def true_capacity_at(trace: np.ndarray, tau) -> np.ndarray:
    """Interpolate the truth trace at given throughput positions (exact: the
    fade law is linear between trace rows)."""
    trace = np.asarray(trace)
    return np.interp(tau, trace[:, 0], trace[:, 1])
