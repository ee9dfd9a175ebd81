"""Microgrid system model: static component specs and per-slot physics.

Conventions used across the package: every traded or stored quantity is an
energy in kWh per time slot, prices are $/kWh, and power traces in kW are
converted at ingestion by multiplying with the slot duration in hours.
Per-slot decisions are recorded as a Dispatch; battery levels and quality
service backlogs live in SystemState.
"""

from __future__ import annotations

from dataclasses import dataclass

# Absolute tolerance for the supply/demand balance residual, scaled by
# max(1, surplus); boxes and battery bands use the same slack in kWh.
BALANCE_TOL = 1e-9
BAND_TOL = 1e-9


class BatteryBandError(RuntimeError):
    """A battery energy level left its [e_min, e_max] band.

    Unreachable when the scheduler runs with 0 < v <= compute_vmax(...);
    raising it means the control parameter or the dispatch logic is broken.
    """


class UnservableSurplusError(RuntimeError):
    """Renewable surplus exceeded every sink (demand, storage, sale cap)."""


class TraceError(ValueError):
    """A trace file failed parsing or violated a declared bound."""


@dataclass(frozen=True, slots=True)
class BatterySpec:
    """Physical limits of one storage unit.

    e_min/e_max bound the stored energy (kWh); r_max and d_max cap the
    energy recharged or discharged within one slot. The band must be wide
    enough to absorb one full recharge plus one full discharge, which is
    what makes a safe control-parameter range exist at all.
    """

    e_min: float
    e_max: float
    r_max: float
    d_max: float
    e_init: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.e_min < self.e_max:
            raise ValueError(
                f"need 0 <= e_min < e_max, got [{self.e_min}, {self.e_max}]")
        if self.r_max <= 0.0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")
        if self.d_max <= 0.0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")
        if self.e_max - self.e_min <= self.r_max + self.d_max:
            raise ValueError(
                "e_max - e_min must exceed r_max + d_max, got band "
                f"{self.e_max - self.e_min} vs caps {self.r_max + self.d_max}")
        if not self.e_min <= self.e_init <= self.e_max:
            raise ValueError(
                f"e_init {self.e_init} outside [{self.e_min}, {self.e_max}]")

    @property
    def slack(self) -> float:
        """Band width left once one recharge and one discharge are reserved."""
        return self.e_max - self.e_min - self.r_max - self.d_max


@dataclass(frozen=True, slots=True)
class ResidentSpec:
    """Demand profile of one resident.

    basic_range bounds the inelastic draw per slot (kWh); alpha_max caps the
    elastic quality-usage request. delta is the tolerated long-run fraction
    of quality demand that may go unserved. quality_mean is the nominal mean
    request, kept for reporting; admission control never uses it directly.
    """

    delta: float
    alpha_max: float
    basic_range: tuple[float, float]
    quality_mean: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.alpha_max <= 0.0:
            raise ValueError(f"alpha_max must be positive, got {self.alpha_max}")
        lo, hi = self.basic_range
        if not 0.0 <= lo <= hi:
            raise ValueError(f"basic_range must satisfy 0 <= lo <= hi, got {self.basic_range}")
        if not 0.0 < self.quality_mean <= self.alpha_max:
            raise ValueError(
                f"quality_mean must lie in (0, alpha_max], got {self.quality_mean}")


@dataclass(frozen=True, slots=True)
class GridSpec:
    """Market interface: per-slot trade caps and price bounds.

    q_max/s_max cap the energy purchased from or sold to the utility in one
    slot. Purchase prices stay within [c_min, c_max] and sell prices within
    [w_min, w_max]; every slot must quote a sell price strictly below its
    purchase price, so buying back resold energy never pays.
    """

    q_max: float
    s_max: float
    c_min: float
    c_max: float
    w_min: float
    w_max: float

    def __post_init__(self) -> None:
        if self.q_max <= 0.0:
            raise ValueError(f"q_max must be positive, got {self.q_max}")
        if self.s_max <= 0.0:
            raise ValueError(f"s_max must be positive, got {self.s_max}")
        if not 0.0 <= self.w_min <= self.w_max:
            raise ValueError(f"need 0 <= w_min <= w_max, got [{self.w_min}, {self.w_max}]")
        if not 0.0 <= self.c_min <= self.c_max:
            raise ValueError(f"need 0 <= c_min <= c_max, got [{self.c_min}, {self.c_max}]")
        if self.c_min < self.w_min:
            raise ValueError("c_min must be at least w_min")
        if self.c_max < self.w_max:
            raise ValueError("c_max must be at least w_max")
        if self.c_max <= self.w_min:
            raise ValueError("c_max must exceed w_min")


@dataclass(frozen=True)
class SystemSpec:
    """Static description of one microgrid: storage fleet, residents, market."""

    batteries: tuple[BatterySpec, ...]
    residents: tuple[ResidentSpec, ...]
    grid: GridSpec

    def __post_init__(self) -> None:
        if not self.batteries:
            raise ValueError("need at least one battery")
        if not self.residents:
            raise ValueError("need at least one resident")

    @property
    def n_batteries(self) -> int:
        return len(self.batteries)

    @property
    def n_residents(self) -> int:
        return len(self.residents)


@dataclass(frozen=True, slots=True)
class SlotObservation:
    """Exogenous inputs revealed at the start of one slot.

    u is the renewable generation (kWh), basic/alpha the per-resident
    inelastic and quality requests, c/w the purchase and sell prices.
    Construction is unchecked for speed; validate_observation performs the
    full bound audit used at trace ingestion.
    """

    u: float
    basic: tuple[float, ...]
    alpha: tuple[float, ...]
    c: float
    w: float


@dataclass(frozen=True, slots=True)
class Dispatch:
    """One slot's decision: market trades, battery flows, quality service.

    q is energy purchased, s energy sold, r/d per-battery recharge and
    discharge, p per-resident quality service. objective is the value of the
    per-slot scheduling objective this decision attained. curtailed records
    renewable surplus discarded at zero value when curtailment is enabled
    and every sink was saturated; it stays 0.0 otherwise.
    """

    q: float
    s: float
    r: tuple[float, ...]
    d: tuple[float, ...]
    p: tuple[float, ...]
    objective: float
    curtailed: float = 0.0


@dataclass(frozen=True, slots=True)
class SystemState:
    """Slot index, battery energies, and per-resident service backlogs."""

    t: int
    e: tuple[float, ...]
    z: tuple[float, ...]


def surplus_power(obs: SlotObservation) -> float:
    """Renewable energy left once guaranteed basic usage is carved out.

    Raises ValueError when basic usage exceeds generation: serving basic
    demand from renewables is a hard guarantee of the model, so such a slot
    is invalid input rather than a scheduling decision.
    """
    total_basic = sum(obs.basic)
    if total_basic > obs.u:
        raise ValueError(
            f"basic usage {total_basic} exceeds generation {obs.u}; "
            "the basic-usage guarantee admits no such slot")
    return obs.u - total_basic


def compute_vmax(batteries: tuple[BatterySpec, ...] | list[BatterySpec],
                 grid: GridSpec) -> float:
    """Largest control parameter keeping every battery inside its band.

    The tightest battery decides: v_max = min_k slack_k / (c_max - w_min).
    Any v in (0, v_max] keeps the energy recurrence inside [e_min, e_max]
    without ever clipping a chosen flow.
    """
    if not batteries:
        raise ValueError("need at least one battery")
    return min(b.slack for b in batteries) / (grid.c_max - grid.w_min)


def apply_dispatch(state: SystemState, dispatch: Dispatch,
                   batteries: tuple[BatterySpec, ...]) -> SystemState:
    """Advance battery energies by one slot: e' = e - d + r per battery.

    Backlogs are copied through untouched; the caller folds in the service
    update separately. Raises BatteryBandError if any new level leaves its
    band by more than BAND_TOL, which a correctly parametrized scheduler
    never triggers.
    """
    e_next = tuple(e - d + r for e, d, r in zip(state.e, dispatch.d, dispatch.r))
    for k, (e_new, spec) in enumerate(zip(e_next, batteries)):
        if e_new < spec.e_min - BAND_TOL or e_new > spec.e_max + BAND_TOL:
            raise BatteryBandError(
                f"battery {k} at {e_new} kWh left [{spec.e_min}, {spec.e_max}] "
                f"(slot {state.t}, d={dispatch.d[k]}, r={dispatch.r[k]})")
    return SystemState(t=state.t + 1, e=e_next, z=state.z)


def validate_observation(obs: SlotObservation, system: SystemSpec) -> list[str]:
    """Audit one observation against the static specs; returns violations."""
    problems: list[str] = []
    n = system.n_residents
    if len(obs.basic) != n:
        problems.append(f"basic has {len(obs.basic)} entries, expected {n}")
    if len(obs.alpha) != n:
        problems.append(f"alpha has {len(obs.alpha)} entries, expected {n}")
    if obs.u < 0.0:
        problems.append(f"generation {obs.u} is negative")
    for i, b in enumerate(obs.basic):
        if b < 0.0:
            problems.append(f"basic[{i}] = {b} is negative")
    if len(obs.alpha) == n:
        for i, (a, spec) in enumerate(zip(obs.alpha, system.residents)):
            if a < 0.0:
                problems.append(f"alpha[{i}] = {a} is negative")
            elif a > spec.alpha_max:
                problems.append(f"alpha[{i}] = {a} exceeds alpha_max {spec.alpha_max}")
    if sum(obs.basic) > obs.u:
        problems.append(
            f"basic total {sum(obs.basic)} exceeds generation {obs.u}")
    g = system.grid
    if not g.c_min <= obs.c <= g.c_max:
        problems.append(f"purchase price {obs.c} outside [{g.c_min}, {g.c_max}]")
    if not g.w_min <= obs.w <= g.w_max:
        problems.append(f"sell price {obs.w} outside [{g.w_min}, {g.w_max}]")
    if obs.w >= obs.c:
        problems.append(f"sell price {obs.w} not strictly below purchase price {obs.c}")
    return problems


def check_dispatch(dispatch: Dispatch, system: SystemSpec,
                   obs: SlotObservation) -> list[str]:
    """Audit one dispatch against boxes, exclusivity, and energy balance.

    Box and balance checks allow BALANCE_TOL-scale float dust; the
    exclusivity products q*s and r_k*d_k must be exactly zero because the
    solver constructs them that way.
    """
    problems: list[str] = []
    g = system.grid
    tol = BALANCE_TOL
    if not -tol <= dispatch.q <= g.q_max + tol:
        problems.append(f"purchase {dispatch.q} outside [0, {g.q_max}]")
    if not -tol <= dispatch.s <= g.s_max + tol:
        problems.append(f"sale {dispatch.s} outside [0, {g.s_max}]")
    if dispatch.q * dispatch.s != 0.0:
        problems.append(f"purchase {dispatch.q} and sale {dispatch.s} both active")
    for k, (r, d, spec) in enumerate(zip(dispatch.r, dispatch.d, system.batteries)):
        if not -tol <= r <= spec.r_max + tol:
            problems.append(f"recharge[{k}] = {r} outside [0, {spec.r_max}]")
        if not -tol <= d <= spec.d_max + tol:
            problems.append(f"discharge[{k}] = {d} outside [0, {spec.d_max}]")
        if r * d != 0.0:
            problems.append(f"battery {k} recharges {r} and discharges {d} in one slot")
    for n, (p, a) in enumerate(zip(dispatch.p, obs.alpha)):
        if not -tol <= p <= a + tol:
            problems.append(f"service[{n}] = {p} outside [0, {a}]")
    if dispatch.curtailed < -tol:
        problems.append(f"curtailed {dispatch.curtailed} is negative")
    surplus = surplus_power(obs)
    residual = (surplus - dispatch.curtailed + dispatch.q + sum(dispatch.d)
                - dispatch.s - sum(dispatch.r) - sum(dispatch.p))
    if abs(residual) > tol * max(1.0, surplus):
        problems.append(f"balance residual {residual} for surplus {surplus}")
    return problems
