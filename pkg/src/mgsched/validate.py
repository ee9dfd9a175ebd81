"""Randomized self-checks for the deterministic guarantees.

Each suite draws systems, states, and observations at random, runs the
scheduler, and counts violations of a guarantee that should never fail:
battery levels stay inside their physical band, backlog queues stay under
their deterministic cap, sliding outage windows stay within budget, optimal
dispatches keep their threshold structure, and the merit-order solver
agrees with a brute-force grid search on small instances. Every suite
reports trial and violation counts plus the first counterexample, so a
failure is directly reproducible.

Scenario generators size the market trade caps to dominate the microgrid
(purchases can cover every quality request and recharge, sales can absorb
the largest surplus plus every discharge). The structural guarantees are
proved under that regime; an undersized grid connection can force optima
with a genuinely different shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dispatch import (
    MODES,
    build_subproblem,
    dispatch_slot,
    merit_order_allocate,
    oracle_coefficient_sum,
    oracle_solve,
    threshold_violations,
)
from .model import (
    BatterySpec,
    GridSpec,
    ResidentSpec,
    SlotObservation,
    SystemSpec,
    SystemState,
    check_dispatch,
    compute_vmax,
)
from .queues import bound_constants, update_qose_queue

# Sliding-window length (slots) for the outage-window suite; must match the
# simulator's audit so the two report the same guarantee.
from .sim import OUTAGE_WINDOW

# Head-room added past the worst case when sizing q_max and s_max.
CAP_MARGIN = 2.0


@dataclass(frozen=True)
class SuiteResult:
    """Outcome of one randomized suite.

    trials counts the checked units (slots, windows, or instances,
    depending on the suite); counterexample reproduces the first failure.
    """

    name: str
    trials: int
    violations: int
    counterexample: str | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class Scenario:
    """A random system plus the surplus process that fits its sizing."""

    system: SystemSpec
    surplus_hi: float
    burst_hi: float
    burst_prob: float


def random_system(rng: np.random.Generator, k_max: int = 3, n_max: int = 6,
                  small_caps: bool = False) -> Scenario:
    """Draw a random well-posed system with dominating trade caps.

    small_caps shrinks per-slot flow boxes so a coarse brute-force grid
    over them stays cheap.
    """
    k = int(rng.integers(1, k_max + 1))
    n = int(rng.integers(1, n_max + 1))
    batteries = []
    for _ in range(k):
        if small_caps:
            r_max = float(rng.uniform(0.25, 0.6))
            d_max = float(rng.uniform(0.25, 0.6))
            band_extra = float(rng.uniform(0.5, 3.0))
        else:
            r_max = float(rng.uniform(0.5, 2.0))
            d_max = float(rng.uniform(0.5, 2.0))
            band_extra = float(rng.uniform(0.5, 8.0))
        e_min = float(rng.uniform(0.0, 1.5))
        e_max = e_min + r_max + d_max + band_extra
        e_init = float(rng.uniform(e_min, e_max))
        batteries.append(BatterySpec(e_min=e_min, e_max=e_max, r_max=r_max,
                                     d_max=d_max, e_init=e_init))
    residents = []
    for _ in range(n):
        alpha_max = (float(rng.uniform(0.3, 0.6)) if small_caps
                     else float(rng.uniform(0.8, 2.6)))
        lo = float(rng.uniform(0.05, 0.4))
        hi = lo + float(rng.uniform(0.1, 1.5))
        residents.append(ResidentSpec(
            delta=float(rng.uniform(0.02, 0.15)),
            alpha_max=alpha_max,
            basic_range=(lo, hi),
            quality_mean=alpha_max / 2.0))
    # Price bands are drawn strictly separated (sell band below purchase
    # band) so every observation has w < c without per-slot fixups.
    w_min = float(rng.uniform(0.01, 0.035))
    w_max = w_min + float(rng.uniform(0.004, 0.02))
    c_min = w_max + float(rng.uniform(0.002, 0.02))
    c_max = c_min + float(rng.uniform(0.01, 0.06))
    sum_alpha = sum(res.alpha_max for res in residents)
    sum_r = sum(b.r_max for b in batteries)
    sum_d = sum(b.d_max for b in batteries)
    if small_caps:
        surplus_hi = float(rng.uniform(0.3, 1.2)) * (sum_alpha + sum_r)
        burst_hi = surplus_hi
        burst_prob = 0.0
    else:
        surplus_hi = float(rng.uniform(0.2, 1.0)) * (sum_alpha + sum_r)
        burst_hi = surplus_hi * float(rng.uniform(1.5, 3.0))
        burst_prob = 0.08
    grid = GridSpec(q_max=sum_alpha + sum_r + CAP_MARGIN,
                    s_max=burst_hi + sum_d + CAP_MARGIN,
                    c_min=c_min, c_max=c_max, w_min=w_min, w_max=w_max)
    system = SystemSpec(batteries=tuple(batteries),
                        residents=tuple(residents), grid=grid)
    return Scenario(system=system, surplus_hi=surplus_hi, burst_hi=burst_hi,
                    burst_prob=burst_prob)


def random_observation(scenario: Scenario,
                       rng: np.random.Generator) -> SlotObservation:
    """Draw one observation consistent with the scenario's processes."""
    system = scenario.system
    basic = tuple(float(rng.uniform(lo, hi))
                  for lo, hi in (res.basic_range for res in system.residents))
    alpha = tuple(float(rng.uniform(0.0, res.alpha_max))
                  for res in system.residents)
    if scenario.burst_prob > 0.0 and rng.random() < scenario.burst_prob:
        surplus = float(rng.uniform(scenario.surplus_hi, scenario.burst_hi))
    else:
        surplus = float(rng.uniform(0.0, scenario.surplus_hi))
    g = system.grid
    c = float(rng.uniform(g.c_min, g.c_max))
    w = float(rng.uniform(g.w_min, min(g.w_max, c)))
    return SlotObservation(u=sum(basic) + surplus, basic=basic, alpha=alpha,
                           c=c, w=w)


def random_state(system: SystemSpec, rng: np.random.Generator, v: float,
                 z_scale: float = 1.25,
                 zero_prob: float = 0.3) -> SystemState:
    """Draw a state with levels anywhere in band and backlogs up to
    z_scale times their cap (zero with probability zero_prob)."""
    consts = bound_constants(system, v)
    e = tuple(float(rng.uniform(b.e_min, b.e_max)) for b in system.batteries)
    z = tuple(0.0 if rng.random() < zero_prob
              else float(rng.uniform(0.0, z_scale * zmax))
              for zmax in consts.z_max)
    return SystemState(t=0, e=e, z=z)


def _counterexample(scenario: Scenario, state: SystemState,
                    obs: SlotObservation, dispatch, detail: str) -> str:
    return (f"detail: {detail}\nsystem: {scenario.system!r}\n"
            f"state: {state!r}\nobs: {obs!r}\ndispatch: {dispatch!r}")


def run_bound_trials(runs: int, slots: int, seed: int,
                     v_factor: float = 1.0, k_max: int = 3,
                     n_max: int = 6) -> list[SuiteResult]:
    """Simulate random systems and audit the deterministic state bounds.

    Returns three SuiteResults: battery levels inside their band, backlog
    queues under their cap, and sliding outage windows within budget. The
    per-slot flow caps are deliberately not headroom-clamped here, so a
    misparametrized control weight (v_factor > 1) produces real, countable
    band violations instead of being silently repaired.
    """
    if runs < 1 or slots < 1:
        raise ValueError("runs and slots must both be >= 1")
    rng = np.random.default_rng((seed, 2))
    band_v = queue_v = window_v = 0
    band_ce = queue_ce = window_ce = None
    windows_checked = 0
    for _ in range(runs):
        scenario = random_system(rng, k_max=k_max, n_max=n_max)
        system = scenario.system
        batteries = system.batteries
        residents = system.residents
        n_res = len(residents)
        v = v_factor * compute_vmax(batteries, system.grid)
        consts = bound_constants(system, v)

        lo = np.array([res.basic_range[0] for res in residents])
        hi = np.array([res.basic_range[1] for res in residents])
        basics = rng.uniform(lo, hi, size=(slots, n_res)).tolist()
        caps = np.array([res.alpha_max for res in residents])
        alphas = rng.uniform(0.0, caps, size=(slots, n_res)).tolist()
        surplus = rng.uniform(0.0, scenario.surplus_hi, size=slots)
        bursts = rng.uniform(scenario.surplus_hi, scenario.burst_hi,
                             size=slots)
        surplus = np.where(rng.random(slots) < scenario.burst_prob,
                           bursts, surplus).tolist()
        g = system.grid
        c_arr = rng.uniform(g.c_min, g.c_max, size=slots)
        w_arr = rng.uniform(g.w_min, np.minimum(g.w_max, c_arr), size=slots)
        c_list = c_arr.tolist()
        w_list = w_arr.tolist()

        state = SystemState(t=0, e=tuple(b.e_init for b in batteries),
                            z=(0.0,) * n_res)
        outage = np.empty((slots, n_res))
        for t in range(slots):
            basic_row = tuple(basics[t])
            obs = SlotObservation(u=sum(basic_row) + surplus[t],
                                  basic=basic_row, alpha=tuple(alphas[t]),
                                  c=c_list[t], w=w_list[t])
            dispatch = dispatch_slot(system, state, obs, v,
                                     headroom_clamp=False)
            e_next = []
            for e, spec, r, d in zip(state.e, batteries, dispatch.r,
                                     dispatch.d):
                e_new = e - d + r
                if e_new < spec.e_min - 1e-9 or e_new > spec.e_max + 1e-9:
                    band_v += 1
                    if band_ce is None:
                        band_ce = _counterexample(
                            scenario, state, obs, dispatch,
                            f"level {e_new} outside "
                            f"[{spec.e_min}, {spec.e_max}]")
                e_next.append(e_new)
            z_next = []
            for n in range(n_res):
                zn = update_qose_queue(state.z[n], obs.alpha[n],
                                       dispatch.p[n], residents[n].delta)
                if zn > consts.z_max[n] + 1e-9:
                    queue_v += 1
                    if queue_ce is None:
                        queue_ce = _counterexample(
                            scenario, state, obs, dispatch,
                            f"backlog {zn} above cap {consts.z_max[n]}")
                z_next.append(zn)
                outage[t, n] = obs.alpha[n] - dispatch.p[n]
            state = SystemState(t=t + 1, e=tuple(e_next), z=tuple(z_next))
        if slots >= OUTAGE_WINDOW:
            cums = np.vstack([np.zeros(n_res), np.cumsum(outage, axis=0)])
            sums = cums[OUTAGE_WINDOW:] - cums[:-OUTAGE_WINDOW]
            for n, res in enumerate(residents):
                budget = (consts.z_max[n]
                          + OUTAGE_WINDOW * res.delta * res.alpha_max)
                bad = int((sums[:, n] > budget).sum())
                window_v += bad
                windows_checked += sums.shape[0]
                if bad and window_ce is None:
                    worst = int(np.argmax(sums[:, n]))
                    window_ce = (
                        f"detail: window starting at slot {worst} sums to "
                        f"{sums[worst, n]} > budget {budget} for resident "
                        f"{n}\nsystem: {system!r}")
    slot_total = runs * slots
    return [
        SuiteResult("battery-band", slot_total, band_v, band_ce),
        SuiteResult("queue-bound", slot_total, queue_v, queue_ce),
        SuiteResult("outage-window", windows_checked, window_v, window_ce),
    ]


def threshold_trials(slots: int, seed: int, k_max: int = 3,
                     n_max: int = 6) -> SuiteResult:
    """Audit feasibility and threshold structure of optimal dispatches.

    Each slot gets an independently drawn state (levels anywhere in band,
    backlogs up to 1.25x their cap) and observation; the scheduler's
    dispatch must satisfy every dispatch invariant and every strict
    threshold condition. Systems are redrawn periodically.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    rng = np.random.default_rng((seed, 3))
    violations = 0
    ce = None
    scenario = None
    v = 0.0
    for t in range(slots):
        if t % 64 == 0:
            scenario = random_system(rng, k_max=k_max, n_max=n_max)
            v_max = compute_vmax(scenario.system.batteries,
                                 scenario.system.grid)
            v = float(rng.uniform(0.3, 1.0)) * v_max
        system = scenario.system
        state = random_state(system, rng, v)
        obs = random_observation(scenario, rng)
        dispatch = dispatch_slot(system, state, obs, v)
        problems = check_dispatch(dispatch, system, obs)
        problems += threshold_violations(system, state, obs, v, dispatch)
        if problems:
            violations += 1
            if ce is None:
                ce = _counterexample(scenario, state, obs, dispatch,
                                     "; ".join(problems))
    return SuiteResult("threshold-structure", slots, violations, ce)


def solver_oracle_trials(instances: int, seed: int,
                         grid_step: float = 0.05) -> SuiteResult:
    """Cross-check the merit-order solver against brute force.

    On small random instances, for each mode: feasibility verdicts must
    agree; when feasible the merit-order objective must not exceed the
    grid optimum and must come within the grid's worst-case gap of it, and
    the merit-order dispatch must pass every dispatch invariant.
    """
    if instances < 1:
        raise ValueError("instances must be >= 1")
    rng = np.random.default_rng((seed, 4))
    violations = 0
    ce = None
    for _ in range(instances):
        scenario = random_system(rng, k_max=2, n_max=2, small_caps=True)
        system = scenario.system
        v_max = compute_vmax(system.batteries, system.grid)
        v = float(rng.uniform(0.3, 1.0)) * v_max
        state = random_state(system, rng, v, z_scale=1.0)
        obs = random_observation(scenario, rng)
        oracle = oracle_solve(system, state, obs, v, grid_step)
        for mode in MODES:
            offers, bids = build_subproblem(mode, system, state, obs, v)
            res = merit_order_allocate(offers, bids, system.n_batteries,
                                       system.n_residents)
            orc = oracle[mode]
            problems = []
            if res.feasible != orc.feasible:
                problems.append(
                    f"{mode}: merit feasible={res.feasible} but "
                    f"oracle feasible={orc.feasible}")
            elif res.feasible:
                gap = grid_step * oracle_coefficient_sum(system, state, obs,
                                                         v, mode)
                if res.objective > orc.objective + 1e-9:
                    problems.append(
                        f"{mode}: merit objective {res.objective} above "
                        f"oracle {orc.objective}")
                if res.objective < orc.objective - gap - 1e-9:
                    problems.append(
                        f"{mode}: merit objective {res.objective} below "
                        f"oracle {orc.objective} minus gap {gap}")
                problems += [f"{mode}: {msg}" for msg
                             in check_dispatch(res.dispatch, system, obs)]
            if problems:
                violations += 1
                if ce is None:
                    ce = _counterexample(scenario, state, obs, res.dispatch,
                                         "; ".join(problems))
    return SuiteResult("solver-oracle", instances, violations, ce)


def run_all_suites(trials: int, seed: int, k_max: int = 3,
                   n_max: int = 6) -> list[SuiteResult]:
    """Run every suite at a size scaled to the requested trial count."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    results = run_bound_trials(runs=max(2, trials // 10),
                               slots=max(OUTAGE_WINDOW, 4 * trials),
                               seed=seed, k_max=k_max, n_max=n_max)
    results.append(threshold_trials(slots=30 * trials, seed=seed,
                                    k_max=k_max, n_max=n_max))
    results.append(solver_oracle_trials(instances=trials, seed=seed))
    return results
