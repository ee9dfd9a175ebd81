"""Per-slot dispatch: exact merit-order solver, audits, and baselines.

Each slot poses a linear program: box-constrained flows (market purchase,
market sale, battery recharge/discharge, quality service) tied together by
a single supply/demand balance, with renewable surplus as a mandatory
supply that must be absorbed. Because buying and selling in the same slot
never pays, the problem splits into a purchase-only and a sale-only
sub-problem; each is solved exactly by merit order. Supply is ranked by
unit cost, demand by unit value, the surplus is poured into the most
valuable sinks first, and then supply and demand are matched while the
marginal unit is strictly profitable. Strict profitability is what keeps a
battery from trading with itself: its discharge cost equals its own
recharge value, so the pair never matches.

The module also ships a discretized brute-force solver used as an
independent check on small instances, structural audits of the optimum
(threshold form of the solution), and a randomized benchmark policy that
blocks quality requests by coin toss instead of solving anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Dispatch,
    SlotObservation,
    SystemSpec,
    SystemState,
    UnservableSurplusError,
    surplus_power,
)
from .queues import battery_queue

PURCHASE = "purchase"
SELL = "sell"
MODES = (PURCHASE, SELL)

# Offer kinds (supply side) and bid kinds (demand side). The rank tables
# fix deterministic tie-breaks: equal-price entries are ordered surplus,
# discharge, purchase on the supply side and quality, recharge, sale on the
# demand side, then by ascending index.
OFFER_SURPLUS = "surplus"
OFFER_DISCHARGE = "discharge"
OFFER_PURCHASE = "purchase"
BID_QUALITY = "quality"
BID_RECHARGE = "recharge"
BID_SALE = "sale"

_OFFER_RANK = {OFFER_SURPLUS: 0, OFFER_DISCHARGE: 1, OFFER_PURCHASE: 2}
_BID_RANK = {BID_QUALITY: 0, BID_RECHARGE: 1, BID_SALE: 2}

# Grid cells the brute-force solver refuses to enumerate past.
_ORACLE_CELL_CAP = 40_000_000


@dataclass(frozen=True, slots=True)
class Offer:
    """One supply entry: energy available at a unit cost, up to a capacity.

    The mandatory surplus offer carries cost -inf: it is dispatched before
    anything else and contributes nothing to the objective. index is -1 for
    system-level entries (surplus, market purchase).
    """

    kind: str
    index: int
    unit_cost: float
    capacity: float


@dataclass(frozen=True, slots=True)
class Bid:
    """One demand entry: energy wanted at a unit value, up to a capacity."""

    kind: str
    index: int
    unit_value: float
    capacity: float


@dataclass(frozen=True, slots=True)
class SubproblemResult:
    """Outcome of one single-mode sub-problem.

    objective is +inf when infeasible. mandatory_bids lists the (kind,
    index) pairs that absorbed mandatory surplus; such variables may sit
    strictly inside their boxes without contradicting the vertex structure
    of the optimum.
    """

    feasible: bool
    dispatch: Dispatch | None
    objective: float
    mandatory_bids: tuple[tuple[str, int], ...] = ()


def build_subproblem(mode: str, system: SystemSpec, state: SystemState,
                     obs: SlotObservation, v: float,
                     headroom_clamp: bool = True) -> tuple[list[Offer], list[Bid]]:
    """Assemble the offer and bid books for one mode of the slot problem.

    Battery entries are priced by the negated battery queue: a deeply
    discharged battery (very negative queue) bids high to recharge and
    offers its discharge dearly; a full one does the opposite. Quality bids
    are priced by backlog plus current demand, so long-unserved residents
    outbid the market. With headroom_clamp the per-slot flow caps are also
    clamped to the energy actually storable or extractable this slot; a
    correctly parametrized scheduler never needs that clamp, and audits can
    disable it to expose misparametrization instead of masking it.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    g = system.grid
    offers = [Offer(OFFER_SURPLUS, -1, -math.inf, surplus_power(obs))]
    bids: list[Bid] = []
    for n, (alpha, res) in enumerate(zip(obs.alpha, system.residents)):
        bids.append(Bid(BID_QUALITY, n, state.z[n] + alpha, alpha))
    for k, (e, spec) in enumerate(zip(state.e, system.batteries)):
        x = battery_queue(e, spec, v, g)
        d_cap = min(spec.d_max, e - spec.e_min) if headroom_clamp else spec.d_max
        r_cap = min(spec.r_max, spec.e_max - e) if headroom_clamp else spec.r_max
        offers.append(Offer(OFFER_DISCHARGE, k, -x, d_cap))
        bids.append(Bid(BID_RECHARGE, k, -x, r_cap))
    if mode == PURCHASE:
        offers.append(Offer(OFFER_PURCHASE, -1, v * obs.c, g.q_max))
    else:
        bids.append(Bid(BID_SALE, -1, v * obs.w, g.s_max))
    return offers, bids


def merit_order_allocate(offers: list[Offer], bids: list[Bid],
                         n_batteries: int, n_residents: int,
                         allow_shortfall: bool = False) -> SubproblemResult:
    """Solve one sub-problem exactly by merit order.

    Phase one pours the mandatory surplus into bids by descending value,
    regardless of sign; if it does not fit, the sub-problem is infeasible
    unless allow_shortfall turns the leftover into curtailment. Phase two
    matches the cheapest remaining offer to the most valuable remaining bid
    while value strictly exceeds cost. The greedy sweep is exact here: as a
    function of total traded quantity the objective is convex piecewise
    linear, so the first unprofitable match ends the improvement.

    Ties are broken by the kind ranks and ascending index, making the
    allocation a pure function of its inputs.
    """
    q = 0.0
    s = 0.0
    r = [0.0] * n_batteries
    d = [0.0] * n_batteries
    p = [0.0] * n_residents
    objective = 0.0
    curtailed = 0.0
    mandatory: list[tuple[str, int]] = []

    surplus_left = 0.0
    supply: list[Offer] = []
    for o in offers:
        if o.kind == OFFER_SURPLUS:
            surplus_left += o.capacity
        elif o.capacity > 0.0:
            supply.append(o)
    supply.sort(key=lambda o: (o.unit_cost, _OFFER_RANK[o.kind], o.index))
    demand = [b for b in bids if b.capacity > 0.0]
    demand.sort(key=lambda b: (-b.unit_value, _BID_RANK[b.kind], b.index))
    bid_left = [b.capacity for b in demand]

    def fill_bid(b: Bid, amount: float) -> None:
        nonlocal s
        if b.kind == BID_QUALITY:
            p[b.index] += amount
        elif b.kind == BID_RECHARGE:
            r[b.index] += amount
        else:
            s += amount

    for j, b in enumerate(demand):
        if surplus_left <= 0.0:
            break
        take = min(surplus_left, bid_left[j])
        fill_bid(b, take)
        bid_left[j] -= take
        surplus_left -= take
        objective -= b.unit_value * take
        mandatory.append((b.kind, b.index))
    if surplus_left > 0.0:
        if not allow_shortfall:
            return SubproblemResult(feasible=False, dispatch=None,
                                    objective=math.inf)
        curtailed = surplus_left

    i = 0
    j = 0
    offer_left = [o.capacity for o in supply]
    while i < len(supply) and j < len(demand):
        if offer_left[i] <= 0.0:
            i += 1
            continue
        if bid_left[j] <= 0.0:
            j += 1
            continue
        o = supply[i]
        b = demand[j]
        # Strict profitability; equal price never trades, which also rules
        # out a battery matching its own discharge against its recharge.
        if b.unit_value <= o.unit_cost:
            break
        take = min(offer_left[i], bid_left[j])
        if o.kind == OFFER_DISCHARGE:
            d[o.index] += take
        else:
            q += take
        fill_bid(b, take)
        offer_left[i] -= take
        bid_left[j] -= take
        objective += o.unit_cost * take - b.unit_value * take

    # Symmetric zero-out of any battery self-trade. Strict matching makes
    # this a never-fires guard, and the pair prices are equal, so removing
    # both legs cannot change the objective.
    for k in range(n_batteries):
        m = min(r[k], d[k])
        if m > 0.0:
            r[k] -= m
            d[k] -= m

    # A bid filled across both phases can overshoot its capacity by an ulp
    # (take1 + (cap - take1) need not round back to cap); snap every flow
    # to its box so downstream exact checks never see the dust.
    cap_p = {}
    cap_r = {}
    s_cap = 0.0
    for b in bids:
        c = max(b.capacity, 0.0)
        if b.kind == BID_QUALITY:
            cap_p[b.index] = cap_p.get(b.index, 0.0) + c
        elif b.kind == BID_RECHARGE:
            cap_r[b.index] = cap_r.get(b.index, 0.0) + c
        else:
            s_cap += c
    cap_d = {}
    q_cap = 0.0
    for o in offers:
        c = max(o.capacity, 0.0)
        if o.kind == OFFER_DISCHARGE:
            cap_d[o.index] = cap_d.get(o.index, 0.0) + c
        elif o.kind == OFFER_PURCHASE:
            q_cap += c
    for n in range(n_residents):
        p[n] = min(p[n], cap_p.get(n, 0.0))
    for k in range(n_batteries):
        r[k] = min(r[k], cap_r.get(k, 0.0))
        d[k] = min(d[k], cap_d.get(k, 0.0))
    q = min(q, q_cap)
    s = min(s, s_cap)

    dispatch = Dispatch(q=q, s=s, r=tuple(r), d=tuple(d), p=tuple(p),
                        objective=objective, curtailed=curtailed)
    return SubproblemResult(feasible=True, dispatch=dispatch,
                            objective=objective,
                            mandatory_bids=tuple(mandatory))


def dispatch_slot(system: SystemSpec, state: SystemState, obs: SlotObservation,
                  v: float, curtail: bool = False,
                  headroom_clamp: bool = True) -> Dispatch:
    """Solve both modes of the slot problem and return the better dispatch.

    On an exact objective tie a no-trade dispatch (neither buying nor
    selling) wins, then the purchase mode. If neither mode can absorb the
    surplus the slot is unservable; with curtail=True the excess is
    discarded at zero value and recorded on the dispatch instead.
    """
    results: dict[str, SubproblemResult] = {}
    for mode in MODES:
        offers, bids = build_subproblem(mode, system, state, obs, v,
                                        headroom_clamp=headroom_clamp)
        results[mode] = merit_order_allocate(
            offers, bids, system.n_batteries, system.n_residents,
            allow_shortfall=curtail)
    pu = results[PURCHASE]
    se = results[SELL]
    if not pu.feasible and not se.feasible:
        raise UnservableSurplusError(
            f"slot {state.t}: surplus {surplus_power(obs)} kWh exceeds every "
            "sink; enable curtailment or resize the scenario")
    if not se.feasible:
        return pu.dispatch
    if not pu.feasible:
        return se.dispatch
    if pu.objective < se.objective:
        return pu.dispatch
    if se.objective < pu.objective:
        return se.dispatch
    pu_no_trade = pu.dispatch.q == 0.0 and pu.dispatch.s == 0.0
    se_no_trade = se.dispatch.q == 0.0 and se.dispatch.s == 0.0
    if se_no_trade and not pu_no_trade:
        return se.dispatch
    return pu.dispatch


def slot_objective(system: SystemSpec, state: SystemState, obs: SlotObservation,
                   v: float, dispatch: Dispatch) -> float:
    """Evaluate the per-slot scheduling objective for any dispatch.

    Trades are weighted by v, battery flows by their queue levels, quality
    service by backlog plus demand. Lower is better; the merit-order
    optimum minimizes exactly this.
    """
    val = v * (dispatch.q * obs.c - dispatch.s * obs.w)
    for k, (e, spec) in enumerate(zip(state.e, system.batteries)):
        x = battery_queue(e, spec, v, system.grid)
        val += x * (dispatch.r[k] - dispatch.d[k])
    for n, alpha in enumerate(obs.alpha):
        val -= (state.z[n] + alpha) * dispatch.p[n]
    return val


def threshold_violations(system: SystemSpec, state: SystemState,
                         obs: SlotObservation, v: float,
                         dispatch: Dispatch) -> list[str]:
    """Audit the threshold structure an optimal dispatch must show.

    All conditions are strict, so boundary ties are exempt. The
    unconditional checks: a battery whose queue sits above -v*w_min never
    recharges (selling would beat storing even at the floor price), one
    below -v*c_max never discharges (buying would beat draining even at the
    cap); a resident whose backlog exceeds v*c_max is served at least the
    guaranteed fraction, and one whose backlog sits below v*w_min -
    alpha_max gets nothing. Only those four claims hold unconditionally:
    between the price bounds, battery-to-battery transfers and backlog
    service justify flows in both directions. When the slot actually
    trades, the full two-sided structure holds at the realized price. The
    checks presume trade caps generous enough that the market side is never
    saturated; a grid sized below its own microgrid can force structurally
    different optima.
    """
    g = system.grid
    msgs: list[str] = []
    x = [battery_queue(e, spec, v, g)
         for e, spec in zip(state.e, system.batteries)]

    def battery_checks(price: float, label: str) -> None:
        for k in range(system.n_batteries):
            if x[k] > -v * price and dispatch.r[k] > 1e-12:
                msgs.append(
                    f"battery {k}: queue {x[k]} above {-v * price} ({label}) "
                    f"yet recharges {dispatch.r[k]}")
            if x[k] < -v * price and dispatch.d[k] > 1e-12:
                msgs.append(
                    f"battery {k}: queue {x[k]} below {-v * price} ({label}) "
                    f"yet discharges {dispatch.d[k]}")

    def resident_checks(price: float, label: str) -> None:
        for n, res in enumerate(system.residents):
            z = state.z[n]
            alpha = obs.alpha[n]
            floor = (1.0 - res.delta) * alpha
            if z > v * price - alpha and dispatch.p[n] < floor - 1e-9:
                msgs.append(
                    f"resident {n}: backlog {z} above {v * price - alpha} "
                    f"({label}) yet served {dispatch.p[n]} < {floor}")
            if z < v * price - alpha and dispatch.p[n] > 1e-12:
                msgs.append(
                    f"resident {n}: backlog {z} below {v * price - alpha} "
                    f"({label}) yet served {dispatch.p[n]}")

    for k in range(system.n_batteries):
        if x[k] > -v * g.w_min and dispatch.r[k] > 1e-12:
            msgs.append(
                f"battery {k}: queue {x[k]} above {-v * g.w_min} "
                f"(price-floor bound) yet recharges {dispatch.r[k]}")
        if x[k] < -v * g.c_max and dispatch.d[k] > 1e-12:
            msgs.append(
                f"battery {k}: queue {x[k]} below {-v * g.c_max} "
                f"(price-cap bound) yet discharges {dispatch.d[k]}")
    for n, res in enumerate(system.residents):
        z = state.z[n]
        alpha = obs.alpha[n]
        floor = (1.0 - res.delta) * alpha
        if z > v * g.c_max and dispatch.p[n] < floor - 1e-9:
            msgs.append(
                f"resident {n}: backlog {z} above {v * g.c_max} "
                f"(price-cap bound) yet served {dispatch.p[n]} < {floor}")
        if z < v * g.w_min - res.alpha_max and dispatch.p[n] > 1e-12:
            msgs.append(
                f"resident {n}: backlog {z} below {v * g.w_min - res.alpha_max} "
                f"(price-floor bound) yet served {dispatch.p[n]}")
    if dispatch.q > 0.0:
        battery_checks(obs.c, "at purchase price")
        resident_checks(obs.c, "at purchase price")
    if dispatch.s > 0.0:
        battery_checks(obs.w, "at sell price")
        resident_checks(obs.w, "at sell price")
    return msgs


def _grid_axis(lo: float, hi: float, step: float,
               anchors: tuple[float, ...] = ()) -> np.ndarray:
    """Grid of spacing step over [lo, hi], always containing lo, hi, anchors."""
    if hi < lo:
        raise ValueError(f"empty axis [{lo}, {hi}]")
    pts = np.arange(lo, hi, step)
    extras = [a for a in anchors if lo <= a <= hi]
    return np.unique(np.concatenate([pts, [lo, hi], extras]))


def oracle_solve(system: SystemSpec, state: SystemState, obs: SlotObservation,
                 v: float, grid_step: float) -> dict[str, SubproblemResult]:
    """Discretized brute-force solve of both modes, for cross-checking.

    Battery flows are enumerated as one net-flow axis per battery (negative
    means discharge), quality service on one axis per resident; the traded
    quantity is then the unique value closing the balance, so every
    candidate satisfies the balance exactly and the returned objective can
    never undercut the true optimum. Box endpoints and the zero flow are
    always grid points, which keeps the optimality gap within grid_step
    times the sum of absolute objective coefficients. Exponential in the
    number of axes, hence the dimension cap.
    """
    if system.n_batteries > 2 or system.n_residents > 2:
        raise ValueError("oracle handles at most 2 batteries and 2 residents")
    if grid_step <= 0.0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    g = system.grid
    p_surplus = surplus_power(obs)
    x = [battery_queue(e, spec, v, g)
         for e, spec in zip(state.e, system.batteries)]
    axes = []
    for e, spec in zip(state.e, system.batteries):
        d_cap = min(spec.d_max, e - spec.e_min)
        r_cap = min(spec.r_max, spec.e_max - e)
        axes.append(_grid_axis(-d_cap, r_cap, grid_step, anchors=(0.0,)))
    for alpha in obs.alpha:
        axes.append(_grid_axis(0.0, alpha, grid_step))
    cells = 1
    for a in axes:
        cells *= len(a)
    if cells > _ORACLE_CELL_CAP:
        raise ValueError(f"oracle grid of {cells} cells exceeds the cap")
    mesh = np.meshgrid(*axes, indexing="ij")
    flows = [m.ravel() for m in mesh]
    k_n = system.n_batteries
    net_batt = sum(flows[:k_n])
    served = sum(flows[k_n:])
    sinks = net_batt + served

    base = np.zeros_like(flows[0])
    for k in range(k_n):
        base = base + x[k] * flows[k]
    for n, alpha in enumerate(obs.alpha):
        base = base - (state.z[n] + alpha) * flows[k_n + n]

    def assemble(idx: int, q: float, s: float, objective: float) -> Dispatch:
        b = [float(flows[k][idx]) for k in range(k_n)]
        return Dispatch(
            q=q, s=s,
            r=tuple(bk if bk > 0.0 else 0.0 for bk in b),
            d=tuple(-bk if bk < 0.0 else 0.0 for bk in b),
            p=tuple(float(flows[k_n + n][idx])
                    for n in range(system.n_residents)),
            objective=objective)

    results: dict[str, SubproblemResult] = {}

    q = sinks - p_surplus
    ok = (q >= -1e-12) & (q <= g.q_max + 1e-12)
    if np.any(ok):
        q_cl = np.clip(q, 0.0, g.q_max)
        obj = base + v * obs.c * q_cl
        obj = np.where(ok, obj, np.inf)
        idx = int(np.argmin(obj))
        best = float(obj[idx])
        results[PURCHASE] = SubproblemResult(
            feasible=True,
            dispatch=assemble(idx, float(q_cl[idx]), 0.0, best),
            objective=best)
    else:
        results[PURCHASE] = SubproblemResult(feasible=False, dispatch=None,
                                             objective=math.inf)

    s = p_surplus - sinks
    ok = (s >= -1e-12) & (s <= g.s_max + 1e-12)
    if np.any(ok):
        s_cl = np.clip(s, 0.0, g.s_max)
        obj = base - v * obs.w * s_cl
        obj = np.where(ok, obj, np.inf)
        idx = int(np.argmin(obj))
        best = float(obj[idx])
        results[SELL] = SubproblemResult(
            feasible=True,
            dispatch=assemble(idx, 0.0, float(s_cl[idx]), best),
            objective=best)
    else:
        results[SELL] = SubproblemResult(feasible=False, dispatch=None,
                                         objective=math.inf)
    return results


def oracle_coefficient_sum(system: SystemSpec, state: SystemState,
                           obs: SlotObservation, v: float, mode: str) -> float:
    """Sum of absolute objective coefficients, sizing the oracle's gap."""
    g = system.grid
    total = v * (obs.c if mode == PURCHASE else obs.w)
    for e, spec in zip(state.e, system.batteries):
        total += 2.0 * abs(battery_queue(e, spec, v, g))
    for n, alpha in enumerate(obs.alpha):
        total += abs(state.z[n] + alpha)
    return total


def mecp_dispatch(system: SystemSpec, state: SystemState, obs: SlotObservation,
                  rng: np.random.Generator, block_prob: float,
                  charge_prob: float, v: float,
                  curtail: bool = False) -> Dispatch:
    """Randomized benchmark policy: block quality requests by coin toss.

    Each resident's quality request is dropped with probability block_prob.
    Surplus first serves the admitted requests; leftovers charge batteries
    in index order, then sell, and only then (with curtail) get discarded.
    Deficits discharge batteries in index order, then buy; if the purchase
    cap still leaves a gap, admitted residents are served in index order
    with what exists. Independently, a charge coin with probability
    charge_prob buys extra energy into batteries that did not discharge
    this slot. The dispatch's objective field is evaluated at v so runs
    stay comparable with the scheduler.
    """
    n_res = system.n_residents
    blocked = rng.random(n_res) < block_prob
    charge_coin = rng.random() < charge_prob
    p_surplus = surplus_power(obs)
    admitted = [0.0 if blocked[n] else obs.alpha[n] for n in range(n_res)]
    demand = sum(admitted)
    r = [0.0] * system.n_batteries
    d = [0.0] * system.n_batteries
    p = [0.0] * n_res
    q = 0.0
    s = 0.0
    curtailed = 0.0
    if p_surplus >= demand:
        p = list(admitted)
        excess = p_surplus - demand
        for k, (e, spec) in enumerate(zip(state.e, system.batteries)):
            if excess <= 0.0:
                break
            take = min(spec.r_max, spec.e_max - e, excess)
            if take > 0.0:
                r[k] = take
                excess -= take
        s = min(excess, system.grid.s_max)
        excess -= s
        if excess > 0.0:
            if not curtail:
                raise UnservableSurplusError(
                    f"slot {state.t}: benchmark policy cannot absorb "
                    f"{excess} kWh of surplus")
            curtailed = excess
    else:
        supply = p_surplus
        shortfall = demand - p_surplus
        for k, (e, spec) in enumerate(zip(state.e, system.batteries)):
            if shortfall <= 0.0:
                break
            take = min(spec.d_max, e - spec.e_min, shortfall)
            if take > 0.0:
                d[k] = take
                supply += take
                shortfall -= take
        if shortfall > 0.0:
            q = min(shortfall, system.grid.q_max)
            supply += q
            shortfall -= q
        if shortfall > 0.0:
            # Not enough energy for every admitted request: serve in index
            # order until supply runs out.
            left = supply
            for n in range(n_res):
                take = min(admitted[n], left)
                p[n] = take
                left -= take
        else:
            p = list(admitted)
    if charge_coin:
        budget = system.grid.q_max - q
        for k, (e, spec) in enumerate(zip(state.e, system.batteries)):
            if budget <= 0.0:
                break
            if d[k] > 0.0:
                continue
            room = min(spec.r_max - r[k], spec.e_max - e - r[k], budget)
            if room > 0.0:
                r[k] += room
                q += room
                budget -= room
    dispatch = Dispatch(q=q, s=s, r=tuple(r), d=tuple(d), p=tuple(p),
                        objective=0.0, curtailed=curtailed)
    objective = slot_objective(system, state, obs, v, dispatch)
    return Dispatch(q=q, s=s, r=tuple(r), d=tuple(d), p=tuple(p),
                    objective=objective, curtailed=curtailed)
