"""Virtual queues that couple per-slot decisions to long-run guarantees.

Two queue families drive the scheduler. Each battery gets a shifted copy of
its energy level so that keeping the queue stable keeps the physical level
inside its band. Each resident gets a service-debt queue that grows with
unserved quality demand and drains with an allowance proportional to the
demand itself; bounding it bounds the long-run unserved fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import BatterySpec, GridSpec, SystemSpec, SystemState


@dataclass(frozen=True, slots=True)
class QueueView:
    """Snapshot of both queue families for one slot at control parameter v."""

    x: tuple[float, ...]
    z: tuple[float, ...]
    v: float


@dataclass(frozen=True, slots=True)
class BoundConstants:
    """Constants that size the deterministic performance guarantees.

    b bounds the one-slot quadratic drift of the queue state. z_max[n] caps
    resident n's service-debt queue under the scheduler. b_star = b plus the
    worst-case cross term sum(z_max[n] * (1 - delta[n]) * alpha_max[n]),
    and b_star / v bounds the cost gap to the best stationary policy.
    """

    b: float
    z_max: tuple[float, ...]
    b_star: float


def battery_queue(e: float, spec: BatterySpec, v: float, grid: GridSpec) -> float:
    """Shifted battery level: x = e - d_max - e_min - v * c_max.

    Recomputed from the physical level every slot, never stored, so the
    queue can not drift away from the energy it mirrors. Negative x marks a
    battery that still has mandatory-looking room to charge; x near zero
    marks one close to the level where discharging becomes attractive.
    """
    return e - spec.d_max - spec.e_min - v * grid.c_max


def queue_view(system: SystemSpec, state: SystemState, v: float) -> QueueView:
    """Assemble both queue families from the current state."""
    x = tuple(battery_queue(e, spec, v, system.grid)
              for e, spec in zip(state.e, system.batteries))
    return QueueView(x=x, z=state.z, v=v)


def update_qose_queue(z: float, alpha: float, p: float, delta: float) -> float:
    """Advance one service-debt queue: z' = max(z - delta * alpha, 0) + (alpha - p).

    The drain delta * alpha is the slack the quality-of-service guarantee
    grants this slot; the arrival alpha - p is the demand left unserved.
    """
    if z < 0.0:
        raise ValueError(f"queue level {z} is negative")
    if alpha < 0.0:
        raise ValueError(f"quality demand {alpha} is negative")
    if p < 0.0:
        raise ValueError(f"service {p} is negative")
    if p > alpha:
        # Tolerate rounding dust from flows assembled in several pieces;
        # anything beyond it is a real contract violation.
        if p > alpha + 1e-9:
            raise ValueError(f"service {p} exceeds demand {alpha}")
        p = alpha
    drained = z - delta * alpha
    if drained < 0.0:
        drained = 0.0
    return drained + (alpha - p)


def bound_constants(system: SystemSpec, v: float) -> BoundConstants:
    """Evaluate the guarantee constants for this system at parameter v."""
    if v <= 0.0:
        raise ValueError(f"control parameter must be positive, got {v}")
    b = 0.0
    for spec in system.batteries:
        m = max(spec.d_max, spec.r_max)
        b += 0.5 * m * m
    for res in system.residents:
        b += 0.5 * (2.0 + res.delta * res.delta) * res.alpha_max * res.alpha_max
    z_max = tuple(v * system.grid.c_max + res.alpha_max for res in system.residents)
    b_star = b
    for zm, res in zip(z_max, system.residents):
        b_star += zm * (1.0 - res.delta) * res.alpha_max
    return BoundConstants(b=b, z_max=z_max, b_star=b_star)


def check_qose_stability(outage_sums: tuple[float, ...] | list[float],
                         alpha_sums: tuple[float, ...] | list[float],
                         deltas: tuple[float, ...] | list[float],
                         z_max: tuple[float, ...] | list[float]) -> list[bool]:
    """Check the finite-horizon service guarantee per resident.

    Resident n passes iff its accumulated unserved quality demand stays
    within delta_n times its accumulated demand plus the queue cap z_max[n];
    the cap is exactly the slack a bounded debt queue can hide.
    """
    if not len(outage_sums) == len(alpha_sums) == len(deltas) == len(z_max):
        raise ValueError("per-resident argument lengths differ")
    return [i_sum <= delta * a_sum + zm
            for i_sum, a_sum, delta, zm in zip(outage_sums, alpha_sums, deltas, z_max)]
