"""Online adaptive electricity scheduling for a microgrid.

A queue-weighted online controller dispatches batteries, market trades, and
elastic quality-of-service demand one slot at a time, with deterministic
guarantees on battery bands and service backlogs; a trace-driven simulator
audits every guarantee and reproduces the cost/quality trade-offs.
"""

from .model import (
    BALANCE_TOL,
    BAND_TOL,
    BatteryBandError,
    BatterySpec,
    Dispatch,
    GridSpec,
    ResidentSpec,
    SlotObservation,
    SystemSpec,
    SystemState,
    TraceError,
    UnservableSurplusError,
    apply_dispatch,
    check_dispatch,
    compute_vmax,
    surplus_power,
    validate_observation,
)
from .queues import (
    BoundConstants,
    QueueView,
    battery_queue,
    bound_constants,
    check_qose_stability,
    queue_view,
    update_qose_queue,
)
from .dispatch import (
    Bid,
    Offer,
    SubproblemResult,
    build_subproblem,
    dispatch_slot,
    mecp_dispatch,
    merit_order_allocate,
    oracle_coefficient_sum,
    oracle_solve,
    slot_objective,
    threshold_violations,
)
from .sim import (
    OUTAGE_WINDOW,
    Regime,
    RunConfig,
    SlotRecord,
    Summary,
    format_summary,
    generate_traces,
    hindsight_lower_bound,
    load_config,
    load_traces,
    run,
    write_slot_records,
    write_summary,
    write_traces,
)
from .validate import (
    Scenario,
    SuiteResult,
    random_observation,
    random_state,
    random_system,
    run_all_suites,
    run_bound_trials,
    solver_oracle_trials,
    threshold_trials,
)

__version__ = "0.1.0"

__all__ = [
    "BALANCE_TOL",
    "BAND_TOL",
    "BatteryBandError",
    "BatterySpec",
    "Bid",
    "BoundConstants",
    "Dispatch",
    "GridSpec",
    "OUTAGE_WINDOW",
    "Offer",
    "QueueView",
    "Regime",
    "ResidentSpec",
    "RunConfig",
    "Scenario",
    "SlotObservation",
    "SlotRecord",
    "SubproblemResult",
    "SuiteResult",
    "Summary",
    "SystemSpec",
    "SystemState",
    "TraceError",
    "UnservableSurplusError",
    "apply_dispatch",
    "battery_queue",
    "bound_constants",
    "build_subproblem",
    "check_dispatch",
    "check_qose_stability",
    "compute_vmax",
    "dispatch_slot",
    "format_summary",
    "generate_traces",
    "hindsight_lower_bound",
    "load_config",
    "load_traces",
    "mecp_dispatch",
    "merit_order_allocate",
    "oracle_coefficient_sum",
    "oracle_solve",
    "queue_view",
    "random_observation",
    "random_state",
    "random_system",
    "run",
    "run_all_suites",
    "run_bound_trials",
    "slot_objective",
    "solver_oracle_trials",
    "surplus_power",
    "threshold_trials",
    "threshold_violations",
    "update_qose_queue",
    "validate_observation",
    "write_slot_records",
    "write_summary",
    "write_traces",
]
