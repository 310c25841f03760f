"""
Closed-loop orchestration, KPIs and experiment drivers
"""

from .closed_loop import (
    ClosedLoop,
    ControlOutput,
    ExpertController,
    FilteredPolicyController,
    PolicyController,
    RunResult,
    log_columns,
    run_closed_loop,
)
from .kpi import KpiReport, aggregate_kpis, compute_kpis, reach_and_hold_index
from .results import kpi_document, write_kpis, write_log, write_table
from .studies import (
    discretization_study,
    evaluate,
    filter_demo,
    horizon_study,
    model_complexity_study,
    run_batch,
    simulate_protocol,
    square_wave,
    train_policy,
)
from .task import check_goal, goal_distance, initial_state, sample_active_joints

__all__ = [
    "ClosedLoop",
    "ControlOutput",
    "ExpertController",
    "FilteredPolicyController",
    "KpiReport",
    "PolicyController",
    "RunResult",
    "aggregate_kpis",
    "check_goal",
    "compute_kpis",
    "discretization_study",
    "evaluate",
    "filter_demo",
    "goal_distance",
    "horizon_study",
    "initial_state",
    "kpi_document",
    "log_columns",
    "model_complexity_study",
    "reach_and_hold_index",
    "run_batch",
    "run_closed_loop",
    "sample_active_joints",
    "simulate_protocol",
    "square_wave",
    "train_policy",
    "write_kpis",
    "write_log",
    "write_table",
]
