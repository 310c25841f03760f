"""
Multiple-shooting NMPC: transcription, interior-point QP, Gauss-Newton SQP
"""

from .controller import NmpcController, SafetyFilter, nmpc_step, safety_filter_step, shift_guess
from .problem import (
    FlexDynamics,
    LinearDynamics,
    OcpBounds,
    OcpProblem,
    OcpSolution,
    OcpWeights,
    SolveStats,
    SolveStatus,
    transcribe,
)
from .qp import QpResult, StageQp, solve_qp
from .sqp import InitialGuess, SqpOptions, cold_start, solve

__all__ = [
    "FlexDynamics",
    "InitialGuess",
    "LinearDynamics",
    "NmpcController",
    "OcpBounds",
    "OcpProblem",
    "OcpSolution",
    "OcpWeights",
    "QpResult",
    "SafetyFilter",
    "SolveStats",
    "SolveStatus",
    "SqpOptions",
    "StageQp",
    "cold_start",
    "nmpc_step",
    "safety_filter_step",
    "shift_guess",
    "solve",
    "solve_qp",
    "transcribe",
]
