"""
Exception hierarchy shared by all modules
"""

from typing import Optional


class FlexArmError(Exception):
    """所有自訂例外的基底類別"""


class ArgumentError(FlexArmError, ValueError):
    """維度或參數不合法"""


class NumericError(FlexArmError, ArithmeticError):
    """數值計算失敗"""


class SingularInertiaError(NumericError):
    def __init__(self, joint_index: int, pivot: float):
        self.joint_index = joint_index
        self.pivot = pivot
        super().__init__(
            f"articulated inertia is singular at joint {joint_index} (pivot={pivot:.3e})"
        )


class DivergenceError(NumericError):
    """顯式積分器產生非有限值"""


class NewtonConvergenceError(NumericError):
    def __init__(self, residual: float, iterations: int, context: str = "Newton"):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{context} did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


class SimulationError(NumericError):
    def __init__(self, time: float, cause: Optional[BaseException] = None):
        self.time = time
        message = f"simulation aborted at t={time:.4f} s"
        if cause is not None:
            message += f": {cause}"
        super().__init__(message)


class TrainingError(FlexArmError):
    """訓練過程出現非有限損失"""
