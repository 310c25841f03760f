from .jacobians import (
    central_difference,
    jac_forward_kinematics,
    jac_output_map,
    jac_step,
    jac_vector_field,
)

__all__ = [
    "central_difference",
    "jac_forward_kinematics",
    "jac_output_map",
    "jac_step",
    "jac_vector_field",
]
