"""
Rigid-body core and the lumped-parameter flexible arm model
"""

from .mrfem import (
    FlexModel,
    MaterialGeometry,
    build_model,
    build_model_from_settings,
    describe,
    equilibrium_state,
    hold_torque,
    map_state,
    output_map,
    passive_equilibrium,
    total_energy,
    vector_field,
)
from .rbd import (
    ChainModel,
    Joint,
    JointKind,
    KinematicsResult,
    SpatialInertia,
    bias_forces,
    forward_dynamics,
    forward_kinematics,
    gravity_potential,
    inverse_dynamics,
    kinetic_energy,
    mass_matrix,
)

__all__ = [
    "ChainModel",
    "FlexModel",
    "Joint",
    "JointKind",
    "KinematicsResult",
    "MaterialGeometry",
    "SpatialInertia",
    "bias_forces",
    "build_model",
    "build_model_from_settings",
    "describe",
    "equilibrium_state",
    "forward_dynamics",
    "forward_kinematics",
    "gravity_potential",
    "hold_torque",
    "inverse_dynamics",
    "kinetic_energy",
    "map_state",
    "mass_matrix",
    "output_map",
    "passive_equilibrium",
    "total_energy",
    "vector_field",
]
