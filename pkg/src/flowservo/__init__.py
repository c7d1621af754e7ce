"""Flow-based model predictive visual servoing workbench."""

from flowservo.geometry import (
    DomainError,
    Intrinsics,
    Pose,
    VelocityScrew,
    InteractionMatrix,
    normalize_pixel,
    interaction_rows,
    stack_interaction,
    integrate_twist,
    pose_error,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Intrinsics",
    "Pose",
    "VelocityScrew",
    "InteractionMatrix",
    "normalize_pixel",
    "interaction_rows",
    "stack_interaction",
    "integrate_twist",
    "pose_error",
]
