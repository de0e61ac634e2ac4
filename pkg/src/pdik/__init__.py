"""Continuation-based parallel differential IK with self-collision barriers."""

from importlib import resources

from .rigidbody import RobotModel, forward_kinematics, load_model, load_model_file, point_jacobian

__all__ = ["RobotModel", "forward_kinematics", "load_model", "load_model_file", "point_jacobian", "bundled_model"]


def bundled_model(name: str) -> RobotModel:
    """Load one of the shipped model files (planar_2r, two_branch, arm7, desk_dual_arm)."""
    text = resources.files(__package__).joinpath("models", f"{name}.model").read_text(encoding="utf-8")
    return load_model(text)
