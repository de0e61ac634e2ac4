"""Sphere-based self-collision barriers and their linearized constraint rows."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .rigidbody import RobotModel, attached_points

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CollisionSphere:
    name: str
    parent_joint: int
    offset: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"sphere '{self.name}' radius must be positive")
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))


@dataclass(frozen=True)
class CbfPair:
    tracked_frame: str
    sphere: str
    limb_radius: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        if self.limb_radius < 0 or self.margin < 0:
            raise ValueError("limb_radius and margin must be non-negative")

    def rho(self, model: RobotModel) -> float:
        """Inflated clearance radius: sphere radius + limb thickness + margin."""
        return model.sphere(self.sphere).radius + self.limb_radius + self.margin


@dataclass(frozen=True, eq=False)
class CbfRow:
    gradient: np.ndarray
    bound: float
    h: float

    def satisfied(self, dq, tol: float = 0.0) -> bool:
        return float(self.gradient @ dq) >= self.bound - tol


def _pair_geometry(model: RobotModel, q, pairs):
    attachments = []
    rhos = np.empty(len(pairs))
    for k, pair in enumerate(pairs):
        frame = model.frame(pair.tracked_frame)
        sphere = model.sphere(pair.sphere)
        attachments.append((frame.parent, frame.offset))
        attachments.append((sphere.parent_joint, sphere.offset))
        rhos[k] = sphere.radius + pair.limb_radius + pair.margin
    pos, jac = attached_points(model, q, attachments)
    return pos[0::2], jac[0::2], pos[1::2], jac[1::2], rhos


def barrier_terms(model: RobotModel, q, pairs=None) -> tuple[np.ndarray, np.ndarray]:
    """Barrier values (k,) and gradients (k,n) for all pairs in one kinematic pass."""
    pairs = model.cbf_pairs if pairs is None else pairs
    if len(pairs) == 0:
        return np.zeros(0), np.zeros((0, model.dof))
    x, Jx, c, Jc, rho = _pair_geometry(model, q, pairs)
    d = x - c
    h = np.einsum("ki,ki->k", d, d) - rho**2
    grad = 2.0 * np.einsum("ki,kij->kj", d, Jx - Jc)
    for k in np.flatnonzero(np.einsum("ki,ki->k", d, d) == 0.0):
        log.debug("coincident tracked point and sphere centre for pair %s; gradient is zero", pairs[k])
    return h, grad


def cbf_value(model: RobotModel, q, pair: CbfPair) -> float:
    h, _ = barrier_terms(model, q, [pair])
    return float(h[0])


def cbf_gradient(model: RobotModel, q, pair: CbfPair) -> np.ndarray:
    _, grad = barrier_terms(model, q, [pair])
    return grad[0]


def build_cbf_rows(model: RobotModel, q, pairs, gamma: float = 0.5) -> list[CbfRow]:
    """One row per pair encoding grad(h)^T dq >= -gamma h."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    h, grad = barrier_terms(model, q, pairs)
    return [CbfRow(grad[k], float(-gamma * h[k]), float(h[k])) for k in range(len(h))]
