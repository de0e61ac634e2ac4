"""Comparison methods: global Gauss-Newton SQP on the regularized nonlinear
objective, and single-shot (one candidate, alpha = 1) differential IK."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .qpsolve import QpProblem, QpSettings, QpStatus, solve
from .retarget import (
    ContinuationGrid,
    RetargetConfig,
    SegmentEmbedding,
    StepResult,
    TaskSpec,
    _evaluate,
    control_step,
)
from .rigidbody import RobotModel, check_configuration


@dataclass(frozen=True)
class SqpSettings:
    max_outer_iter: int = 100
    shrink: float = 0.5
    armijo_c: float = 1e-4
    convergence_tol: float = 1e-8  # on the step
    f_tol: float = 1e-12  # on the decrease of F, relative to max(F, 1)
    t_min: float = 1e-8
    # proximal term on the step (leaves stationary points unchanged), adapted
    # Levenberg-Marquardt style: shrunk after full steps, grown on backtracking
    damping: float = 0.1
    damping_min: float = 1e-6
    damping_max: float = 1e4
    gamma: float = 1.0  # barrier rows linearize h(q + dq) >= 0
    qp: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not (self.convergence_tol > 0 and self.f_tol >= 0):
            raise ValueError("convergence_tol must be positive and f_tol non-negative")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be at least 1")
        if not 0 < self.t_min <= 1:
            raise ValueError("t_min must lie in (0, 1]")
        if not 0 < self.damping_min <= self.damping <= self.damping_max:
            raise ValueError("need 0 < damping_min <= damping <= damping_max")


@dataclass(frozen=True, eq=False)
class GlobalIkResult:
    q_star: np.ndarray
    F_final: float
    iterations: int
    converged: bool
    F_history: tuple[float, ...] = ()
    q_history: tuple[np.ndarray, ...] = field(default=(), repr=False)


def _weights(task: TaskSpec, Wx, n: int, Wq):
    wx = task.weights if Wx is None else np.broadcast_to(np.asarray(Wx, dtype=float), task.weights.shape)
    wq = np.broadcast_to(np.asarray(Wq, dtype=float), (n,))
    return wx, wq


def objective_F(model: RobotModel, q, task: TaskSpec, q_ref, Wx=None, Wq=1e-4) -> float:
    """F(q) = 1/2 |x(q) - x_d|^2_Wx + 1/2 |q - q_ref|^2_Wq (diagonal weights).

    ``Wx=None`` uses the task's own weights.
    """
    q = check_configuration(model, q)
    wx, wq = _weights(task, Wx, model.dof, Wq)
    x = _evaluate(model, q, task, ())[0]
    r = x - task.desired
    dq = q - np.asarray(q_ref, dtype=float)
    return float(0.5 * np.sum(wx * r * r) + 0.5 * np.sum(wq * dq * dq))


def _gn_pieces(model, q, task, q_ref, wx, wq, pairs):
    x, J, h, grad = _evaluate(model, q, task, pairs)
    e = task.desired - x
    grad_F = -J.T @ (wx * e) + wq * (q - q_ref)
    F = 0.5 * np.sum(wx * e * e) + 0.5 * np.sum(wq * (q - q_ref) ** 2)
    return F, grad_F, J, h, grad


def global_ik_sqp(model: RobotModel, task: TaskSpec, q0, settings: SqpSettings | None = None, Wx=None, Wq=1e-4, q_ref=None, cbf_pairs=None) -> GlobalIkResult:
    """Minimize F with constrained Gauss-Newton steps and Armijo backtracking.

    Each subproblem is the Gauss-Newton model of F around q_k (plus a small
    proximal term) with joint limits as hard bounds and the barrier rows
    grad(h)' dq >= -gamma h.  Trial points must keep every barrier that was
    non-negative non-negative; F never increases between accepted iterates.
    """
    settings = settings or SqpSettings()
    q = check_configuration(model, q0).copy()
    if np.any(q < model.lower) or np.any(q > model.upper):
        raise ValueError("q0 outside joint limits")
    q_ref = q.copy() if q_ref is None else np.asarray(q_ref, dtype=float)
    pairs = tuple(model.cbf_pairs if cbf_pairs is None else cbf_pairs)
    wx, wq = _weights(task, Wx, model.dof, Wq)
    n = model.dof

    F, gF, J, h, C = _gn_pieces(model, q, task, q_ref, wx, wq, pairs)
    F_hist, q_hist = [F], [q.copy()]
    converged = False
    it = 0
    warm = None
    mu = settings.damping
    for it in range(1, settings.max_outer_iter + 1):
        H = J.T @ (wx[:, None] * J) + np.diag(wq) + mu * np.eye(n)
        A = np.vstack([C, np.eye(n)])
        lo = np.concatenate([-settings.gamma * h, model.lower - q])
        up = np.concatenate([np.full(len(h), np.inf), model.upper - q])
        sol = solve(QpProblem(0.5 * (H + H.T), gF, A, lo, up), settings.qp, warm)
        if sol.status == QpStatus.INFEASIBLE:
            raise RuntimeError("Gauss-Newton subproblem infeasible")
        warm = None  # bounds move with q, the previous iterate is not a useful start
        step = np.clip(sol.z, model.lower - q, model.upper - q)
        slope = float(gF @ step)
        if np.abs(step).max() <= settings.convergence_tol or slope >= 0:
            converged = True
            break
        t = 1.0
        accepted = False
        while t >= settings.t_min:
            trial = np.clip(q + t * step, model.lower, model.upper)
            F_t, gF_t, J_t, h_t, C_t = _gn_pieces(model, trial, task, q_ref, wx, wq, pairs)
            safe = not len(h) or np.all((h_t >= 0) | (h < 0))
            if safe and F_t <= F + settings.armijo_c * t * slope:
                accepted = True
                break
            t *= settings.shrink
        if not accepted:
            if mu < settings.damping_max:
                mu = min(mu * 10.0, settings.damping_max)  # retry with a shorter, better-conditioned step
                continue
            converged = True  # no admissible decrease along the step: stationary for this model
            break
        mu = max(mu * 0.3, settings.damping_min) if t == 1.0 else min(mu * 10.0, settings.damping_max)
        decrease = F - F_t
        q, F, gF, J, h, C = trial, F_t, gF_t, J_t, h_t, C_t
        F_hist.append(F)
        q_hist.append(q.copy())
        if np.abs(t * step).max() <= settings.convergence_tol or decrease <= settings.f_tol * max(F, 1.0):
            converged = True
            break
    return GlobalIkResult(q, float(F), it, converged, tuple(F_hist), tuple(q_hist))


def single_shot_config(base: RetargetConfig | None = None, mode: str = "monolithic", segments: SegmentEmbedding | None = None) -> RetargetConfig:
    """Controller settings for the one-candidate baseline.

    One candidate at alpha = 1, no certificate, and the QP iterate is applied
    as returned (no separate feasibility screening).
    """
    base = base or RetargetConfig()
    if mode == "monolithic":
        segs = None
    elif mode == "distributed":
        segs = segments or base.segments
        if segs is None:
            raise ValueError("distributed mode needs a segment embedding")
    else:
        raise ValueError("mode must be 'monolithic' or 'distributed'")
    return replace(
        base,
        grid=ContinuationGrid.fixed([1.0]),
        certificate=replace(base.certificate, enabled=False),
        segments=segs,
        require_feasible=False,
    )


def single_shot_step(model: RobotModel, q, task: TaskSpec, mode: str = "monolithic", config: RetargetConfig | None = None, segments=None, warm=None) -> tuple[StepResult, list]:
    """Single-instance differential IK step (monolithic or per-segment)."""
    return control_step(model, q, task, single_shot_config(config, mode, segments), warm)


__all__ = [
    "GlobalIkResult",
    "SqpSettings",
    "global_ik_sqp",
    "objective_F",
    "single_shot_config",
    "single_shot_step",
]
