"""Continuation-based parallel differential IK.

Per control step and per limb segment, a family of QPs is built whose task
displacement is a fraction alpha of the final-goal error.  The family shares
its Hessian and constraints, so it is solved as one batch.  Each candidate is
checked against a Lyapunov progress certificate on the final-goal error and
the largest certified alpha is applied.  Segment updates are embedded into
the full joint vector with overlapping joints averaged.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .qpsolve import BatchSolution, QpProblem, QpSettings, QpStatus, solve_shared
from . import _kinematics_kernel as _kernel
from . import _screen_kernel as _screen
from .rigidbody import RobotModel, attached_points, check_configuration, frame_positions

log = logging.getLogger(__name__)

FLAG_NO_CERTIFIED = "no_certified_candidate"
FLAG_QP_INEXACT = "qp_inexact"
FLAG_CBF_ACTIVE = "cbf_active"
FLAG_COMPOSE_FALLBACK = "compose_fallback"


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class TaskTarget:
    frame: str
    position: np.ndarray
    weight: float | np.ndarray = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        w = np.broadcast_to(np.asarray(self.weight, dtype=float), (3,)).copy()
        if np.any(w <= 0):
            raise ValueError("task weights must be positive")
        object.__setattr__(self, "weight", w)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    targets: tuple[TaskTarget, ...]

    def __post_init__(self):
        targets = tuple(self.targets)
        object.__setattr__(self, "targets", targets)
        # stacked views, read on every control step
        desired = np.concatenate([t.position for t in targets]) if targets else np.zeros(0)
        weights = np.concatenate([t.weight for t in targets]) if targets else np.zeros(0)
        desired.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "_desired", desired)
        object.__setattr__(self, "_weights", weights)

    @classmethod
    def from_positions(cls, positions: dict[str, Sequence[float]], weight=1.0) -> "TaskSpec":
        return cls(tuple(TaskTarget(f, np.asarray(p), weight) for f, p in positions.items()))

    @property
    def frames(self) -> list[str]:
        return [t.frame for t in self.targets]

    @property
    def desired(self) -> np.ndarray:
        return self._desired

    @property
    def weights(self) -> np.ndarray:
        """Diagonal of W_x."""
        return self._weights

    def validate(self, model: RobotModel) -> None:
        for t in self.targets:
            model.frame(t.frame)

    def moved(self, positions: dict[str, np.ndarray]) -> "TaskSpec":
        return TaskSpec(tuple(replace(t, position=np.asarray(positions.get(t.frame, t.position))) for t in self.targets))


@dataclass(frozen=True, eq=False)
class ContinuationGrid:
    K: int
    mode: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if len(v) != self.K or self.K < 1:
            raise ValueError("grid needs K >= 1 values")
        if np.any(np.diff(v) < 0) or np.any(v < 0) or np.any(v > 1):
            raise ValueError("grid values must be sorted and lie in [0, 1]")
        if self.mode == "deterministic_grid" and not np.allclose(v, np.arange(1, self.K + 1) / self.K):
            raise ValueError("deterministic grid must be j/K for j = 1..K")
        object.__setattr__(self, "values", v)

    @classmethod
    def deterministic(cls, K: int) -> "ContinuationGrid":
        return cls(K, "deterministic_grid", np.arange(1, K + 1) / K)

    @classmethod
    def uniform(cls, K: int, rng: np.random.Generator) -> "ContinuationGrid":
        return cls(K, "uniform_random", np.sort(rng.uniform(0.0, 1.0, K)))

    @classmethod
    def fixed(cls, values: Sequence[float]) -> "ContinuationGrid":
        v = np.sort(np.asarray(values, dtype=float))
        return cls(len(v), "fixed", v)


@dataclass(frozen=True, eq=False)
class CertificateParams:
    eta: float = 0.0005
    eps_q: float = 1e-4
    eps_V: float = 1e-6
    W: np.ndarray | None = None  # None: use the task weights
    enabled: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.eps_q < 0 or self.eps_V < 0:
            raise ValueError("eps_q and eps_V must be non-negative")
        if self.W is not None:
            W = np.asarray(self.W, dtype=float)
            mat = np.diag(W) if W.ndim == 1 else W
            if np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() <= 0:
                raise ValueError("W must be positive definite")


@dataclass(frozen=True, eq=False)
class SegmentEmbedding:
    segments: tuple[np.ndarray, ...]
    n: int

    def __post_init__(self):
        segs = tuple(np.asarray(s, dtype=int) for s in self.segments)
        if not segs:
            raise ValueError("need at least one segment")
        for s in segs:
            if len(s) == 0 or len(set(s.tolist())) != len(s) or s.min() < 0 or s.max() >= self.n:
                raise ValueError("segment joint indices must be unique and within the model")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def whole(cls, n: int) -> "SegmentEmbedding":
        return _whole_embedding(cls, n)

    @property
    def counts(self) -> np.ndarray:
        c = np.zeros(self.n, dtype=int)
        for s in self.segments:
            c[s] += 1
        return c

    @property
    def overlap(self) -> np.ndarray:
        return np.flatnonzero(self.counts > 1)

    def matrix(self, i: int) -> np.ndarray:
        """Embedding P_i (n x d_i): exactly one 1 per column."""
        s = self.segments[i]
        P = np.zeros((self.n, len(s)))
        P[s, np.arange(len(s))] = 1.0
        return P


@functools.lru_cache(maxsize=None)
def _whole_embedding(cls, n: int) -> SegmentEmbedding:
    return cls((np.arange(n),), n)


@dataclass(frozen=True)
class ContinuationCandidate:
    alpha: float
    feasible: bool
    V_pred: float
    accepted: bool
    dq_norm: float
    status: str
    violation: float


@dataclass(frozen=True, eq=False)
class StepResult:
    q_next: np.ndarray
    dq: np.ndarray
    segment_alphas: tuple[float | None, ...]
    candidates: tuple  # one CandidateSet per segment
    V_before: float
    V_after: float
    flags: frozenset[str]
    segment_V: tuple[float, ...] = ()
    segment_V_pred: tuple[float | None, ...] = ()
    barrier_values: np.ndarray = field(default=None, repr=False)
    task_jacobian: np.ndarray = field(default=None, repr=False)

    @property
    def min_singular_value(self) -> float:
        """Smallest singular value of the full task Jacobian at q."""
        J = self.task_jacobian
        return float(np.linalg.svd(J, compute_uv=False).min()) if J is not None and J.size else np.nan

    @property
    def selected_alpha(self) -> float | None:
        """Smallest alpha applied across segments (None when every segment held)."""
        chosen = [a for a in self.segment_alphas if a is not None]
        return min(chosen) if chosen else None


@dataclass(frozen=True, eq=False)
class RetargetConfig:
    grid: ContinuationGrid = field(default_factory=lambda: ContinuationGrid.deterministic(64))
    certificate: CertificateParams = field(default_factory=CertificateParams)
    segments: SegmentEmbedding | None = None
    Wq: float | np.ndarray = 0.01
    gamma: float = 0.5
    dt: float = 0.01
    cbf_pairs: tuple | None = None  # None: all pairs declared in the model
    qp: QpSettings = field(default_factory=QpSettings.batch_regime)
    feas_tol: float = 1e-6
    # when nothing certifies: "best_decrease" applies the feasible candidate
    # with the lowest predicted value if it improves on V, "hold" stays put
    fallback: str = "best_decrease"
    recheck_composed: bool = True
    # with the certificate off, still require linearized constraint feasibility
    require_feasible: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.fallback not in ("hold", "best_decrease"):
            raise ValueError("fallback must be 'hold' or 'best_decrease'")


# --------------------------------------------------------------------------
# elementary operations


def continuation_targets(x_now, x_d, grid: ContinuationGrid) -> list[np.ndarray]:
    """Displacements alpha_j (x_d - x_now) for every grid value."""
    x_now = np.asarray(x_now, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    if x_now.shape != x_d.shape:
        raise ValueError("task vectors differ in shape")
    e = x_d - x_now
    return [a * e for a in grid.values]


def lyapunov_value(e, W) -> float:
    """V = 1/2 e' W e; W may be a matrix or the diagonal of one."""
    e = np.asarray(e, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        return float(0.5 * np.sum(W * e * e))
    return float(0.5 * e @ W @ e)


def predicted_lyapunov(e, J, dq, W) -> float:
    """Linearized post-step value 1/2 (e - J dq)' W (e - J dq)."""
    r = np.asarray(e, dtype=float) - np.asarray(J, dtype=float) @ np.asarray(dq, dtype=float)
    return lyapunov_value(r, W)


def certify(dq, feasible: bool, V: float, V_pred: float, params: CertificateParams) -> bool:
    """Feasible, predicted progress of at least eta, and not a stagnant step."""
    if not feasible:
        return False
    if not V_pred <= V - params.eta:
        return False
    return V <= params.eps_V or float(np.linalg.norm(dq)) >= params.eps_q


def select_candidate(accepted: Sequence[bool]) -> int | None:
    """Index of the largest accepted alpha (candidates sorted by alpha)."""
    for j in range(len(accepted) - 1, -1, -1):
        if accepted[j]:
            return j
    return None


def compose_segments(dqs: Sequence[np.ndarray], embedding: SegmentEmbedding) -> np.ndarray:
    """Sum of P_s dq_s with joints claimed by several segments averaged."""
    if len(dqs) != len(embedding.segments):
        raise ValueError("one update per segment required")
    total = np.zeros(embedding.n)
    for dq, seg in zip(dqs, embedding.segments):
        dq = np.asarray(dq, dtype=float)
        if dq.shape != (len(seg),):
            raise ValueError("segment update does not match its embedding")
        total[seg] += dq
    counts = embedding.counts
    return np.where(counts > 0, total / np.maximum(counts, 1), 0.0)


@dataclass(frozen=True, eq=False)
class SegmentData:
    """Everything a segment's candidate QPs share at one configuration."""

    joints: np.ndarray
    rows: np.ndarray  # task rows owned by the segment
    J: np.ndarray  # task Jacobian restricted to the segment
    e: np.ndarray
    W: np.ndarray  # diagonal of W_x for the segment's rows
    C: np.ndarray  # barrier gradient rows
    h: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray


def build_candidate_qp(model: RobotModel, q, segment, displacement, weights, cbf_rows, step_bounds, Wq=1.0, J=None) -> QpProblem:
    """Continuation QP for one segment.

    ``segment`` lists model joint indices, ``displacement`` is alpha e for the
    segment's task rows, ``weights`` the diagonal of W_x, ``cbf_rows`` a pair
    (gradients restricted to the segment, bounds -gamma h), ``step_bounds``
    the per-joint increment bound.  ``J`` is the task Jacobian restricted to
    the segment.
    """
    segment = np.asarray(segment, dtype=int)
    d = len(segment)
    J = np.asarray(J, dtype=float)
    disp = np.asarray(displacement, dtype=float)
    w = np.asarray(weights, dtype=float)
    if J.shape != (disp.shape[0], d) or w.shape != disp.shape:
        raise ValueError("task Jacobian, displacement and weights are inconsistent")
    H, A, lo, up = _shared_qp(model, q, segment, J, w, cbf_rows, step_bounds, Wq)
    return QpProblem(H, -(J.T @ (w * disp)), A, lo, up)


def _shared_qp(model, q, segment, J, w, cbf_rows, step_bounds, Wq):
    d = len(segment)
    C, cbf_lo = cbf_rows
    C = np.asarray(C, dtype=float).reshape(-1, d)
    cbf_lo = np.asarray(cbf_lo, dtype=float).reshape(-1)
    Wq = np.asarray(Wq, dtype=float)
    H = J.T @ (w[:, None] * J)
    H = 0.5 * (H + H.T)
    H.flat[:: d + 1] += Wq[segment] if Wq.ndim else Wq
    step = np.broadcast_to(np.asarray(step_bounds, dtype=float), (d,))
    q = np.asarray(q, dtype=float)[segment]
    nc = len(cbf_lo)
    A = np.zeros((nc + 2 * d, d))
    A[:nc] = C
    eye = np.eye(d)
    A[nc : nc + d] = eye
    A[nc + d :] = eye
    lo = np.empty(nc + 2 * d)
    up = np.empty(nc + 2 * d)
    lo[:nc], up[:nc] = cbf_lo, np.inf
    lo[nc : nc + d], up[nc : nc + d] = -step, step
    lo[nc + d :], up[nc + d :] = model.lower[segment] - q, model.upper[segment] - q
    return H, A, lo, up


# --------------------------------------------------------------------------
# control step


@functools.lru_cache(maxsize=256)
def _step_plan(model: RobotModel, frames: tuple[str, ...], pairs: tuple, embedding: SegmentEmbedding):
    """Attachment arrays, barrier radii and per-segment task rows.

    Depends only on the model, the tracked frames, the barrier pairs and the
    segmentation, so it is computed once and reused across control steps.
    """
    attachments = [(model.frame(f).parent, model.frame(f).offset) for f in frames]
    rho = np.empty(len(pairs))
    for k, pair in enumerate(pairs):
        f = model.frame(pair.tracked_frame)
        s = model.sphere(pair.sphere)
        attachments.append((f.parent, f.offset))
        attachments.append((s.parent_joint, s.offset))
        rho[k] = s.radius + pair.limb_radius + pair.margin
    parents = np.array([p for p, _ in attachments], dtype=np.int64)
    offsets = np.array([o for _, o in attachments], dtype=float).reshape(-1, 3)
    owned = _assign_targets(model, frames, embedding)
    rows = tuple(
        np.concatenate([np.arange(3 * i, 3 * i + 3) for i in targets]) if targets else np.zeros(0, dtype=int)
        for targets in owned
    )
    return parents, offsets, rho, rows


def _evaluate(model: RobotModel, q, task: TaskSpec, pairs, plan=None):
    """Task positions/Jacobians and barrier values/gradients in one pass.

    ``plan`` is the cached ``_step_plan``; without it ``q`` is validated and
    the whole-body plan is used.
    """
    frames = tuple(task.frames)
    pairs = tuple(pairs)
    if plan is None:
        q = check_configuration(model, q)
        plan = _step_plan(model, frames, pairs, SegmentEmbedding.whole(model.dof))
    parents, offsets, rho, _ = plan
    pos, jac = _kernel.points(*model._packed, q, parents, offsets, True)
    nt = len(frames)
    x = pos[:nt].reshape(-1)
    J = jac[:nt].reshape(-1, model.dof)
    if pairs:
        px, pc = pos[nt::2], pos[nt + 1 :: 2]
        Jx, Jc = jac[nt::2], jac[nt + 1 :: 2]
        diff = px - pc
        h = np.einsum("ki,ki->k", diff, diff) - rho**2
        grad = 2.0 * np.einsum("ki,kij->kj", diff, Jx - Jc)
    else:
        h, grad = np.zeros(0), np.zeros((0, model.dof))
    return x, J, h, grad


def _assign_targets(model: RobotModel, frames: tuple[str, ...], embedding: SegmentEmbedding) -> list[list[int]]:
    """Target indices owned by each segment: a target belongs to the first
    segment containing its whole kinematic chain."""
    owned: list[list[int]] = [[] for _ in embedding.segments]
    for i, frame in enumerate(frames):
        chain = set(np.flatnonzero(model.chain(model.frame(frame).parent)).tolist())
        for s, seg in enumerate(embedding.segments):
            if chain <= set(seg.tolist()):
                owned[s].append(i)
                break
        else:
            raise ValueError(f"target frame '{frame}' is not covered by any single segment")
    return owned


def segment_data(model: RobotModel, q, task: TaskSpec, config: RetargetConfig, embedding: SegmentEmbedding):
    pairs = tuple(model.cbf_pairs if config.cbf_pairs is None else config.cbf_pairs)
    frames = tuple(task.frames)
    plan = _step_plan(model, frames, pairs, embedding)
    x, J, h, grad = _evaluate(model, q, task, pairs, plan)
    e = task.desired - x
    W_all = task.weights
    vel = model.velocity_limits
    out = []
    for seg, rows in zip(embedding.segments, plan[3]):
        C = grad[:, seg]
        keep = np.linalg.norm(C, axis=1) > 1e-12 * (1.0 + np.linalg.norm(grad, axis=1))
        step = vel[seg] * config.dt
        box_lo = np.maximum(-step, model.lower[seg] - q[seg])
        box_hi = np.minimum(step, model.upper[seg] - q[seg])
        out.append(SegmentData(seg, rows, J[np.ix_(rows, seg)], e[rows], W_all[rows], C[keep], h[keep], box_lo, box_hi))
    return out, (x, J, h, grad, e, W_all)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Diagnostics for one segment's K candidates, stored as arrays.

    Indexing yields ``ContinuationCandidate`` records, so the set can be used
    like a list of candidates.
    """

    alpha: np.ndarray
    feasible: np.ndarray
    V_pred: np.ndarray
    accepted: np.ndarray
    dq: np.ndarray  # (K, d) clipped increments
    status: np.ndarray  # qpsolve status codes
    violation: np.ndarray
    V: float

    def __len__(self) -> int:
        return len(self.alpha)

    def __getitem__(self, j: int) -> ContinuationCandidate:
        return ContinuationCandidate(
            float(self.alpha[j]),
            bool(self.feasible[j]),
            float(self.V_pred[j]),
            bool(self.accepted[j]),
            float(np.linalg.norm(self.dq[j])),
            _STATUS_NAMES[int(self.status[j])],
            float(self.violation[j]),
        )

    def __iter__(self):
        return (self[j] for j in range(len(self)))


_STATUS_NAMES = {0: QpStatus.SOLVED.value, 1: QpStatus.MAX_ITER.value, 2: QpStatus.INFEASIBLE.value}


def _solve_family(H, A, G, lo, up, settings: QpSettings, warm: BatchSolution | None) -> BatchSolution:
    if not settings.adaptive_rho or G.shape[0] == 1:
        return solve_shared(H, A, G, lo, up, settings, warm)
    # adaptive rho changes the factorization per problem, so solve one at a time
    parts = []
    for j in range(G.shape[0]):
        w = None
        if warm is not None:
            w = BatchSolution(*(np.asarray(f)[j : j + 1] for f in (warm.Z, warm.status, warm.iterations, warm.primal_residual, warm.dual_residual, warm.slack, warm.dual)))
        parts.append(solve_shared(H, A, G[j : j + 1], lo, up, settings, w))
    return BatchSolution(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("Z", "status", "iterations", "primal_residual", "dual_residual", "slack", "dual")))


def _segment_candidates(model, q, data: SegmentData, config: RetargetConfig, warm):
    grid = config.grid
    step = model.velocity_limits[data.joints] * config.dt
    H, A, lo, up = _shared_qp(model, q, data.joints, data.J, data.W, (data.C, -config.gamma * data.h), step, config.Wq)
    g1 = -(data.J.T @ (data.W * data.e))
    sols = _solve_family(H, A, grid.values[:, None] * g1, lo, up, config.qp, warm)

    W_cert = _certificate_weight(config, data.W, data.rows)
    cert = config.certificate
    DQ, viol, feasible, V_pred, accepted, V = _screen.screen(
        sols.Z, sols.status, data.box_lo, data.box_hi, data.C, data.h, float(config.gamma),
        data.J, data.e, np.diag(W_cert) if W_cert.ndim == 1 else W_cert, float(config.feas_tol),
        bool(cert.enabled), float(cert.eta), float(cert.eps_V), float(cert.eps_q), bool(config.require_feasible),
    )
    cands = CandidateSet(grid.values, feasible, V_pred, accepted, DQ, sols.status, viol, V)
    return cands, sols


def _certificate_weight(config: RetargetConfig, W_task: np.ndarray, rows: np.ndarray | None = None):
    """Lyapunov weight restricted to ``rows`` (diagonal vector or matrix)."""
    W = config.certificate.W
    if W is None:
        return W_task
    W = np.asarray(W, dtype=float)
    if rows is None:
        return W
    return W[rows] if W.ndim == 1 else W[np.ix_(rows, rows)]


def _choose(cands: CandidateSet, fallback: str):
    j = select_candidate(cands.accepted)
    if j is not None:
        return j, False
    if fallback == "best_decrease":
        ok = np.flatnonzero(cands.feasible & (cands.V_pred < cands.V))
        if len(ok):
            return int(ok[np.argmin(cands.V_pred[ok])]), True
    return None, True


def control_step(model: RobotModel, q, task: TaskSpec, config: RetargetConfig | None = None, warm=None) -> tuple[StepResult, list]:
    """One continuation step.  Returns the result and the per-segment QP
    solutions to warm-start the next call with."""
    config = config or RetargetConfig()
    q = check_configuration(model, q)
    if np.any(q < model.lower - 1e-9) or np.any(q > model.upper + 1e-9):
        raise ValueError("configuration outside joint limits")
    task.validate(model)
    embedding = config.segments or SegmentEmbedding.whole(model.dof)
    if embedding.n != model.dof:
        raise ValueError("segment embedding does not match the model")

    datas, (x, J_full, h_full, grad_full, e_full, W_full) = segment_data(model, q, task, config, embedding)
    flags: set[str] = set()
    warm = warm if warm is not None and len(warm) == len(datas) else [None] * len(datas)

    seg_cands, seg_sols, chosen = [], [], []
    for s, data in enumerate(datas):
        w = warm[s] if warm[s] is not None and len(warm[s]) == config.grid.K else None
        cands, sols = _segment_candidates(model, q, data, config, w)
        j, fell_back = _choose(cands, config.fallback)
        if fell_back and cands.V > 0:
            flags.add(FLAG_NO_CERTIFIED)
        seg_cands.append(cands)
        seg_sols.append(sols)
        chosen.append(j)
    seg_V = [c.V for c in seg_cands]

    def assemble(choice):
        parts = [c.dq[j] if j is not None else np.zeros(len(d.joints)) for c, j, d in zip(seg_cands, choice, datas)]
        return compose_segments(parts, embedding)

    dq = assemble(chosen)
    if config.recheck_composed and len(datas) > 1 and len(h_full):
        slack = grad_full @ dq + config.gamma * h_full
        if slack.min() < -config.feas_tol:
            alphas = [config.grid.values[j] for j in chosen if j is not None]
            if alphas:
                a_min = min(alphas)
                j_min = int(np.flatnonzero(config.grid.values == a_min)[0])
                # a segment moves to alpha_min only where that candidate passed its own test
                chosen = [
                    j_min if chosen[s] is not None and (seg_cands[s].accepted[j_min] or chosen[s] == j_min) else None
                    for s in range(len(datas))
                ]
                dq = assemble(chosen)
                flags.add(FLAG_COMPOSE_FALLBACK)

    for s, j in enumerate(chosen):
        if j is not None and seg_sols[s].status[j] == 1:
            flags.add(FLAG_QP_INEXACT)
    if len(h_full) and np.any(np.abs(grad_full @ dq + config.gamma * h_full) <= max(config.feas_tol, 1e-9)):
        flags.add(FLAG_CBF_ACTIVE)

    q_next = q + dq
    W_cert = _certificate_weight(config, W_full)
    V_before = lyapunov_value(e_full, W_cert)
    x_next = frame_positions(model, q_next, task.frames).reshape(-1)
    V_after = lyapunov_value(task.desired - x_next, W_cert)

    seg_alphas = tuple(float(config.grid.values[j]) if j is not None else None for j in chosen)
    seg_pred = tuple(float(seg_cands[s].V_pred[j]) if j is not None else None for s, j in enumerate(chosen))
    result = StepResult(
        q_next=q_next,
        dq=dq,
        segment_alphas=seg_alphas,
        candidates=tuple(seg_cands),
        V_before=V_before,
        V_after=V_after,
        flags=frozenset(flags),
        segment_V=tuple(seg_V),
        segment_V_pred=seg_pred,
        barrier_values=h_full,
        task_jacobian=J_full,
    )
    return result, seg_sols


class RetargetController:
    """Holds warm-start state between control steps."""

    def __init__(self, model: RobotModel, config: RetargetConfig | None = None):
        self.model = model
        self.config = config or RetargetConfig()
        self._warm = None

    def reset(self) -> None:
        self._warm = None

    def step(self, q, task: TaskSpec) -> StepResult:
        result, sols = control_step(self.model, q, task, self.config, self._warm)
        self._warm = sols if self.config.qp.warm_start else None
        return result
