"""Closed-loop ablation harness, escape-probability Monte Carlo, and the
bookkeeping behind the ablation report."""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .baselines import SqpSettings, global_ik_sqp, single_shot_config
from .qpsolve import QpSettings
from .retarget import (
    CertificateParams,
    ContinuationGrid,
    RetargetConfig,
    RetargetController,
    SegmentEmbedding,
    TaskSpec,
    _evaluate,
)
from .rigidbody import RobotModel, attached_points, frame_positions, min_singular_value
from .safety import barrier_terms

HAND_FRAMES = ("hand_l", "hand_r")

# Table column order of the ablation report
METHODS = (
    "global_sqp",
    "monolithic",
    "distributed",
    "parallel_dist_nocert",
    "parallel_mono_cert",
    "parallel_dist_cert",
)
METHOD_LABELS = {
    "global_sqp": "Global IK (SQP)",
    "monolithic": "Monolithic QP",
    "distributed": "Distributed QP",
    "parallel_dist_nocert": "Parallel Dist. QPs (no certificate)",
    "parallel_mono_cert": "Parallel Mono. QPs (certificate)",
    "parallel_dist_cert": "Parallel Dist. QPs (certificate)",
}
GENERATORS = ("random_reachable", "near_cbf_boundary", "replay_file")


# --------------------------------------------------------------------------
# detectors


def detect_stagnation(q_hist, dq_hist, lower, upper, window: int = 10, tol: float = 1e-3) -> bool:
    """True when some joint sits within ``tol`` of a limit with |dq| < tol for
    at least ``window`` consecutive steps."""
    q_hist = np.asarray(q_hist, dtype=float)
    dq_hist = np.asarray(dq_hist, dtype=float)
    if q_hist.shape != dq_hist.shape:
        raise ValueError("q and dq histories must have the same shape")
    if window < 1:
        raise ValueError("window must be at least 1")
    if len(q_hist) < window:
        return False
    near = (q_hist - np.asarray(lower) <= tol) | (np.asarray(upper) - q_hist <= tol)
    locked = near & (np.abs(dq_hist) < tol)
    run = np.zeros(q_hist.shape[1], dtype=int)
    for row in locked:
        run = np.where(row, run + 1, 0)
        if np.any(run >= window):
            return True
    return False


def detect_collision(h_hist) -> bool:
    """True when any barrier value was negative at an executed step."""
    h = np.asarray(h_hist, dtype=float)
    return bool(h.size and np.any(h < 0))


def detect_singularity(J_hist, threshold: float = 1e-3) -> bool:
    """True when a Jacobian in the history has smallest singular value below
    ``threshold``."""
    return any(min_singular_value(J) < threshold for J in J_hist)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrialConfig:
    seed: int = 0
    horizon: int = 50
    method: str = "parallel_dist_cert"
    K: int = 64
    eta: float = 0.0005
    target_generator: str = "near_cbf_boundary"
    dt: float = 0.01
    replay_path: str | None = None
    delay_steps: int = 0
    target_speed: float = 0.5
    boundary_band: float = 0.02
    start_noise: float = 0.05
    stagnation_window: int = 10
    stagnation_tol: float = 1e-3
    singularity_threshold: float = 1e-3
    fallback: str = "hold"
    task_weight: float = 100.0
    joint_weight: float = 1.0
    feas_tol: float = 1e-6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}'; choose from {', '.join(METHODS)}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.target_generator not in GENERATORS:
            raise ValueError(f"unknown target generator '{self.target_generator}'")
        if self.target_generator == "replay_file" and not self.replay_path:
            raise ValueError("replay_file generator needs replay_path")
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be non-negative")
        if not self.dt > 0 or not self.target_speed > 0:
            raise ValueError("dt and target_speed must be positive")


@dataclass(frozen=True)
class TrialMetrics:
    seed: int
    method: str
    K: int
    eta: float
    mean_error: float
    final_error: float
    solve_time_per_step: float
    self_collision: bool
    singularity: bool
    stagnation: bool
    min_barrier: float = np.nan
    certificate_violations: int = 0
    maximality_violations: int = 0
    applied_steps: int = 0
    reduced_alpha_steps: int = 0  # segment steps applied with alpha < 1


@dataclass(frozen=True)
class Variant:
    method: str
    K: int = 1
    eta: float | None = None

    @classmethod
    def parse(cls, text: str) -> "Variant":
        """``method[:K[:eta]]``, e.g. ``parallel_dist_cert:64:0.0005``."""
        parts = text.strip().split(":")
        method = parts[0]
        if method not in METHODS:
            raise ValueError(f"unknown method '{method}'")
        K = int(parts[1]) if len(parts) > 1 and parts[1] else 1
        eta = float(parts[2]) if len(parts) > 2 and parts[2] else None
        if method.endswith("_cert") and eta is None:
            eta = CertificateParams().eta
        return cls(method, K, eta)

    @property
    def label(self) -> str:
        return f"{self.method}:{self.K}:{'' if self.eta is None else repr(self.eta)}"


@dataclass(frozen=True)
class AblationRow:
    method: str
    K: int
    eta: float | None
    trials: int
    solve_time_mean: float
    solve_time_std: float
    error_mean: float
    error_std: float
    final_error_mean: float
    final_error_std: float
    final_error_median: float
    collisions: int
    singularities: int
    stagnations: int


@dataclass(frozen=True)
class EscapeMcConfig:
    p: float = 0.1
    K_values: tuple[int, ...] = (1, 4, 16, 64)
    trials: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.trials < 1 or any(k < 1 for k in self.K_values):
            raise ValueError("trials and K values must be positive")


# --------------------------------------------------------------------------
# desk scenario


def nominal_posture(model: RobotModel) -> np.ndarray:
    """Hands in front of the chest for the dual-arm desk model; zeros otherwise."""
    q = np.zeros(model.dof)
    try:
        left = [model.joint_index(f"L{i}") for i in range(1, 8)]
        right = [model.joint_index(f"R{i}") for i in range(1, 8)]
    except KeyError:
        return np.clip(q, model.lower, model.upper)
    arm = np.array([-0.3, 0.1, -0.3, -1.9, 0.0, 0.0, 0.0])
    q[left] = arm
    q[right] = arm * np.array([1, -1, -1, 1, -1, 1, -1])
    return np.clip(q, model.lower, model.upper)


def limb_segments(model: RobotModel, frames: Sequence[str]) -> SegmentEmbedding:
    """One segment per tracked frame: the joints on its kinematic chain."""
    segs = [np.flatnonzero(model.chain(model.frame(f).parent)) for f in frames]
    return SegmentEmbedding(tuple(segs), model.dof)


def _start_configuration(model, rng, noise):
    q_nom = nominal_posture(model)
    for _ in range(100):
        q = np.clip(q_nom + rng.uniform(-noise, noise, model.dof), model.lower, model.upper)
        h, _ = barrier_terms(model, q)
        if not h.size or h.min() > 0:
            return q
    return q_nom


def _sphere_surface_point(model, rng, frame, band):
    """Point within ``band`` of the inflated surface of one barrier sphere
    paired with ``frame``, on the side of the body the frame works on."""
    from .safety import _pair_geometry

    pairs = [p for p in model.cbf_pairs if p.tracked_frame == frame]
    pair = pairs[rng.integers(len(pairs))]
    q0 = nominal_posture(model)
    _, _, c, _, rho = _pair_geometry(model, q0, [pair])
    side = 1.0 if frame.endswith("_l") else -1.0 if frame.endswith("_r") else 0.0
    # directions in front of and beside the body
    u = np.array([rng.uniform(0.4, 1.0), side * rng.uniform(0.0, 0.8), rng.uniform(-0.5, 0.5)])
    u /= np.linalg.norm(u)
    return c[0] + (rho[0] + rng.uniform(-band, band)) * u


def _reachable_point(model, rng, frame, q_start):
    q = np.clip(q_start + rng.uniform(-0.6, 0.6, model.dof), model.lower, model.upper)
    return frame_positions(model, q, [frame])[0]


def _piecewise_path(start, waypoints, speed, dt, horizon):
    """Positions along start -> waypoints at constant speed, one per step."""
    pts = [np.asarray(start, dtype=float)] + [np.asarray(w, dtype=float) for w in waypoints]
    out = np.empty((horizon, 3))
    pos = pts[0].copy()
    leg = 1
    for t in range(horizon):
        budget = speed * dt
        while budget > 0 and leg < len(pts):
            d = pts[leg] - pos
            dist = np.linalg.norm(d)
            if dist <= budget:
                pos = pts[leg].copy()
                budget -= dist
                leg += 1
            else:
                pos = pos + d * (budget / dist)
                budget = 0.0
        out[t] = pos
    return out


def read_target_file(path) -> dict[str, np.ndarray]:
    """Replay file: CSV ``step,frame,x,y,z``; returns per-frame (T,3) paths."""
    rows: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["step", "frame", "x", "y", "z"]:
            raise ValueError("target file header must be step,frame,x,y,z")
        for r in reader:
            rows.setdefault(r["frame"], []).append((int(r["step"]), float(r["x"]), float(r["y"]), float(r["z"])))
    out = {}
    for f, vals in rows.items():
        vals.sort()
        out[f] = np.array([v[1:] for v in vals])
    return out


def write_target_file(path, paths: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "frame", "x", "y", "z"])
        for f, P in paths.items():
            for t, p in enumerate(np.asarray(P)):
                w.writerow([t, f, *(repr(float(v)) for v in p)])


def target_paths(model: RobotModel, config: TrialConfig, q_start, rng, frames=HAND_FRAMES) -> dict[str, np.ndarray]:
    """Moving hand targets for one trial, one (horizon, 3) path per frame."""
    if config.target_generator == "replay_file":
        paths = read_target_file(config.replay_path)
        out = {}
        for f in frames:
            if f not in paths:
                raise ValueError(f"replay file has no path for '{f}'")
            P = paths[f]
            idx = np.minimum(np.arange(config.horizon), len(P) - 1)
            out[f] = P[idx]
        return out
    start = frame_positions(model, q_start, list(frames))
    out = {}
    for f, s in zip(frames, start):
        if config.target_generator == "near_cbf_boundary":
            wps = [_sphere_surface_point(model, rng, f, config.boundary_band) for _ in range(3)]
        else:
            wps = [_reachable_point(model, rng, f, q_start) for _ in range(3)]
        out[f] = _piecewise_path(s, wps, config.target_speed, config.dt, config.horizon)
    return out


# --------------------------------------------------------------------------
# method wiring


def controller_config(
    method: str,
    K: int,
    eta: float | None,
    segments: SegmentEmbedding,
    dt: float = 0.01,
    fallback: str = "hold",
    qp: QpSettings | None = None,
    joint_weight: float = 1.0,
    feas_tol: float = 1e-6,
) -> RetargetConfig:
    """RetargetConfig for one ablation variant (not used by global_sqp)."""
    qp = qp or QpSettings.batch_regime()
    cert = CertificateParams(eta=eta if eta is not None else CertificateParams().eta)
    base = RetargetConfig(
        grid=ContinuationGrid.deterministic(K), certificate=cert, dt=dt, qp=qp, fallback=fallback, Wq=joint_weight, feas_tol=feas_tol
    )
    if method == "monolithic":
        return single_shot_config(base, "monolithic")
    if method == "distributed":
        return single_shot_config(base, "distributed", segments)
    if method == "parallel_dist_nocert":
        return replace(base, segments=segments, certificate=replace(cert, enabled=False), require_feasible=True)
    if method == "parallel_mono_cert":
        return replace(base, segments=None)
    if method == "parallel_dist_cert":
        return replace(base, segments=segments)
    raise ValueError(f"method '{method}' is not a QP controller")


class _SqpController:
    """Global IK each control step; the command heads for the solution at
    joint velocity limits."""

    def __init__(self, model: RobotModel, dt: float, settings: SqpSettings | None = None):
        self.model = model
        self.dt = dt
        self.settings = settings or SqpSettings()

    def step(self, q, task: TaskSpec):
        res = global_ik_sqp(self.model, task, q, self.settings)
        lim = self.model.velocity_limits * self.dt
        return np.clip(res.q_star - q, -lim, lim), None


class _QpController:
    def __init__(self, model: RobotModel, config: RetargetConfig):
        self.inner = RetargetController(model, config)
        self.eta = config.certificate.eta if config.certificate.enabled else None
        self.values = config.grid.values

    def step(self, q, task: TaskSpec):
        r = self.inner.step(q, task)
        return r.dq, r


def make_controller(model: RobotModel, config: TrialConfig, segments=None, frames=HAND_FRAMES):
    """Controller for the trial's method; exposes ``step(q, task) -> (dq, result)``."""
    if config.method == "global_sqp":
        return _SqpController(model, config.dt)
    segments = segments or limb_segments(model, frames)
    return _QpController(
        model,
        controller_config(config.method, config.K, config.eta, segments, config.dt, config.fallback, joint_weight=config.joint_weight, feas_tol=config.feas_tol),
    )


def _audit(result, eta) -> tuple[int, int, int]:
    """Certificate soundness and selection maximality of one applied step.

    With the certificate on, an applied candidate must either carry
    ``accepted`` with V_pred <= V - eta, or come from the no-certificate
    fallback (its segment accepted nothing).  Maximality: no accepted
    candidate has a larger alpha than the applied one, except where the
    composed-step recheck overrode the selection.
    """
    cert_bad = max_bad = applied = 0
    overridden = "compose_fallback" in result.flags
    for cands, a in zip(result.candidates, result.segment_alphas):
        j = None if a is None else int(np.flatnonzero(cands.alpha == a)[0])
        acc = np.flatnonzero(cands.accepted)
        if j is not None:
            applied += 1
            if eta is not None:
                if cands.accepted[j]:
                    cert_bad += int(not cands.V_pred[j] <= cands.V - eta)
                else:
                    cert_bad += int(len(acc) > 0)
        if len(acc) and not overridden and (j is None or acc.max() > j):
            max_bad += 1
    return cert_bad, max_bad, applied


def run_trial(config: TrialConfig, model: RobotModel, controller=None, frames=HAND_FRAMES) -> TrialMetrics:
    """50-step closed-loop tracking of moving hand targets.

    The plant integrates the commanded increment, limited to the joint range.
    With ``delay_steps = d`` the controller sees the configuration from d
    steps earlier (sensing and actuation latency).
    """
    rng = np.random.default_rng(config.seed)
    q = _start_configuration(model, rng, config.start_noise)
    paths = target_paths(model, config, q, rng, frames)
    if controller is None:
        controller = make_controller(model, config, frames=frames)
    eta = getattr(controller, "eta", None)

    hands = [(model.frame(f).parent, model.frame(f).offset) for f in frames]
    seen = [q.copy()] * (config.delay_steps + 1)
    q_hist, dq_hist, h_hist, J_hist, errs, times = [], [], [], [], [], []
    cert_bad = max_bad = applied = reduced = 0
    h0, _ = barrier_terms(model, q)
    h_hist.append(h0)
    for t in range(config.horizon):
        task = TaskSpec.from_positions({f: paths[f][t] for f in frames}, weight=config.task_weight)
        observed = seen[0]
        t0 = time.perf_counter()
        dq, result = controller.step(observed, task)
        times.append(time.perf_counter() - t0)
        if result is not None:
            c, mx, ap = _audit(result, eta)
            cert_bad, max_bad, applied = cert_bad + c, max_bad + mx, applied + ap
            reduced += sum(a is not None and a < 1.0 for a in result.segment_alphas)
        q = np.clip(q + dq, model.lower, model.upper)
        seen = seen[1:] + [q.copy()]
        pos, jac = attached_points(model, q, hands)
        h, _ = barrier_terms(model, q)
        errs.append(np.linalg.norm(pos - np.stack([paths[f][t] for f in frames]), axis=1).mean())
        q_hist.append(q.copy())
        dq_hist.append(dq.copy())
        h_hist.append(h)
        J_hist.extend(jac)
    return TrialMetrics(
        seed=config.seed,
        method=config.method,
        K=config.K,
        eta=config.eta,
        mean_error=float(np.mean(errs)),
        final_error=float(errs[-1]),
        solve_time_per_step=float(np.mean(times)),
        self_collision=detect_collision(h_hist),
        singularity=detect_singularity(J_hist, config.singularity_threshold),
        stagnation=detect_stagnation(q_hist, dq_hist, model.lower, model.upper, config.stagnation_window, config.stagnation_tol),
        min_barrier=float(np.min(np.concatenate(h_hist))) if len(h0) else np.nan,
        certificate_violations=cert_bad,
        maximality_violations=max_bad,
        applied_steps=applied,
        reduced_alpha_steps=reduced,
    )


# --------------------------------------------------------------------------
# ablation


def aggregate(variant: Variant, metrics: Sequence[TrialMetrics]) -> AblationRow:
    t = np.array([m.solve_time_per_step for m in metrics])
    e = np.array([m.mean_error for m in metrics])
    f = np.array([m.final_error for m in metrics])
    return AblationRow(
        variant.method,
        variant.K,
        variant.eta,
        len(metrics),
        float(t.mean()),
        float(t.std()),
        float(e.mean()),
        float(e.std()),
        float(f.mean()),
        float(f.std()),
        float(np.median(f)),
        sum(m.self_collision for m in metrics),
        sum(m.singularity for m in metrics),
        sum(m.stagnation for m in metrics),
    )


def run_ablation(
    model: RobotModel,
    trials: int,
    variants: Iterable[Variant | str],
    base: TrialConfig | None = None,
    out_dir=None,
    progress: Callable[[str], None] | None = None,
) -> tuple[list[AblationRow], list[TrialMetrics]]:
    """Paired-seed trials (seed = base.seed + i) for every variant."""
    base = base or TrialConfig()
    variants = [Variant.parse(v) if isinstance(v, str) else v for v in variants]
    rows, all_metrics = [], []
    for v in variants:
        cfg0 = replace(base, method=v.method, K=v.K, eta=v.eta if v.eta is not None else base.eta)
        metrics = []
        for i in range(trials):
            cfg = replace(cfg0, seed=base.seed + i)
            metrics.append(run_trial(cfg, model))
        if metrics:
            rows.append(aggregate(v, metrics))
        all_metrics.extend(metrics)
        if progress:
            progress(f"{v.label}: {trials} trials")
    if out_dir is not None:
        write_reports(out_dir, rows, all_metrics)
    return rows, all_metrics


def metrics_csv(metrics: Sequence[TrialMetrics], timing: bool = True) -> str:
    buf = io.StringIO()
    names = [f.name for f in dataclasses.fields(TrialMetrics) if timing or f.name != "solve_time_per_step"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for m in metrics:
        w.writerow([getattr(m, n) for n in names])
    return buf.getvalue()


def ablation_markdown(rows: Sequence[AblationRow], timing: bool = True) -> str:
    head = ["Method", "Batch K", "eta", "Solve Time [ms]", "Mean Hand Error [mm]", "Final Hand Error [mm]", "Self Collision", "Singularity", "Stagnation"]
    if not timing:
        head.remove("Solve Time [ms]")
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [
            METHOD_LABELS[r.method],
            str(r.K),
            "--" if r.eta is None or r.method in ("global_sqp", "monolithic", "distributed", "parallel_dist_nocert") else f"{r.eta:g}",
        ]
        if timing:
            cells.append(f"{r.solve_time_mean * 1e3:.2f} ± {r.solve_time_std * 1e3:.2f}")
        cells += [
            f"{r.error_mean * 1e3:.2f} ± {r.error_std * 1e3:.2f}",
            f"{r.final_error_mean * 1e3:.2f} ± {r.final_error_std * 1e3:.2f}",
            f"{r.collisions}/{r.trials}",
            f"{r.singularities}/{r.trials}",
            f"{r.stagnations}/{r.trials}",
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_reports(out_dir, rows, metrics) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(metrics), encoding="utf-8")
    (out / "ablation.md").write_text(ablation_markdown(rows), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in dataclasses.fields(AblationRow)]
    w.writerow(names)
    for r in rows:
        w.writerow([getattr(r, n) for n in names])
    (out / "ablation.csv").write_text(buf.getvalue(), encoding="utf-8")


# --------------------------------------------------------------------------
# escape law and coverage


def escape_mc(config: EscapeMcConfig) -> list[tuple[int, float, float]]:
    """(K, empirical escape frequency, 1 - (1 - p)^K) per K.

    Each trial draws K independent candidate outcomes, each escaping with
    probability p; the trial escapes when any candidate does.
    """
    rng = np.random.default_rng(config.seed)
    out = []
    for K in config.K_values:
        hits = 0
        done = 0
        chunk = max(1, min(config.trials, 4_000_000 // K))
        while done < config.trials:
            n = min(chunk, config.trials - done)
            hits += int(np.count_nonzero((rng.random((n, K)) < config.p).any(axis=1)))
            done += n
        out.append((K, hits / config.trials, 1.0 - (1.0 - config.p) ** K))
    return out


@dataclass(frozen=True)
class CoverageReport:
    time_per_candidate_whole: float
    time_per_candidate_dist: float
    K_whole: int
    K_dist: int
    budget: float


def coverage_accounting(model: RobotModel, budget: float = 0.004, K_probe: int = 256, steps: int = 20, seed: int = 0, frames=HAND_FRAMES) -> CoverageReport:
    """Candidates affordable within a per-step wall-clock budget for the whole
    model versus per-limb segments (candidates counted per alpha)."""
    rng = np.random.default_rng(seed)
    q = _start_configuration(model, rng, 0.05)
    x = frame_positions(model, q, list(frames))
    task = TaskSpec.from_positions({f: p + rng.uniform(-0.05, 0.05, 3) for f, p in zip(frames, x)})
    segs = limb_segments(model, frames)
    per = {}
    for name, cfg in (
        ("whole", controller_config("parallel_mono_cert", K_probe, None, segs)),
        ("dist", controller_config("parallel_dist_cert", K_probe, None, segs)),
    ):
        ctl = RetargetController(model, cfg)
        ctl.step(q, task)
        t0 = time.perf_counter()
        for _ in range(steps):
            ctl.step(q, task)
        per[name] = (time.perf_counter() - t0) / steps / K_probe
    return CoverageReport(per["whole"], per["dist"], int(budget / per["whole"]), int(budget / per["dist"]), budget)
