"""Controller configuration files.

A configuration is a YAML mapping.  Every section is optional; omitted keys
take the library defaults.  Example::

    grid: {K: 64, mode: deterministic}     # or {mode: uniform, K: 64, seed: 3}
                                           # or {mode: fixed, values: [0.5, 1.0]}
    certificate: {eta: 0.0005, eps_q: 1.0e-4, eps_V: 1.0e-6, enabled: true}
    gamma: 0.5
    dt: 0.01
    weights: {task: 100.0, joint: 1.0}     # defaults: task 1, joint 0.01
    fallback: hold                         # default: best_decrease
    segments:                              # joint names per segment
      - [torso_yaw, L1, L2, L3, L4, L5, L6, L7]
      - [torso_yaw, R1, R2, R3, R4, R5, R6, R7]
    qp: {regime: batch, max_iter: 50}
    retarget:                              # only used by the keypoint pipeline
      beta: 0.5
      anchor_frame: torso
      points: {wrist_l: hand_l, wrist_r: hand_r}
      filter: {alpha_jr: 0.4, lambda_jr: 0.05, tau_jr: 0.3, conf_min: 0.5}
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .perception import FilterParams
from .qpsolve import QpSettings
from .retarget import CertificateParams, ContinuationGrid, RetargetConfig, SegmentEmbedding
from .rigidbody import RobotModel


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration files."""


@dataclass(frozen=True)
class PipelineConfig:
    """Keypoint-to-target mapping used by the retargeting pipeline."""

    beta: float = 1.0
    anchor_frame: str = "torso"
    points: dict = field(default_factory=dict)  # keypoint id -> robot frame
    filter: FilterParams = field(default_factory=FilterParams)


@dataclass(frozen=True)
class ControllerFile:
    controller: RetargetConfig
    task_weight: float = 1.0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)


_TOP_KEYS = {"grid", "certificate", "gamma", "dt", "weights", "fallback", "segments", "qp", "feas_tol", "retarget"}


def _section(data: dict, key: str) -> dict:
    sec = data.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return sec


def _known(sec: dict, allowed, where: str) -> None:
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(extra))}")


def _grid(sec: dict) -> ContinuationGrid:
    _known(sec, {"K", "mode", "values", "seed"}, "grid")
    mode = sec.get("mode", "deterministic")
    if mode == "fixed":
        if "values" not in sec:
            raise ConfigError("fixed grid needs 'values'")
        return ContinuationGrid.fixed(sec["values"])
    K = int(sec.get("K", 64))
    if mode == "deterministic":
        return ContinuationGrid.deterministic(K)
    if mode == "uniform":
        return ContinuationGrid.uniform(K, np.random.default_rng(sec.get("seed", 0)))
    raise ConfigError(f"unknown grid mode '{mode}'")


def _qp(sec: dict) -> QpSettings:
    names = {f.name for f in fields(QpSettings)}
    _known(sec, names | {"regime"}, "qp")
    regime = sec.get("regime", "batch")
    overrides = {k: v for k, v in sec.items() if k != "regime"}
    if regime == "batch":
        return QpSettings.batch_regime(**overrides)
    if regime == "cpu":
        return QpSettings.cpu_regime(**overrides)
    if regime == "default":
        return QpSettings(**overrides)
    raise ConfigError(f"unknown qp regime '{regime}'")


def _segments(raw, model: RobotModel | None) -> SegmentEmbedding | None:
    if raw is None:
        return None
    if model is None:
        raise ConfigError("segments given by joint name need a model")
    if not isinstance(raw, list) or not all(isinstance(s, list) for s in raw):
        raise ConfigError("'segments' must be a list of joint-name lists")
    try:
        idx = tuple(np.array([model.joint_index(name) for name in seg], dtype=int) for seg in raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"segments: {exc}") from exc
    return SegmentEmbedding(idx, model.dof)


def parse_config(data, model: RobotModel | None = None) -> ControllerFile:
    """Build a ControllerFile from an already-parsed mapping."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    _known(data, _TOP_KEYS, "configuration")
    try:
        cert_sec = _section(data, "certificate")
        _known(cert_sec, {"eta", "eps_q", "eps_V", "enabled"}, "certificate")
        weights = _section(data, "weights")
        _known(weights, {"task", "joint"}, "weights")
        base = RetargetConfig()
        controller = RetargetConfig(
            grid=_grid(_section(data, "grid")),
            certificate=CertificateParams(**{k: (bool(v) if k == "enabled" else float(v)) for k, v in cert_sec.items()}),
            segments=_segments(data.get("segments"), model),
            Wq=float(weights.get("joint", base.Wq)),
            gamma=float(data.get("gamma", base.gamma)),
            dt=float(data.get("dt", base.dt)),
            qp=_qp(_section(data, "qp")),
            feas_tol=float(data.get("feas_tol", base.feas_tol)),
            fallback=str(data.get("fallback", base.fallback)),
        )
        task_weight = float(weights.get("task", 1.0))
        if not task_weight > 0:
            raise ConfigError("task weight must be positive")
        ret = _section(data, "retarget")
        _known(ret, {"beta", "anchor_frame", "points", "filter"}, "retarget")
        filt = _section(ret, "filter")
        _known(filt, {f.name for f in fields(FilterParams)}, "retarget.filter")
        pipeline = PipelineConfig(
            beta=float(ret.get("beta", 1.0)),
            anchor_frame=str(ret.get("anchor_frame", "torso")),
            points=dict(ret.get("points") or {}),
            filter=FilterParams(**{k: float(v) for k, v in filt.items()}),
        )
        if not pipeline.beta > 0:
            raise ConfigError("retarget.beta must be positive")
        if model is not None:
            for frame in [pipeline.anchor_frame, *pipeline.points.values()] if ret else []:
                model.frame(frame)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return ControllerFile(controller, task_weight, pipeline)


def load_config(path, model: RobotModel | None = None) -> ControllerFile:
    """Read a YAML controller configuration file."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, model)


__all__ = ["ConfigError", "ControllerFile", "PipelineConfig", "load_config", "parse_config"]
