"""Keypoint robustification (confidence gating, jump rejection, multi-body
rejection) and scaling of human keypoints into robot task targets."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

ANCHOR_POINT = "torso"


@dataclass(frozen=True, eq=False)
class Keypoint:
    body_id: int
    point_id: str
    position: np.ndarray
    confidence: float = 1.0
    timestamp: float = 0.0

    @property
    def valid(self) -> bool:
        return bool(np.all(np.isfinite(self.position)))


@dataclass(frozen=True)
class FilterParams:
    alpha_jr: float = 0.4
    lambda_jr: float = 0.05
    tau_jr: float = 0.3
    conf_min: float = 0.5
    body_switch_max: float = 0.5

    def __post_init__(self):
        if not 0 < self.alpha_jr <= 1:
            raise ValueError("alpha_jr must lie in (0, 1]")
        if not 0 < self.lambda_jr < 1:
            raise ValueError("lambda_jr must lie in (0, 1)")
        if not self.lambda_jr < self.alpha_jr:
            raise ValueError("lambda_jr must be smaller than alpha_jr")
        if not self.tau_jr > 0:
            raise ValueError("tau_jr must be positive")
        if not 0 <= self.conf_min <= 1:
            raise ValueError("conf_min must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class FilterState:
    last: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initialized: bool = False
    last_body: int | None = None


@dataclass(frozen=True, eq=False)
class ScaleSpec:
    beta: float
    anchor_human: np.ndarray
    anchor_robot: np.ndarray

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")


def _usable(sample: Keypoint, params: FilterParams) -> bool:
    return sample.valid and sample.confidence >= params.conf_min


def filter_step(state: FilterState, sample: Keypoint, params: FilterParams = FilterParams()):
    """Advance one keypoint stream by a sample.

    Returns the new state and the filtered position.  Invalid samples (NaN or
    low confidence) hold the previous value; a sample further than ``tau_jr``
    from it is blended with ``lambda_jr``; anything else with ``alpha_jr``.
    The first usable sample initializes the filter directly.
    """
    if not _usable(sample, params):
        return state, state.last.copy()
    p = np.asarray(sample.position, dtype=float)
    if not state.initialized:
        new = p.copy()
    else:
        prev = state.last
        w = params.lambda_jr if np.linalg.norm(p - prev) > params.tau_jr else params.alpha_jr
        new = w * p + (1.0 - w) * prev
    return replace(state, last=new, initialized=True, last_body=sample.body_id), new.copy()


def select_body(candidates: Mapping[int, Iterable[Keypoint]], state: FilterState, params: FilterParams = FilterParams()):
    """Pick the demonstrator among detected bodies by torso-anchor proximity.

    ``state`` is the filter state of the tracked anchor.  Before any body has
    been tracked the body nearest the sensor origin wins; afterwards the
    nearest body to the previous anchor wins unless it is further than
    ``body_switch_max``, in which case ``None`` is returned.
    """
    best, best_d = None, math.inf
    reference = state.last if state.initialized else np.zeros(3)
    for body_id, points in candidates.items():
        anchor = next((kp for kp in points if kp.point_id == ANCHOR_POINT and _usable(kp, params)), None)
        if anchor is None:
            continue
        d = float(np.linalg.norm(np.asarray(anchor.position, dtype=float) - reference))
        if d < best_d or (d == best_d and best is not None and body_id < best):
            best, best_d = body_id, d
    if best is None:
        return None
    if state.initialized and best_d > params.body_switch_max:
        return None
    return best


def scale_command(p_t, spec: ScaleSpec) -> np.ndarray:
    """x_d = beta (p_t - p_c) + x_c."""
    return spec.beta * (np.asarray(p_t, dtype=float) - np.asarray(spec.anchor_human, dtype=float)) + np.asarray(
        spec.anchor_robot, dtype=float
    )


class KeypointTracker:
    """Streams frames of multi-body detections into filtered keypoints."""

    def __init__(self, params: FilterParams = FilterParams()):
        self.params = params
        self.states: dict[str, FilterState] = defaultdict(FilterState)

    def update(self, frame: Mapping[int, list[Keypoint]]) -> dict[str, np.ndarray]:
        body = select_body(frame, self.states[ANCHOR_POINT], self.params)
        out = {}
        points = {kp.point_id: kp for kp in frame.get(body, [])} if body is not None else {}
        for point_id in set(self.states) | set(points):
            state = self.states[point_id]
            if point_id in points:
                state, value = filter_step(state, points[point_id], self.params)
                self.states[point_id] = state
            else:
                value = state.last.copy()
            if state.initialized:
                out[point_id] = value
        return out


def read_keypoint_csv(path) -> list[tuple[float, dict[int, list[Keypoint]]]]:
    """Read ``t,body_id,point_id,x,y,z,confidence`` rows grouped into frames."""
    frames: dict[float, dict[int, list[Keypoint]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["t", "body_id", "point_id", "x", "y", "z", "confidence"]
        if reader.fieldnames != expected:
            raise ValueError(f"keypoint file header must be {','.join(expected)}")
        last_t = -math.inf
        for row in reader:
            t = float(row["t"])
            if t < last_t:
                raise ValueError("keypoint rows must be sorted by t")
            last_t = t
            kp = Keypoint(
                int(row["body_id"]),
                row["point_id"],
                np.array([float(row["x"]), float(row["y"]), float(row["z"])]),
                float(row["confidence"]),
                t,
            )
            frames.setdefault(t, {}).setdefault(kp.body_id, []).append(kp)
    return sorted(frames.items())


def write_keypoint_csv(path, rows: Iterable[Keypoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "body_id", "point_id", "x", "y", "z", "confidence"])
        for kp in rows:
            x, y, z = (repr(float(v)) if np.isfinite(v) else "NaN" for v in kp.position)
            w.writerow([repr(float(kp.timestamp)), kp.body_id, kp.point_id, x, y, z, repr(float(kp.confidence))])
