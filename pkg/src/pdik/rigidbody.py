"""Fixed-base kinematic trees: model description, forward kinematics and
point Jacobians for revolute chains."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kinematics_kernel as _kernel

BASE = -1


class ModelError(ValueError):
    """Invalid model description."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field_name = field_name


class TopologyError(ModelError):
    pass


class LimitError(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("Pose needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    parent: int
    axis: np.ndarray
    origin_rotation: np.ndarray
    origin_translation: np.ndarray
    limits: tuple[float, float]
    velocity_limit: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ModelError(f"joint '{self.name}' axis must be a unit 3-vector", field_name="axis")
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if not lo < hi:
            raise LimitError(f"joint '{self.name}' has q_min >= q_max", field_name="limits")
        if not self.velocity_limit > 0:
            raise LimitError(f"joint '{self.name}' velocity limit must be positive", field_name="vel_limit")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin_rotation", np.asarray(self.origin_rotation, dtype=float))
        object.__setattr__(self, "origin_translation", np.asarray(self.origin_translation, dtype=float))
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True, eq=False)
class Frame:
    """A named point rigidly attached to a joint (or the base)."""

    name: str
    parent: int
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))


@dataclass(frozen=True, eq=False)
class RobotModel:
    joints: tuple[JointSpec, ...]
    frames: dict[str, Frame]
    spheres: tuple = ()
    cbf_pairs: tuple = ()
    name: str = "robot"
    # ancestors[i, j] is True when joint j lies on the chain from the base to joint i (inclusive)
    ancestors: np.ndarray = field(init=False, repr=False, compare=False)
    _axes: np.ndarray = field(init=False, repr=False, compare=False)
    _limits: np.ndarray = field(init=False, repr=False, compare=False)
    _velocity: np.ndarray = field(init=False, repr=False, compare=False)
    _packed: tuple = field(init=False, repr=False, compare=False)  # arrays for the compiled kernel

    def __post_init__(self):
        n = len(self.joints)
        if n < 1:
            raise ModelError("model needs at least one actuated joint")
        anc = np.zeros((n, n), dtype=bool)
        for i, joint in enumerate(self.joints):
            if joint.parent != BASE and not 0 <= joint.parent < i:
                raise TopologyError(f"joint '{joint.name}' (index {i}) has parent {joint.parent}; parents must precede children")
            if joint.parent != BASE:
                anc[i] = anc[joint.parent]
            anc[i, i] = True
            if not (np.all(np.isfinite(joint.origin_translation)) and np.all(np.isfinite(joint.origin_rotation))):
                raise ModelError(f"joint '{joint.name}' has a non-finite origin")
        for frame in self.frames.values():
            if frame.parent != BASE and not 0 <= frame.parent < n:
                raise TopologyError(f"frame '{frame.name}' refers to missing joint {frame.parent}")
            if not np.all(np.isfinite(frame.offset)):
                raise ModelError(f"frame '{frame.name}' has a non-finite offset")
        names = [j.name for j in self.joints]
        if len(set(names)) != n:
            raise ModelError("joint names must be unique")
        anc.setflags(write=False)
        object.__setattr__(self, "ancestors", anc)
        axes = np.array([j.axis for j in self.joints], dtype=float)
        axes.setflags(write=False)
        object.__setattr__(self, "_axes", axes)
        # read-only caches; these are read on every control step
        limits = np.array([j.limits for j in self.joints], dtype=float).T.copy()
        velocity = np.array([j.velocity_limit for j in self.joints], dtype=float)
        limits.setflags(write=False)
        velocity.setflags(write=False)
        object.__setattr__(self, "_limits", limits)
        object.__setattr__(self, "_velocity", velocity)
        packed = (
            np.array([j.parent for j in self.joints], dtype=np.int64),
            np.ascontiguousarray(axes),
            np.array([j.origin_rotation for j in self.joints], dtype=float),
            np.array([j.origin_translation for j in self.joints], dtype=float),
            np.ascontiguousarray(anc),
        )
        object.__setattr__(self, "_packed", packed)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    @property
    def lower(self) -> np.ndarray:
        return self._limits[0]

    @property
    def upper(self) -> np.ndarray:
        return self._limits[1]

    @property
    def axes(self) -> np.ndarray:
        """Joint axes in their local frames, (n,3)."""
        return self._axes

    @property
    def velocity_limits(self) -> np.ndarray:
        return self._velocity

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(f"unknown joint '{name}'")

    def chain(self, parent: int) -> np.ndarray:
        """Boolean mask of joints that move a point attached to ``parent``."""
        if parent == BASE:
            return np.zeros(self.dof, dtype=bool)
        return self.ancestors[parent]

    def frame(self, name: str) -> Frame:
        try:
            return self.frames[name]
        except KeyError:
            raise KeyError(f"unknown frame '{name}'") from None

    def sphere(self, name: str):
        for s in self.spheres:
            if s.name == name:
                return s
        raise KeyError(f"unknown sphere '{name}'")


# --------------------------------------------------------------------------
# rotations


def rpy_matrix(rpy: Sequence[float]) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


# --------------------------------------------------------------------------
# kinematics


def check_configuration(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.dof,):
        raise ValueError(f"configuration has shape {q.shape}, model has {model.dof} joints")
    if not (np.abs(q) <= 1e3).all():  # also false for NaN
        if not np.all(np.isfinite(q)):
            raise ValueError("configuration contains non-finite entries")
        raise ValueError("configuration outside the +/-1e3 rad sanity bound")
    return q


def joint_poses(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """World rotation (n,3,3) and origin (n,3) of every joint frame, after
    applying the joint's own rotation."""
    q = check_configuration(model, q)
    n = model.dof
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    for i, joint in enumerate(model.joints):
        local = joint.origin_rotation @ axis_angle_matrix(joint.axis, q[i])
        if joint.parent == BASE:
            R[i] = local
            p[i] = joint.origin_translation
        else:
            Rp = R[joint.parent]
            R[i] = Rp @ local
            p[i] = p[joint.parent] + Rp @ joint.origin_translation
    return R, p


def _attached_point(R, p, parent: int, offset: np.ndarray) -> np.ndarray:
    if parent == BASE:
        return offset.copy()
    return p[parent] + R[parent] @ offset


def _point_jacobian(model: RobotModel, R, p, parent: int, point: np.ndarray) -> np.ndarray:
    J = np.zeros((3, model.dof))
    if parent == BASE:
        return J
    idx = np.flatnonzero(model.ancestors[parent])
    axes = np.einsum("nij,nj->ni", R[idx], np.stack([model.joints[i].axis for i in idx]))
    J[:, idx] = np.cross(axes, point - p[idx]).T
    return J


def forward_kinematics(model: RobotModel, q) -> dict[str, Pose]:
    R, p = joint_poses(model, q)
    out = {}
    for name, frame in model.frames.items():
        if frame.parent == BASE:
            out[name] = Pose(np.eye(3), frame.offset.copy())
        else:
            out[name] = Pose(R[frame.parent], _attached_point(R, p, frame.parent, frame.offset))
    return out


def point_jacobian(model: RobotModel, q, frame: str) -> np.ndarray:
    """3 x n position Jacobian of a frame origin."""
    f = model.frame(frame)
    R, p = joint_poses(model, q)
    return _point_jacobian(model, R, p, f.parent, _attached_point(R, p, f.parent, f.offset))


def attached_points(model: RobotModel, q, attachments: Iterable[tuple[int, np.ndarray]]):
    """Positions (k,3) and Jacobians (k,3,n) of points attached to joints.

    One kinematic pass serves all points; used by the task and barrier code.
    """
    attachments = list(attachments)
    n = model.dof
    if not attachments:
        return np.zeros((0, 3)), np.zeros((0, 3, n))
    q = check_configuration(model, q)
    parents = np.array([parent for parent, _ in attachments], dtype=np.int64)
    offsets = np.array([off for _, off in attachments], dtype=float).reshape(-1, 3)
    return _kernel.points(*model._packed, q, parents, offsets, True)


def frame_positions(model: RobotModel, q, frames: Sequence[str]) -> np.ndarray:
    """World positions (k,3) of named frames."""
    q = check_configuration(model, q)
    fs = [model.frame(name) for name in frames]
    parents = np.array([f.parent for f in fs], dtype=np.int64)
    offsets = np.array([f.offset for f in fs], dtype=float).reshape(-1, 3)
    return _kernel.points(*model._packed, q, parents, offsets, False)[0]


def min_singular_value(J) -> float:
    J = np.asarray(J, dtype=float)
    if J.size == 0:
        return 0.0
    return float(np.linalg.svd(J, compute_uv=False).min())


# --------------------------------------------------------------------------
# model file

_BLOCK_RE = re.compile(r"(\w+)\s*\{([^}]*)\}", re.S)
_ENTRY_RE = re.compile(r"(\w+)\s*=\s*(\[[^\]]*\]|[^,;\s\[\]]+)")
_BLOCK_FIELDS = {
    "robot": {"name"},
    "joint": {"name", "parent", "axis", "origin_xyz", "origin_rpy", "limits", "vel_limit", "type"},
    "frame": {"name", "parent_joint", "offset_xyz"},
    "sphere": {"name", "parent_joint", "offset_xyz", "radius"},
    "cbf_pair": {"frame", "sphere", "limb_radius", "margin"},
}
_REQUIRED = {
    "joint": {"name", "parent", "axis", "limits", "vel_limit"},
    "frame": {"name", "parent_joint"},
    "sphere": {"name", "parent_joint", "radius"},
    "cbf_pair": {"frame", "sphere"},
}


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("#", 1)[0] for line in text.splitlines())


def _vector(raw: str, size: int, line: int, key: str) -> list[float]:
    if not (raw.startswith("[") and raw.endswith("]")):
        raise ModelError(f"expected a list of {size} numbers", line, key)
    parts = [s for s in re.split(r"[,\s]+", raw[1:-1].strip()) if s]
    if len(parts) != size:
        raise ModelError(f"expected {size} numbers, got {len(parts)}", line, key)
    try:
        return [float(s) for s in parts]
    except ValueError:
        raise ModelError(f"non-numeric entry in {raw}", line, key) from None


def _scalar(raw: str, line: int, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ModelError(f"expected a number, got '{raw}'", line, key) from None


def _parse_blocks(text: str):
    clean = _strip_comments(text)
    pos = 0
    for m in _BLOCK_RE.finditer(clean):
        gap = clean[pos : m.start()]
        if gap.strip():
            line = clean.count("\n", 0, pos + len(gap) - len(gap.lstrip())) + 1
            raise ModelError(f"unexpected text '{gap.strip()[:30]}'", line)
        pos = m.end()
        kind = m.group(1)
        line = clean.count("\n", 0, m.start()) + 1
        if kind not in _BLOCK_FIELDS:
            raise ModelError(f"unknown block '{kind}'", line)
        body = m.group(2)
        entries = {}
        consumed = _ENTRY_RE.sub("", body)
        if re.sub(r"[,;\s]", "", consumed):
            raise ModelError(f"malformed entries in '{kind}' block", line)
        for em in _ENTRY_RE.finditer(body):
            key = em.group(1)
            entry_line = line + body.count("\n", 0, em.start())
            if key not in _BLOCK_FIELDS[kind]:
                raise ModelError(f"unknown field in '{kind}' block", entry_line, key)
            entries[key] = (em.group(2), entry_line)
        missing = _REQUIRED.get(kind, set()) - entries.keys()
        if missing:
            raise ModelError(f"'{kind}' block missing {sorted(missing)}", line)
        yield kind, line, entries
    tail = clean[pos:]
    if tail.strip():
        raise ModelError(f"unexpected text '{tail.strip()[:30]}'", clean.count("\n", 0, pos) + 1)


def load_model(text: str) -> RobotModel:
    """Parse a model description (see README for the block schema)."""
    from .safety import CbfPair, CollisionSphere

    joints: list[JointSpec] = []
    names: dict[str, int] = {}
    frames: dict[str, Frame] = {}
    spheres: list = []
    pairs: list = []
    robot_name = "robot"

    def parent_ref(raw: str, line: int, key: str, own: int | None = None) -> int:
        if raw == "base":
            return BASE
        if re.fullmatch(r"-?\d+", raw):
            idx = int(raw)
        elif raw in names:
            idx = names[raw]
        else:
            raise TopologyError(f"unknown parent '{raw}' (parents must be declared first)", line, key)
        if own is not None and idx >= own:
            raise TopologyError(f"parent index {idx} does not precede joint index {own}", line, key)
        if not 0 <= idx < len(joints):
            raise TopologyError(f"parent index {idx} out of range", line, key)
        return idx

    for kind, line, e in _parse_blocks(text):
        get = lambda k: e[k][0]  # noqa: E731
        ln = lambda k: e[k][1]  # noqa: E731
        if kind == "robot":
            robot_name = get("name") if "name" in e else robot_name
        elif kind == "joint":
            name = get("name")
            if name in names:
                raise ModelError(f"duplicate joint '{name}'", line, "name")
            if e.get("type", ("revolute",))[0] != "revolute":
                raise ModelError("only revolute joints are supported", ln("type"), "type")
            index = len(joints)
            parent = parent_ref(get("parent"), ln("parent"), "parent", own=index)
            axis = np.array(_vector(get("axis"), 3, ln("axis"), "axis"))
            xyz = _vector(get("origin_xyz"), 3, ln("origin_xyz"), "origin_xyz") if "origin_xyz" in e else [0.0] * 3
            rpy = _vector(get("origin_rpy"), 3, ln("origin_rpy"), "origin_rpy") if "origin_rpy" in e else [0.0] * 3
            limits = _vector(get("limits"), 2, ln("limits"), "limits")
            if not limits[0] < limits[1]:
                raise LimitError("q_min must be below q_max", ln("limits"), "limits")
            vel = _scalar(get("vel_limit"), ln("vel_limit"), "vel_limit")
            if not vel > 0:
                raise LimitError("velocity limit must be positive", ln("vel_limit"), "vel_limit")
            if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
                raise ModelError("axis must have unit norm", ln("axis"), "axis")
            if not all(np.isfinite(xyz)):
                raise ModelError("origin must be finite", ln("origin_xyz"), "origin_xyz")
            joints.append(JointSpec(name, parent, axis, rpy_matrix(rpy), np.array(xyz), tuple(limits), vel))
            names[name] = index
        elif kind == "frame":
            name = get("name")
            if name in frames:
                raise ModelError(f"duplicate frame '{name}'", line, "name")
            parent = parent_ref(get("parent_joint"), ln("parent_joint"), "parent_joint")
            off = _vector(get("offset_xyz"), 3, ln("offset_xyz"), "offset_xyz") if "offset_xyz" in e else [0.0] * 3
            frames[name] = Frame(name, parent, np.array(off))
        elif kind == "sphere":
            parent = parent_ref(get("parent_joint"), ln("parent_joint"), "parent_joint")
            off = _vector(get("offset_xyz"), 3, ln("offset_xyz"), "offset_xyz") if "offset_xyz" in e else [0.0] * 3
            radius = _scalar(get("radius"), ln("radius"), "radius")
            if not radius > 0:
                raise ModelError("sphere radius must be positive", ln("radius"), "radius")
            spheres.append(CollisionSphere(get("name"), parent, np.array(off), radius))
        elif kind == "cbf_pair":
            limb = _scalar(get("limb_radius"), ln("limb_radius"), "limb_radius") if "limb_radius" in e else 0.0
            margin = _scalar(get("margin"), ln("margin"), "margin") if "margin" in e else 0.0
            if limb < 0 or margin < 0:
                raise ModelError("limb_radius and margin must be non-negative", line)
            pairs.append(CbfPair(get("frame"), get("sphere"), limb, margin))

    sphere_names = {s.name for s in spheres}
    for pair in pairs:
        if pair.tracked_frame not in frames:
            raise ModelError(f"cbf_pair refers to unknown frame '{pair.tracked_frame}'")
        if pair.sphere not in sphere_names:
            raise ModelError(f"cbf_pair refers to unknown sphere '{pair.sphere}'")
    return RobotModel(tuple(joints), frames, tuple(spheres), tuple(pairs), robot_name)


def load_model_file(path) -> RobotModel:
    with open(path, encoding="utf-8") as fh:
        return load_model(fh.read())
