"""Compiled forward kinematics for attached points.

Same recursion as ``rigidbody.joint_poses`` (origin transform, then rotation
about the local joint axis) fused with the geometric point Jacobian, so one
call per control step evaluates every task and barrier point.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def joint_frames(parents, axes, origin_R, origin_t, q):
    n = q.shape[0]
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    local = np.empty((3, 3))
    rot = np.empty((3, 3))
    for i in range(n):
        x, y, z = axes[i, 0], axes[i, 1], axes[i, 2]
        c, s = math.cos(q[i]), math.sin(q[i])
        t = 1.0 - c
        rot[0, 0] = t * x * x + c
        rot[0, 1] = t * x * y - s * z
        rot[0, 2] = t * x * z + s * y
        rot[1, 0] = t * x * y + s * z
        rot[1, 1] = t * y * y + c
        rot[1, 2] = t * y * z - s * x
        rot[2, 0] = t * x * z - s * y
        rot[2, 1] = t * y * z + s * x
        rot[2, 2] = t * z * z + c
        for a in range(3):
            for b in range(3):
                local[a, b] = origin_R[i, a, 0] * rot[0, b] + origin_R[i, a, 1] * rot[1, b] + origin_R[i, a, 2] * rot[2, b]
        j = parents[i]
        if j < 0:
            R[i] = local
            p[i] = origin_t[i]
        else:
            for a in range(3):
                p[i, a] = p[j, a] + R[j, a, 0] * origin_t[i, 0] + R[j, a, 1] * origin_t[i, 1] + R[j, a, 2] * origin_t[i, 2]
                for b in range(3):
                    R[i, a, b] = R[j, a, 0] * local[0, b] + R[j, a, 1] * local[1, b] + R[j, a, 2] * local[2, b]
    return R, p


@njit(cache=True)
def points(parents, axes, origin_R, origin_t, ancestors, q, att_parent, att_offset, with_jacobian):
    """Positions (k,3) and, if requested, Jacobians (k,3,n) of attached points."""
    n = q.shape[0]
    k = att_parent.shape[0]
    R, p = joint_frames(parents, axes, origin_R, origin_t, q)
    pos = np.empty((k, 3))
    jac = np.zeros((k if with_jacobian else 0, 3, n))
    for m in range(k):
        j = att_parent[m]
        if j < 0:
            pos[m] = att_offset[m]
            continue
        for a in range(3):
            pos[m, a] = p[j, a] + R[j, a, 0] * att_offset[m, 0] + R[j, a, 1] * att_offset[m, 1] + R[j, a, 2] * att_offset[m, 2]
        if not with_jacobian:
            continue
        for i in range(n):
            if not ancestors[j, i]:
                continue
            # world axis of joint i
            wx = R[i, 0, 0] * axes[i, 0] + R[i, 0, 1] * axes[i, 1] + R[i, 0, 2] * axes[i, 2]
            wy = R[i, 1, 0] * axes[i, 0] + R[i, 1, 1] * axes[i, 1] + R[i, 1, 2] * axes[i, 2]
            wz = R[i, 2, 0] * axes[i, 0] + R[i, 2, 1] * axes[i, 1] + R[i, 2, 2] * axes[i, 2]
            dx = pos[m, 0] - p[i, 0]
            dy = pos[m, 1] - p[i, 1]
            dz = pos[m, 2] - p[i, 2]
            jac[m, 0, i] = wy * dz - wz * dy
            jac[m, 1, i] = wz * dx - wx * dz
            jac[m, 2, i] = wx * dy - wy * dx
    return pos, jac
