import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import damped_least_squares, planar_2r_ik
from pdik import bundled_model, point_jacobian
from pdik.baselines import SqpSettings, global_ik_sqp, objective_F, single_shot_step
from pdik.bench import limb_segments, nominal_posture
from pdik.qpsolve import QpSettings
from pdik.retarget import RetargetConfig, TaskSpec
from pdik.rigidbody import frame_positions
from pdik.safety import barrier_terms

TIGHT = RetargetConfig(qp=QpSettings(eps_abs=1e-12, eps_rel=1e-12))


# --------------------------------------------------------------------------
# objective


def test_objective_zero_at_solution(planar):
    q = np.array([0.3, 0.7])
    task = TaskSpec.from_positions({"end": frame_positions(planar, q, ["end"])[0]})
    assert objective_F(planar, q, task, q) == 0.0


def test_objective_arithmetic(planar):
    q = np.array([0.3, 0.7])
    x = frame_positions(planar, q, ["end"])[0]
    task = TaskSpec.from_positions({"end": x + [0.06, 0.08, 0.0]})
    assert objective_F(planar, q, task, np.zeros(2), Wx=1.0, Wq=0.0) == pytest.approx(0.005, abs=1e-15)


def test_objective_term_by_term(arm7, rng):
    for _ in range(10):
        q, q_ref = rng.uniform(-2, 2, 7), rng.uniform(-2, 2, 7)
        xd = rng.normal(size=6)
        wx, wq = rng.uniform(0.5, 2, 6), rng.uniform(0, 0.1, 7)
        task = TaskSpec.from_positions({"hand": xd[:3], "elbow": xd[3:]})
        x = np.concatenate([frame_positions(arm7, q, ["hand"])[0], frame_positions(arm7, q, ["elbow"])[0]])
        want = 0.5 * sum(w * (a - b) ** 2 for w, a, b in zip(wx, x, xd)) + 0.5 * sum(w * (a - b) ** 2 for w, a, b in zip(wq, q, q_ref))
        assert objective_F(arm7, q, task, q_ref, Wx=wx, Wq=wq) == pytest.approx(want, rel=1e-12)


# --------------------------------------------------------------------------
# global SQP


@pytest.mark.parametrize("target", [(0.35, 0.25), (0.1, 0.45), (-0.3, 0.2), (0.5, -0.1)])
def test_sqp_reaches_analytic_solution(planar, target):
    task = TaskSpec.from_positions({"end": [*target, 0.0]})
    res = global_ik_sqp(planar, task, np.array([0.2, 0.5]), Wq=0.0)
    assert res.converged
    assert np.linalg.norm(frame_positions(planar, res.q_star, ["end"])[0] - task.desired) < 1e-6
    branches = planar_2r_ik(*target)
    wrap = lambda a: (a + np.pi) % (2 * np.pi) - np.pi  # noqa: E731
    assert min(np.abs(wrap(res.q_star - b)).max() for b in branches) < 1e-5


@pytest.mark.parametrize("d", [0.05, 0.2])
def test_sqp_unreachable_residual(planar, d):
    direction = np.array([np.cos(0.7), np.sin(0.7), 0.0])
    task = TaskSpec.from_positions({"end": (0.6 + d) * direction})
    res = global_ik_sqp(planar, task, np.array([0.2, 0.5]), Wq=0.0)
    residual = np.linalg.norm(frame_positions(planar, res.q_star, ["end"])[0] - task.desired)
    assert abs(residual - d) < 1e-4


def test_sqp_fixed_point(planar):
    q = np.array([0.3, 0.7])
    task = TaskSpec.from_positions({"end": frame_positions(planar, q, ["end"])[0]})
    res = global_ik_sqp(planar, task, q)
    assert res.iterations <= 1 and np.allclose(res.q_star, q)


@settings(max_examples=15)
@given(arrays(float, 7, elements=st.floats(-2.0, 2.0)), arrays(float, 6, elements=st.floats(-0.6, 0.6)))
def test_sqp_never_increases_F(q0, xd):
    m = bundled_model("arm7")
    task = TaskSpec.from_positions({"hand": xd[:3], "elbow": xd[3:]})
    res = global_ik_sqp(m, task, q0, SqpSettings(max_outer_iter=30))
    assert np.all(np.diff(res.F_history) <= 0.0)
    assert res.F_final >= 0


def test_sqp_respects_limits_and_barriers(desk):
    q0 = nominal_posture(desk)
    x = frame_positions(desk, q0, ["hand_l", "hand_r"])
    task = TaskSpec.from_positions({"hand_l": x[0] + [-0.3, -0.2, 0.0], "hand_r": x[1] + [-0.3, 0.2, 0.0]})
    res = global_ik_sqp(desk, task, q0, SqpSettings(max_outer_iter=40))
    for q in res.q_history:
        assert np.all(q >= desk.lower) and np.all(q <= desk.upper)
        assert barrier_terms(desk, q)[0].min() >= 0


def test_sqp_rejects_start_outside_limits(planar):
    with pytest.raises(ValueError):
        global_ik_sqp(planar, TaskSpec.from_positions({"end": [0.3, 0, 0]}), np.array([3.2, 0.0]))


# --------------------------------------------------------------------------
# single shot


@pytest.mark.parametrize("mode", ["monolithic", "distributed"])
def test_single_shot_free_space_is_damped_least_squares(desk, mode):
    q = nominal_posture(desk)
    frames = ["hand_l", "hand_r"]
    x = frame_positions(desk, q, frames)
    d = np.array([0.002, -0.001, 0.001, -0.001, 0.002, 0.0])
    task = TaskSpec.from_positions({"hand_l": x[0] + d[:3], "hand_r": x[1] + d[3:]})
    segs = limb_segments(desk, frames)
    r, _ = single_shot_step(desk, q, task, mode, TIGHT, segments=segs)
    J = np.vstack([point_jacobian(desk, q, f) for f in frames])
    if mode == "monolithic":
        want = damped_least_squares(J, 1.0, TIGHT.Wq, d)
    else:
        parts = [damped_least_squares(J[3 * i : 3 * i + 3][:, s], 1.0, TIGHT.Wq, d[3 * i : 3 * i + 3]) for i, s in enumerate(segs.segments)]
        want = np.zeros(desk.dof)
        counts = segs.counts
        for s, p in zip(segs.segments, parts):
            want[s] += p
        want /= counts
    assert np.abs(want).max() < 0.02
    assert np.abs(r.dq - want).max() < 1e-6


def test_single_shot_blocked_target_stalls(two_branch):
    """Single shot should stall with |dq| < 1e-5 while the error stays large.

    Expected to fail: the step slides around the sphere rather than stalling
    (see the decisions ledger).
    """
    q = planar_2r_ik(0.3, -0.12)[0]
    task = TaskSpec.from_positions({"end": [0.3, 0.12, 0.0]})
    norms, values = [], []
    for _ in range(50):
        r, _ = single_shot_step(two_branch, q, task)
        q = r.q_next
        norms.append(np.linalg.norm(r.dq))
        values.append(r.V_after)
    stalled = [n < 1e-5 and v > 1e-6 for n, v in zip(norms, values)]
    assert any(stalled), f"no stalled step: smallest |dq| {min(norms):.2e} (V then {values[int(np.argmin(norms))]:.2e})"


def test_single_shot_mode_validation(planar):
    with pytest.raises(ValueError):
        single_shot_step(planar, [0.1, 0.2], TaskSpec.from_positions({"end": [0.3, 0, 0]}), "sideways")
    with pytest.raises(ValueError):
        single_shot_step(planar, [0.1, 0.2], TaskSpec.from_positions({"end": [0.3, 0, 0]}), "distributed")
