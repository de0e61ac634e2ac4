"""Acceptance suite: one test per primary criterion.

Each test records a verdict with the measured figures; the session summary
prints one ``ACCEPTANCE PASS|FAIL`` line per criterion.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_difference, enumerate_qp, planar_2r_ik, random_qp
from pdik import point_jacobian
from pdik.baselines import objective_F
from pdik.bench import EscapeMcConfig, TrialConfig, escape_mc, make_controller, run_trial
from pdik.perception import FilterParams, FilterState, Keypoint, filter_step
from pdik.qpsolve import QpProblem, QpSettings, QpStatus, solve
from pdik.retarget import ContinuationGrid, RetargetConfig, RetargetController, TaskSpec
from pdik.rigidbody import frame_positions
from pdik.safety import barrier_terms

# --------------------------------------------------------------------------
# kinematics and barriers


@pytest.mark.criterion("Jacobian correctness")
def test_jacobian_correctness(planar, arm7, desk, record):
    rng = np.random.default_rng(2024)
    models = (planar, arm7, desk)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        m = models[i % 3]
        q = rng.uniform(m.lower, m.upper)
        names = sorted(m.frames)
        frame = names[rng.integers(len(names))]
        fd = central_difference(lambda x: frame_positions(m, x, [frame])[0], q)
        worst = max(worst, float(np.abs(point_jacobian(m, q, frame) - fd).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 10.0
    record(ok, f"max |J - FD| = {worst:.2e} (< 1e-6) over 1000 pairs in {elapsed:.1f} s (< 10 s)")
    assert ok


@pytest.mark.criterion("CBF gradient correctness")
def test_cbf_gradient_correctness(two_branch, desk, record):
    rng = np.random.default_rng(2025)
    worst = 0.0
    for i in range(1000):
        m = desk if i % 2 else two_branch
        q = rng.uniform(m.lower, m.upper)
        _, grad = barrier_terms(m, q)
        fd = central_difference(lambda x: barrier_terms(m, x)[0], q)
        worst = max(worst, float(np.abs(grad - fd).max()))
    ok = worst < 1e-5
    record(ok, f"max |grad h - FD| = {worst:.2e} (< 1e-5) over 1000 configurations")
    assert ok


# --------------------------------------------------------------------------
# QP solver


@pytest.mark.criterion("QP oracle equivalence")
def test_qp_oracle_equivalence(record):
    rng = np.random.default_rng(7)
    problems = [random_qp(rng) for _ in range(500)]
    t0 = time.perf_counter()
    sols = [solve(QpProblem(*p)) for p in problems]
    elapsed = time.perf_counter() - t0
    dz = viol = 0.0
    unsolved = 0
    for p, s in zip(problems, sols):
        H, g, A, lo, up = p
        unsolved += s.status != QpStatus.SOLVED
        dz = max(dz, float(np.abs(s.z - enumerate_qp(H, g, A, lo, up)).max()))
        viol = max(viol, QpProblem(*p).violation(s.z))
    ok = dz <= 1e-4 and viol <= 1e-6 and elapsed < 30.0 and unsolved == 0
    record(ok, f"max |dz| = {dz:.1e} (<= 1e-4), violation {viol:.1e} (<= 1e-6), unsolved {unsolved}, solver time {elapsed:.1f} s (< 30 s)")
    assert ok


# --------------------------------------------------------------------------
# certificate and basins


@pytest.mark.criterion("Certificate soundness")
def test_certificate_soundness(desk_ablation, record):
    _, metrics, _ = desk_ablation
    audited = [m for m in metrics if m.method.endswith("_cert")]
    cert = sum(m.certificate_violations for m in audited)
    maxi = sum(m.maximality_violations for m in audited)
    steps = sum(m.applied_steps for m in audited)
    ok = cert == 0 and maxi == 0 and steps > 0
    record(ok, f"{cert} certificate and {maxi} maximality violations over {steps} applied segment steps in {len(audited)} trials")
    assert ok


def _branch_starts(model, solution, seed, n=100):
    """Seeded starts around one inverse-kinematics branch, kept on its side of
    the elbow singularity and outside the obstacle."""
    rng = np.random.default_rng(seed)
    branch = np.sign(solution[1])
    starts = []
    while len(starts) < n:
        q = solution + rng.uniform(-0.6, 0.6, 2)
        if np.sign(q[1]) != branch or abs(q[1]) < 0.1 or barrier_terms(model, q)[0].min() <= 0:
            continue
        starts.append(q)
    return starts


@pytest.mark.criterion("Basin-dependence demonstration")
def test_basin_dependence(two_branch, record):
    target = np.array([0.35, 0.25, 0.0])
    task = TaskSpec.from_positions({"end": target})
    cfg = RetargetConfig(grid=ContinuationGrid.deterministic(1), qp=QpSettings(adaptive_rho=False, max_iter=4000, rho=1.0))
    RetargetController(two_branch, cfg).step(np.array([0.1, 0.5]), task)  # compile outside the clock
    t0 = time.perf_counter()
    runs = crossings = increases = 0
    for seed, solution in enumerate(planar_2r_ik(*target[:2]), start=1):
        branch = np.sign(solution[1])
        for q in _branch_starts(two_branch, solution, seed):
            ctl = RetargetController(two_branch, cfg)
            F = [objective_F(two_branch, q, task, q, Wq=0.0)]
            crossed = False
            for _ in range(50):
                r = ctl.step(q, task)
                q = r.q_next
                F.append(r.V_after)
                crossed |= np.sign(q[1]) != branch
            runs += 1
            crossings += crossed
            increases += bool(np.any(np.diff(F) > 1e-12))
    elapsed = time.perf_counter() - t0
    ok = crossings == 0 and increases == 0 and runs == 200 and elapsed < 5.0
    record(ok, f"{runs} runs: {crossings} branch crossings, {increases} with F increasing; {elapsed:.1f} s (< 5 s)")
    assert ok


# --------------------------------------------------------------------------
# escape law


@pytest.mark.criterion("Escape-probability law")
def test_escape_probability_law(record):
    t0 = time.perf_counter()
    worst = 0.0
    for seed, p in enumerate((0.05, 0.1, 0.3)):
        for _, emp, pred in escape_mc(EscapeMcConfig(p=p, K_values=(1, 4, 16, 64), trials=100_000, seed=seed)):
            worst = max(worst, abs(emp - pred))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and elapsed < 10.0
    record(ok, f"max |empirical - predicted| = {worst:.4f} (<= 0.02) over 12 cells at 1e5 trials; {elapsed:.1f} s (< 10 s)")
    assert ok


# --------------------------------------------------------------------------
# desk ablation


@pytest.mark.criterion("Ablation trend reproduction")
def test_ablation_trends(desk_ablation, record):
    rows, _, elapsed = desk_ablation
    k1, k64, k256 = (rows[f"parallel_dist_cert:{K}:0.0005"] for K in (1, 64, 256))
    loose = rows["parallel_dist_cert:256:0.005"]
    sqp = rows["global_sqp:1:"]
    single = min(rows["monolithic:1:"].final_error_median, rows["distributed:1:"].final_error_median)
    trends = {
        "a": k1.collisions > k64.collisions > k256.collisions,
        "b": k256.stagnations <= 0.6 * k1.stagnations,
        "c": sqp.final_error_median < single,
        "d": loose.collisions <= k256.collisions and loose.error_mean > k256.error_mean,
    }
    detail = (
        f"(a) collisions K=1/64/256: {k1.collisions}/{k64.collisions}/{k256.collisions} {'ok' if trends['a'] else 'not strictly decreasing'}; "
        f"(b) stagnations {k256.stagnations} vs {k1.stagnations} {('ok (vacuous)' if k1.stagnations == 0 else 'ok') if trends['b'] else 'too many'}; "
        f"(c) median final error SQP {sqp.final_error_median * 1e3:.2f} mm vs single shot {single * 1e3:.2f} mm {'ok' if trends['c'] else 'wrong order'}; "
        f"(d) eta 0.005: collisions {loose.collisions} vs {k256.collisions}, mean error {loose.error_mean * 1e3:.2f} vs {k256.error_mean * 1e3:.2f} mm "
        f"{'ok' if trends['d'] else 'not reproduced'}; {elapsed:.0f} s (< 600 s)"
    )
    ok = all(trends.values()) and elapsed < 600.0
    record(ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# timing


class _TimedController:
    """Wraps a controller and records the wall time of every step."""

    def __init__(self, inner):
        self.inner = inner
        self.eta = getattr(inner, "eta", None)
        self.times: list[float] = []

    def step(self, q, task):
        t0 = time.perf_counter()
        out = self.inner.step(q, task)
        self.times.append(time.perf_counter() - t0)
        return out


def _median_step_time(model, method, K, trials=4):
    timed = _TimedController(make_controller(model, TrialConfig(method=method, K=K)))
    run_trial(TrialConfig(seed=100, method=method, K=K, horizon=5), model, controller=timed)  # warm-up
    timed.times.clear()
    for seed in range(trials):
        run_trial(TrialConfig(seed=seed, method=method, K=K), model, controller=timed)
    return float(np.median(timed.times))


@pytest.mark.criterion("Real-time budget analog")
def test_real_time_budget(desk, record):
    assert len(desk.cbf_pairs) == 12 and desk.dof == 15
    dist = _median_step_time(desk, "parallel_dist_cert", 64)
    mono = _median_step_time(desk, "monolithic", 1)
    ok = dist < 0.010 and mono < 0.002
    record(ok, f"median step K=64 distributed {dist * 1e3:.2f} ms (< 10 ms), monolithic single QP {mono * 1e3:.2f} ms (< 2 ms)")
    assert ok


# --------------------------------------------------------------------------
# perception filter

P = FilterParams()
_coord = st.floats(-2.0, 2.0)
_point = st.tuples(_coord, _coord, _coord).map(np.array)


@given(_point, _point, st.floats(0.0, 1.0))
def _filter_stays_in_hull(last, meas, conf):
    state = FilterState(last, True, 0)
    _, out = filter_step(state, Keypoint(0, "torso", meas, conf), P)
    # out = last + w (meas - last) with w in [0, 1]
    d = meas - last
    if not np.any(d):
        assert np.allclose(out, last)
        return
    w = float(np.dot(out - last, d) / np.dot(d, d))
    assert -1e-12 <= w <= 1 + 1e-12
    assert np.allclose(out, last + w * d, atol=1e-12)


@given(_point, _point, st.floats(0.0, 0.4999), st.booleans())
def _invalid_sample_is_idempotent(last, meas, conf, use_nan):
    state = FilterState(last, True, 0)
    if use_nan:
        meas = meas.copy()
        meas[1] = np.nan
        conf = 1.0
    sample = Keypoint(0, "torso", meas, conf)
    s1, out1 = filter_step(state, sample, P)
    s2, out2 = filter_step(s1, sample, P)
    assert np.array_equal(out1, last) and np.array_equal(out2, last)
    assert np.array_equal(s2.last, state.last) and s2.initialized


def _branch_examples():
    s0 = FilterState(np.zeros(3), True, 0)
    cases = [
        ([1.0, 0, 0], [0.05, 0, 0]),  # jump: lambda branch
        ([0.1, 0, 0], [0.04, 0, 0]),  # nominal alpha branch
        ([0.3, 0, 0], [0.12, 0, 0]),  # distance equal to tau: nominal branch
    ]
    for meas, want in cases:
        assert np.allclose(filter_step(s0, Keypoint(0, "torso", np.array(meas), 1.0), P)[1], want, atol=1e-15)
    s1, out = filter_step(s0, Keypoint(0, "torso", np.array([np.nan, 0, 0]), 1.0), P)
    assert s1 is s0 and np.array_equal(out, np.zeros(3))


@pytest.mark.criterion("Filter conformance")
def test_filter_conformance(record):
    results = {}
    for name, check in (("convex hull", _filter_stays_in_hull), ("invalid idempotence", _invalid_sample_is_idempotent), ("branch examples", _branch_examples)):
        try:
            check()
            results[name] = "pass"
        except AssertionError as exc:
            results[name] = f"fail ({str(exc).splitlines()[0] if str(exc) else 'assertion'})"
    ok = all(v == "pass" for v in results.values())
    record(ok, ", ".join(f"{k}: {v}" for k, v in results.items()))
    assert ok
