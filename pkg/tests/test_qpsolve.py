import numpy as np
import pytest

from oracles import enumerate_qp, random_qp
from pdik.qpsolve import (
    QpProblem,
    QpSettings,
    QpStatus,
    reference_solve,
    solve,
    solve_batch,
    solve_shared,
)

FIXED = QpSettings(adaptive_rho=False, rho=1.0)


def _random_problem(rng, **kw):
    return QpProblem(*random_qp(rng, **kw))


# --------------------------------------------------------------------------
# examples


def test_clipped_scalar():
    p = QpProblem([[1.0]], [-1.0], [[1.0]], [0.0], [0.5])
    for fn in (solve, reference_solve):
        assert fn(p).z[0] == pytest.approx(0.5, abs=1e-6)
    assert solve(p).status == QpStatus.SOLVED


def test_unconstrained_origin():
    p = QpProblem(np.eye(3), np.zeros(3), np.zeros((0, 3)), [], [])
    assert np.allclose(solve(p).z, 0.0, atol=1e-12)
    assert np.allclose(reference_solve(p).z, 0.0)


def test_matches_oracle_on_random_problems(rng):
    for _ in range(60):
        p = _random_problem(rng)
        z_ref = enumerate_qp(p.H, p.g, p.A, p.lower, p.upper)
        sol = solve(p)
        assert sol.status == QpStatus.SOLVED
        assert np.abs(sol.z - z_ref).max() <= 1e-4
        assert p.violation(sol.z) <= 1e-6


def test_reference_solve_agrees_with_independent_oracle(rng):
    for _ in range(40):
        p = _random_problem(rng)
        assert np.allclose(reference_solve(p).z, enumerate_qp(p.H, p.g, p.A, p.lower, p.upper), atol=1e-8)


def test_reference_solve_size_limits():
    with pytest.raises(ValueError):
        reference_solve(QpProblem(np.eye(17), np.zeros(17), np.zeros((0, 17)), [], []))
    with pytest.raises(ValueError):
        reference_solve(QpProblem(np.eye(2), np.zeros(2), np.ones((21, 2)), -np.ones(21), np.ones(21)))


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(3), np.zeros((0, 3)), [], [])
    with pytest.raises(ValueError):
        QpProblem([[1.0, 0.5], [0.0, 1.0]], np.zeros(2), np.zeros((0, 2)), [], [])
    with pytest.raises(ValueError):
        QpProblem(np.eye(1), [0.0], [[1.0]], [1.0], [0.0])


def test_infeasible_problem_detected():
    # z >= 1 and z <= -1 through two rows
    p = QpProblem(np.eye(1), [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, -1.0])
    assert solve(p).status == QpStatus.INFEASIBLE
    assert solve(p, FIXED).status == QpStatus.INFEASIBLE


def test_iteration_cap_returns_iterate(rng):
    p = _random_problem(rng, m=8, k=10)
    sol = solve(p, QpSettings.batch_regime(max_iter=3))
    assert sol.status == QpStatus.MAX_ITER and sol.iterations == 3 and np.all(np.isfinite(sol.z))


# --------------------------------------------------------------------------
# warm start


def test_warm_start_not_slower_in_90_percent(rng):
    better = 0
    trials = 100
    for _ in range(trials):
        H, g, A, lo, up = random_qp(rng)
        first = solve(QpProblem(H, g, A, lo, up))
        d = rng.normal(size=g.shape)
        d *= 1e-3 / np.linalg.norm(d)
        perturbed = QpProblem(H, g + d, A, lo, up)
        better += solve(perturbed, warm=first).iterations <= solve(perturbed).iterations
    assert better >= 0.9 * trials


# --------------------------------------------------------------------------
# batches


def test_batch_of_one_equals_solve(rng):
    p = _random_problem(rng)
    a, b = solve_batch([p])[0], solve(p)
    assert np.array_equal(a.z, b.z) and a.iterations == b.iterations and a.status == b.status


def test_batch_of_copies_identical(rng):
    p = _random_problem(rng, m=6, k=8)
    sols = solve_batch([p] * 16, FIXED)
    assert all(np.array_equal(s.z, sols[0].z) and s.iterations == sols[0].iterations for s in sols)


@pytest.mark.parametrize("settings", [QpSettings(), FIXED, QpSettings.batch_regime()], ids=["adaptive", "fixed", "batch"])
def test_batch_of_256_matches_individual(settings):
    rng = np.random.default_rng(99)
    H, _, A, lo, up = random_qp(rng, m=7, k=10)
    problems = [QpProblem(H, rng.normal(size=7) * 3, A, lo, up) for _ in range(128)]
    problems += [_random_problem(rng, m=7, k=10) for _ in range(128)]
    batch = solve_batch(problems, settings)
    for p, b in zip(problems, batch):
        s = solve(p, settings)
        assert b.iterations == s.iterations
        assert np.abs(b.z - s.z).max() <= 1e-12


def test_batch_order_independent(rng):
    H, _, A, lo, up = random_qp(rng, m=5, k=6)
    problems = [QpProblem(H, rng.normal(size=5), A, lo, up) for _ in range(20)]
    order = rng.permutation(20)
    a = solve_batch(problems, FIXED)
    b = solve_batch([problems[i] for i in order], FIXED)
    for j, i in enumerate(order):
        assert np.array_equal(a[i].z, b[j].z)


def test_batch_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        solve_batch([_random_problem(rng, m=3, k=2), _random_problem(rng, m=4, k=2)])


def test_shared_family_matches_problem_solves(rng):
    H, _, A, lo, up = random_qp(rng, m=6, k=9)
    G = rng.normal(size=(12, 6))
    shared = solve_shared(H, A, G, lo, up, FIXED)
    for j in range(12):
        s = solve(QpProblem(H, G[j], A, lo, up), FIXED)
        assert np.array_equal(shared.Z[j], s.z) and shared.iterations[j] == s.iterations


def test_shared_rejects_adaptive_batches(rng):
    H, _, A, lo, up = random_qp(rng, m=3, k=2)
    with pytest.raises(ValueError):
        solve_shared(H, A, np.zeros((2, 3)), lo, up, QpSettings())
