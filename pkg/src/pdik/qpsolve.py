"""Dense convex QP solving by two-block ADMM, single and batched.

Problems have the form::

    minimize    1/2 z'Hz + g'z
    subject to  lower <= A z <= upper

The iteration is the unscaled operator-splitting scheme with a slack copy
``s = Az`` projected onto the bound box, a proximal term ``sigma`` on ``z``
and no over-relaxation.  Candidates that share ``H`` and ``A`` reuse one
factorization of ``H + sigma I + A' diag(rho) A``, which is what makes
evaluating a whole continuation family per control step cheap.

``reference_solve`` is an exact active-set enumeration used as a test oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.linalg

from ._admm_kernel import admm_fixed, solve_fixed

RHO_MIN = 1e-6
RHO_EQ_SCALE = 1e3
INFEASIBLE_WINDOW = 20
EPS_PINF = 1e-4


class QpStatus(str, Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter_reached"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1)
        m = g.shape[0]
        A = np.asarray(self.A, dtype=float).reshape(-1, m)
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if H.shape != (m, m):
            raise ValueError(f"H has shape {H.shape}, expected {(m, m)}")
        if lower.shape != (A.shape[0],) or upper.shape != (A.shape[0],):
            raise ValueError("bound vectors must have one entry per constraint row")
        if not np.allclose(H, H.T, atol=1e-10, rtol=0.0):
            raise ValueError("H must be symmetric")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        for name, value in (("H", H), ("g", g), ("A", A), ("lower", lower), ("upper", upper)):
            object.__setattr__(self, name, value)

    @property
    def m(self) -> int:
        return self.g.shape[0]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.g @ z)

    def violation(self, z) -> float:
        """Largest bound violation of A z (0 when feasible)."""
        if self.k == 0:
            return 0.0
        Az = self.A @ np.asarray(z, dtype=float)
        return float(max(np.max(self.lower - Az, initial=0.0), np.max(Az - self.upper, initial=0.0)))


@dataclass(frozen=True)
class QpSettings:
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    eps_abs: float = 1e-7
    eps_rel: float = 1e-9
    warm_start: bool = True
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")

    @classmethod
    def batch_regime(cls, **overrides) -> "QpSettings":
        """Fixed-iteration batch solver: 50 iterations, sigma 1e-6, rho 50."""
        base = cls(max_iter=50, rho=50.0, sigma=1e-6, eps_abs=1e-5, eps_rel=1e-5, warm_start=True, adaptive_rho=False)
        return replace(base, **overrides)

    @classmethod
    def cpu_regime(cls, **overrides) -> "QpSettings":
        """Residual-tolerance solver: 500 iterations, eps_abs = eps_rel = 1e-5."""
        base = cls(max_iter=500, eps_abs=1e-5, eps_rel=1e-5, warm_start=True, adaptive_rho=True)
        return replace(base, **overrides)


@dataclass(frozen=True, eq=False)
class QpSolution:
    z: np.ndarray
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    slack: np.ndarray = field(default=None, repr=False)
    dual: np.ndarray = field(default=None, repr=False)

    @property
    def usable(self) -> bool:
        return self.status != QpStatus.INFEASIBLE


def _rho_vector(lower: np.ndarray, upper: np.ndarray, rho: float) -> np.ndarray:
    r = np.full(lower.shape, rho)
    r[np.isinf(lower) & np.isinf(upper)] = RHO_MIN
    r[(upper - lower) < 1e-4] = rho * RHO_EQ_SCALE
    return r


def _inverse(H: np.ndarray, A: np.ndarray, rho_vec: np.ndarray, sigma: float) -> np.ndarray:
    M = H + sigma * np.eye(H.shape[0]) + (A.T * rho_vec) @ A
    # explicit inverse: the matrices are small and the inverse is reused for every iteration
    return np.linalg.inv(M)


def _admm(H, A, G, L, U, X, S, Y, settings: QpSettings, rho_vec, Minv=None):
    """Run ADMM on a stack of problems sharing H and A.

    G (B,m) linear terms, L/U (B,k) bounds, X/S/Y (B,m)/(B,k)/(B,k) starting
    iterates.  Each row stops independently when its own residual test passes,
    so results are identical to running the rows one at a time.
    """
    B, m = G.shape
    k = A.shape[0]
    if Minv is None and not (settings.adaptive_rho and B == 1 and k > 0):
        # fixed penalty: scaling, factorization and iteration run compiled
        X, S, Y = (np.array(v, dtype=float, order="C") for v in (X, S, Y))
        status, iters, r_prim, r_dual = solve_fixed(
            np.ascontiguousarray(H, dtype=float), np.ascontiguousarray(A, dtype=float).reshape(k, m),
            np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(L, dtype=float), np.ascontiguousarray(U, dtype=float),
            X, S, Y, np.ascontiguousarray(rho_vec, dtype=float), float(settings.sigma),
            float(settings.eps_abs), float(settings.eps_rel), int(settings.max_iter), INFEASIBLE_WINDOW, EPS_PINF,
        )
        return X, S, Y, status, iters, r_prim, r_dual
    # Row equilibration: each constraint row is scaled to unit norm (bounds,
    # slacks and multipliers follow), so badly scaled rows do not stall the
    # iteration.  Residuals are measured in the scaled rows.
    d = _row_scaling(A)
    A, L, U, S, Y = A * d[:, None], L * d, U * d, S * d, Y / d
    X, S, Y, status, iters, r_prim, r_dual = _admm_scaled(H, A, G, L, U, X, S, Y, settings, rho_vec, Minv)
    return X, S / d, Y * d, status, iters, r_prim, r_dual


def _row_scaling(A: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    return 1.0 / np.where(norms > 1e-12, norms, 1.0)


def _admm_scaled(H, A, G, L, U, X, S, Y, settings: QpSettings, rho_vec, Minv=None):
    B, m = G.shape
    k = A.shape[0]
    if Minv is None:
        Minv = _inverse(H, A, rho_vec, settings.sigma)
    AT = A.T
    sigma = settings.sigma
    eps_abs, eps_rel = settings.eps_abs, settings.eps_rel

    adaptive = settings.adaptive_rho and B == 1 and k > 0
    X, S, Y = X.copy(), S.copy(), Y.copy()
    if not adaptive:
        status, iters, r_prim, r_dual = admm_fixed(
            np.ascontiguousarray(H), np.ascontiguousarray(A).reshape(k, m), np.ascontiguousarray(Minv),
            np.ascontiguousarray(G), np.ascontiguousarray(L), np.ascontiguousarray(U), X, S, Y,
            np.ascontiguousarray(rho_vec, dtype=float), float(sigma), float(eps_abs), float(eps_rel),
            int(settings.max_iter), INFEASIBLE_WINDOW, EPS_PINF,
        )
        return X, S, Y, status, iters, r_prim, r_dual

    iters = np.full(B, settings.max_iter, dtype=int)
    status = np.full(B, 1, dtype=int)  # 0 solved, 1 max-iter, 2 infeasible
    r_prim = np.zeros(B)
    r_dual = np.zeros(B)
    active = np.ones(B, dtype=bool)
    prev_prim = np.full(B, np.inf)
    nondecreasing = np.zeros(B, dtype=int)
    for it in range(1, settings.max_iter + 1):
        idx = np.flatnonzero(active) if not active.all() else None
        if idx is None:
            x, s, y, g, lo, up = X, S, Y, G, L, U
        else:
            x, s, y, g, lo, up = X[idx], S[idx], Y[idx], G[idx], L[idx], U[idx]

        y_prev = y
        rhs = sigma * x - g
        if k:
            rhs += (rho_vec * s - y) @ A
        x = rhs @ Minv
        if k:
            Ax = x @ AT
            s_new = np.clip(Ax + y / rho_vec, lo, up)
            y = y + rho_vec * (Ax - s_new)
            s = s_new
            ATy = y @ A
            rp = np.abs(Ax - s).max(axis=1)
            prim_scale = np.maximum(np.abs(Ax).max(axis=1), np.abs(s).max(axis=1))
        else:
            ATy = np.zeros_like(x)
            rp = np.zeros(x.shape[0])
            prim_scale = np.zeros(x.shape[0])
        Hx = x @ H
        rd = np.abs(Hx + g + ATy).max(axis=1)
        dual_scale = np.maximum(np.maximum(np.abs(Hx).max(axis=1), np.abs(ATy).max(axis=1)), np.abs(g).max(axis=1))

        done = (rp <= eps_abs + eps_rel * prim_scale) & (rd <= eps_abs + eps_rel * dual_scale)
        pp = prev_prim if idx is None else prev_prim[idx]
        nd = nondecreasing if idx is None else nondecreasing[idx]
        nd = np.where(rp >= pp, nd + 1, 0)
        bad = (nd >= INFEASIBLE_WINDOW) & (rp > 1e2 * eps_abs) & ~done
        if bad.any():
            bad &= _farkas(A, y - y_prev, lo, up)

        if idx is None:
            X, S, Y = x, s, y
            r_prim, r_dual = rp, rd
            prev_prim, nondecreasing = rp, nd
            finished = done | bad
            iters[finished] = it
            status[done] = 0
            status[bad] = 2
            active = ~finished
        else:
            X[idx], S[idx], Y[idx] = x, s, y
            r_prim[idx], r_dual[idx] = rp, rd
            prev_prim[idx], nondecreasing[idx] = rp, nd
            fin = idx[done | bad]
            iters[fin] = it
            status[idx[done]] = 0
            status[idx[bad]] = 2
            active[fin] = False
        if not active.any():
            break

        if adaptive and it % settings.adaptive_rho_interval == 0:
            num = max(rp[0] / (prim_scale[0] + 1e-30), 1e-12)
            den = max(rd[0] / (dual_scale[0] + 1e-30), 1e-12)
            scale = float(np.clip(np.sqrt(num / den), 0.1, 10.0))
            if scale > 5.0 or scale < 0.2:
                rho_vec = np.clip(rho_vec * scale, RHO_MIN, 1e6 * RHO_EQ_SCALE)
                Minv = _inverse(H, A, rho_vec, sigma)
    return X, S, Y, status, iters, r_prim, r_dual


def _farkas(A, dy, lo, up) -> np.ndarray:
    """Primal infeasibility certificate on multiplier increments, per row."""
    norm = np.abs(dy).max(axis=1)
    pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
    tiny = EPS_PINF * norm[:, None]
    unbounded = ((pos > tiny) & np.isinf(up)) | ((neg < -tiny) & np.isinf(lo))
    support = (np.where(np.isinf(up), 0.0, up) * pos).sum(axis=1) + (np.where(np.isinf(lo), 0.0, lo) * neg).sum(axis=1)
    stationary = np.abs(dy @ A).max(axis=1) <= EPS_PINF * norm
    return (norm > 0) & stationary & ~unbounded.any(axis=1) & (support < -EPS_PINF * norm)


_STATUS = {0: QpStatus.SOLVED, 1: QpStatus.MAX_ITER, 2: QpStatus.INFEASIBLE}


def _starts(problems: Sequence[QpProblem], warms, settings: QpSettings):
    m, k = problems[0].m, problems[0].k
    X = np.zeros((len(problems), m))
    S = np.zeros((len(problems), k))
    Y = np.zeros((len(problems), k))
    if settings.warm_start and warms is not None:
        for i, w in enumerate(warms):
            if w is None or w.z.shape != (m,) or not np.all(np.isfinite(w.z)):
                continue
            X[i] = w.z
            if w.slack is not None and w.slack.shape == (k,):
                S[i] = w.slack
                Y[i] = w.dual
    return X, S, Y


def _run_group(problems, settings, warms) -> list[QpSolution]:
    first = problems[0]
    rho_vec = _rho_vector(first.lower, first.upper, settings.rho)
    G = np.stack([p.g for p in problems])
    L = np.stack([p.lower for p in problems])
    U = np.stack([p.upper for p in problems])
    X0, S0, Y0 = _starts(problems, warms, settings)
    X, S, Y, status, iters, rp, rd = _admm(first.H, first.A, G, L, U, X0, S0, Y0, settings, rho_vec)
    out = []
    for i in range(len(problems)):
        out.append(QpSolution(X[i].copy(), _STATUS[int(status[i])], int(iters[i]), float(rp[i]), float(rd[i]), S[i].copy(), Y[i].copy()))
    return out


@dataclass(frozen=True, eq=False)
class BatchSolution:
    """Stacked results of a shared-structure batch (row i = problem i)."""

    Z: np.ndarray
    status: np.ndarray  # 0 solved, 1 max-iter, 2 infeasible
    iterations: np.ndarray
    primal_residual: np.ndarray
    dual_residual: np.ndarray
    slack: np.ndarray
    dual: np.ndarray

    def __len__(self) -> int:
        return self.Z.shape[0]

    def solution(self, i: int) -> QpSolution:
        return QpSolution(
            self.Z[i].copy(),
            _STATUS[int(self.status[i])],
            int(self.iterations[i]),
            float(self.primal_residual[i]),
            float(self.dual_residual[i]),
            self.slack[i].copy(),
            self.dual[i].copy(),
        )


def solve_shared(H, A, G, lower, upper, settings: QpSettings | None = None, warm: BatchSolution | None = None) -> BatchSolution:
    """Solve B problems that share H, A and the bounds, differing only in g.

    This is the array-level path behind continuation batches: one factorization
    and one stacked ADMM loop, no per-problem objects.  Each row matches
    ``solve`` on the corresponding ``QpProblem`` when adaptive rho is off.
    """
    settings = settings or QpSettings()
    H = np.asarray(H, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, H.shape[0])
    G = np.atleast_2d(np.asarray(G, dtype=float))
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    B, m = G.shape
    k = A.shape[0]
    if H.shape != (m, m) or lower.shape != (k,) or upper.shape != (k,):
        raise ValueError("inconsistent shared-batch dimensions")
    if settings.adaptive_rho and B > 1:
        raise ValueError("shared batches need a fixed rho; disable adaptive_rho")
    X, S, Y = np.zeros((B, m)), np.zeros((B, k)), np.zeros((B, k))
    if settings.warm_start and warm is not None and warm.Z.shape == (B, m):
        ok = np.all(np.isfinite(warm.Z), axis=1)
        X[ok], S[ok], Y[ok] = warm.Z[ok], warm.slack[ok], warm.dual[ok]
    rho_vec = _rho_vector(lower, upper, settings.rho)
    L = np.broadcast_to(lower, (B, k))
    U = np.broadcast_to(upper, (B, k))
    X, S, Y, status, iters, rp, rd = _admm(H, A, G, L, U, X, S, Y, settings, rho_vec)
    return BatchSolution(X, status, iters, rp, rd, S, Y)


def solve(problem: QpProblem, settings: QpSettings | None = None, warm: QpSolution | None = None) -> QpSolution:
    settings = settings or QpSettings()
    return _run_group([problem], settings, [warm])[0]


def _same_structure(a: QpProblem, b: QpProblem) -> bool:
    if a.H is not b.H and not np.array_equal(a.H, b.H):
        return False
    if a.A is not b.A and not np.array_equal(a.A, b.A):
        return False
    return np.array_equal(_rho_vector(a.lower, a.upper, 1.0), _rho_vector(b.lower, b.upper, 1.0))


def solve_batch(problems: Sequence[QpProblem], settings: QpSettings | None = None, warms=None) -> list[QpSolution]:
    """Solve a list of same-sized problems.

    Problems sharing H, A and constraint row types are stepped together on one
    cached factorization; every row terminates on its own test, so the result
    for each problem equals ``solve`` on it alone.
    """
    settings = settings or QpSettings()
    problems = list(problems)
    if not problems:
        return []
    m, k = problems[0].m, problems[0].k
    for p in problems:
        if (p.m, p.k) != (m, k):
            raise ValueError("all problems in a batch must have the same dimensions")
    warms = list(warms) if warms is not None else [None] * len(problems)
    if len(warms) != len(problems):
        raise ValueError("need one warm start entry per problem")

    results: list[QpSolution | None] = [None] * len(problems)
    if settings.adaptive_rho:
        # per-problem rho adaptation breaks factorization sharing
        for i, p in enumerate(problems):
            results[i] = _run_group([p], settings, [warms[i]])[0]
        return results

    remaining = list(range(len(problems)))
    while remaining:
        lead = problems[remaining[0]]
        group = [i for i in remaining if _same_structure(lead, problems[i])]
        sols = _run_group([problems[i] for i in group], settings, [warms[i] for i in group])
        for i, s in zip(group, sols):
            results[i] = s
        remaining = [i for i in remaining if i not in set(group)]
    return results


# --------------------------------------------------------------------------
# exact oracle


def reference_solve(problem: QpProblem, tol: float = 1e-9) -> QpSolution:
    """Exact solution by enumerating active sets and solving each KKT system.

    Active sets are tried in order of increasing size; the first one whose
    KKT point is primal feasible with correctly signed multipliers is the
    global optimum (KKT conditions are sufficient for a convex QP).
    """
    m, k = problem.m, problem.k
    if m > 16 or k > 20:
        raise ValueError("reference_solve is limited to m <= 16 and k <= 20")
    H, g, A, lo, up = problem.H, problem.g, problem.A, problem.lower, problem.upper
    chol = scipy.linalg.cho_factor(H)
    z_free = -scipy.linalg.cho_solve(chol, g)
    HinvAT = scipy.linalg.cho_solve(chol, A.T) if k else np.zeros((m, 0))
    G = A @ HinvAT
    Az_free = A @ z_free

    equality = [i for i in range(k) if up[i] - lo[i] <= 0.0]
    sides = {}
    for i in range(k):
        if i in equality:
            continue
        options = []
        if np.isfinite(lo[i]):
            options.append(-1)
        if np.isfinite(up[i]):
            options.append(1)
        if options:
            sides[i] = options
    free_rows = sorted(sides)
    scale = 1.0 + np.abs(A).max(initial=0.0) * (1.0 + np.abs(z_free).max(initial=0.0))

    ne = len(equality)

    def attempt(active: tuple[int, ...]):
        """Try every side assignment of one active row set at once."""
        rows = equality + list(active)
        if active:
            patterns = np.array(list(itertools.product(*(sides[i] for i in active))), dtype=float)
        else:
            patterns = np.zeros((1, 0))
        if not rows:
            Z = z_free[None, :]
            lam = np.zeros((1, 0))
        else:
            b_eq = np.tile(lo[equality], (len(patterns), 1))
            act = np.array(active, dtype=int)
            b_act = np.where(patterns < 0, lo[act], up[act]) if len(active) else np.zeros((len(patterns), 0))
            b = np.hstack([b_eq, b_act])
            Gs = G[np.ix_(rows, rows)]
            w = np.linalg.eigvalsh(Gs)
            if w[0] <= 1e-12 * max(w[-1], 1e-300):
                return None
            lam = np.linalg.solve(Gs, (Az_free[rows][None, :] - b).T).T
            Z = z_free[None, :] - lam @ HinvAT[:, rows].T
        ok = np.ones(len(Z), dtype=bool)
        if k:
            AZ = Z @ A.T
            ok &= np.all(AZ >= lo - tol * scale, axis=1) & np.all(AZ <= up + tol * scale, axis=1)
        if len(active):
            lam_scale = np.maximum(1.0, np.abs(lam).max(axis=1, keepdims=True))
            ok &= np.all(patterns * lam[:, ne:] >= -tol * lam_scale, axis=1)
        hits = np.flatnonzero(ok)
        return Z[hits[0]] if len(hits) else None

    max_size = min(len(free_rows), m - len(equality))
    for size in range(0, max_size + 1):
        for active in itertools.combinations(free_rows, size):
            z = attempt(active)
            if z is not None:
                return QpSolution(z, QpStatus.SOLVED, 0, problem.violation(z), 0.0)
    return QpSolution(np.full(m, np.nan), QpStatus.INFEASIBLE, 0, np.inf, np.inf)
