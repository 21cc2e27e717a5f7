"""Per-step quadratic program: assembly and a dual active-set solver.

The program is

    minimize    0.5 x'Hx + f'x
    subject to  A x = b,  G x <= h,  lo <= x <= hi

where ``x`` is the joint-velocity vector. Assembly turns goal tracking,
joint limits, the boundary polyhedron and obstacle planes into these blocks;
:func:`solve` is a Goldfarb-Idnani dual method.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, qr, solve_triangular

from .errors import InfeasibleJointError

HARD = "hard"
SOFT = "soft"


@dataclass
class TuningConfig:
    """Gains and tolerances for one run.

    ``gains`` holds one diagonal gain vector per goal (a single entry is reused
    for every goal). ``proximity_distance`` defaults to twice the largest module
    radius when left as ``None``.
    """

    gains: list = field(default_factory=lambda: [[1.0, 1.0, 1.0]])
    mode: str = SOFT
    tracking_weight: float = 10000.0
    proximity_weight: float = 10.0
    proximity_distance: float | None = None
    contact_distance: float = 0.005
    repulsion_ratio: float = 0.25
    repulsion_max: float = 0.05
    dt: float = 0.05
    epsilon: float = 1e-3
    solver_tol: float = 1e-9
    max_iter: int = 200

    def __post_init__(self):
        if self.mode not in (HARD, SOFT):
            raise ValueError(f"mode must be 'hard' or 'soft', got {self.mode!r}")
        for name in ("tracking_weight", "proximity_weight", "dt", "epsilon", "solver_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.contact_distance >= 0 or not self.repulsion_max >= 0:
            raise ValueError("contact_distance and repulsion_max must be non-negative")
        gains = np.atleast_2d(np.asarray(self.gains, dtype=float))
        if gains.shape[1] != 3 or np.any(gains < 0):
            raise ValueError("gains must be non-negative 3-vectors")
        self.gains = gains

    def gain_matrix(self, goal_index: int) -> np.ndarray:
        g = self.gains[goal_index] if goal_index < len(self.gains) else self.gains[-1]
        return np.diag(g)

    def to_tree(self) -> dict:
        return {"mode": self.mode, "gains": self.gains.tolist(),
                "tracking_weight": self.tracking_weight, "proximity_weight": self.proximity_weight,
                "proximity_distance": self.proximity_distance,
                "contact_distance": self.contact_distance, "repulsion_ratio": self.repulsion_ratio,
                "repulsion_max": self.repulsion_max, "dt": self.dt, "epsilon": self.epsilon,
                "solver_tol": self.solver_tol, "max_iter": self.max_iter}


@dataclass
class StepProgram:
    """QP blocks plus a tag for every constraint row.

    ``eq_tags`` / ``ineq_tags`` label rows (``control-goal``, ``boundary``,
    ``obstacle``, ``repulsive``); ``lo_tags`` / ``hi_tags`` label each bound
    as ``joint-pos-limit`` or ``joint-vel-limit`` by which limit binds.
    ``ineq_info`` carries ``(module, face-or-sphere)`` for each inequality.
    """

    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    eq_tags: list = field(default_factory=list)
    ineq_tags: list = field(default_factory=list)
    ineq_info: list = field(default_factory=list)
    lo_tags: list = field(default_factory=list)
    hi_tags: list = field(default_factory=list)
    objective_terms: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @classmethod
    def empty(cls, n: int) -> "StepProgram":
        return cls(np.eye(n), np.zeros(n), np.zeros((0, n)), np.zeros(0), np.zeros((0, n)),
                   np.zeros(0), np.full(n, -np.inf), np.full(n, np.inf))

    def to_json(self) -> dict:
        def arr(a):
            return [[_json_float(v) for v in row] for row in a] if a.ndim == 2 else [_json_float(v) for v in a]
        return {"n": self.n, "H": arr(self.H), "f": arr(self.f), "A": arr(self.A), "b": arr(self.b),
                "G": arr(self.G), "h": arr(self.h), "lo": arr(self.lo), "hi": arr(self.hi),
                "eq_tags": self.eq_tags, "ineq_tags": self.ineq_tags,
                "ineq_info": [list(i) for i in self.ineq_info],
                "lo_tags": self.lo_tags, "hi_tags": self.hi_tags}


def _json_float(v):
    v = float(v)
    if np.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


@dataclass
class StepSolution:
    """Solver output.

    Multipliers follow ``Hx + f + A'eq + G'ineq - lower + upper = 0`` with
    ``ineq, lower, upper >= 0``. ``active_set`` indexes rows in the order
    equalities, inequalities, lower bounds, upper bounds.
    """

    theta_dot: np.ndarray
    status: str
    kkt_residual: float = float("nan")
    active_set: list = field(default_factory=list)
    eq_dual: np.ndarray | None = None
    ineq_dual: np.ndarray | None = None
    lower_dual: np.ndarray | None = None
    upper_dual: np.ndarray | None = None
    iterations: int = 0
    certificate: dict | None = None
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def control_rows(velocity_maps, positions, desired, gains):
    """Stack goal rows ``J_v x = v_des + K (p_des - p)``.

    ``velocity_maps`` is (goals, 3, n), ``positions`` (goals, 3) and
    ``desired`` a list of ``(p_des, v_des)`` pairs.
    """
    velocity_maps = np.asarray(velocity_maps, dtype=float)
    n_goals = len(desired)
    if velocity_maps.shape[0] != n_goals:
        raise ValueError(f"{velocity_maps.shape[0]} goal chains for {n_goals} goals")
    n = velocity_maps.shape[2] if velocity_maps.ndim == 3 else 0
    m = velocity_maps.reshape(3 * n_goals, n)
    rhs = np.zeros(3 * n_goals)
    for g, (p_des, v_des) in enumerate(desired):
        k = gains(g) if callable(gains) else np.asarray(gains[g], dtype=float)
        rhs[3 * g:3 * g + 3] = np.asarray(v_des) + k @ (np.asarray(p_des) - positions[g])
    return m, rhs


def limit_bounds(theta, position_limits, velocity_limits, dt: float, names=None):
    """Joint-velocity bounds from position and velocity limits.

    ``lo = max(vmin, (qmin - q)/dt)`` and ``hi = min(vmax, (qmax - q)/dt)``.

    Raises:
      InfeasibleJointError: if a joint ends up with ``lo > hi``.
    """
    theta = np.asarray(theta, dtype=float)
    pos = np.asarray(position_limits, dtype=float).reshape(-1, 2)
    vel = np.asarray(velocity_limits, dtype=float).reshape(-1, 2)
    with np.errstate(invalid="ignore"):
        pos_lo = (pos[:, 0] - theta) / dt
        pos_hi = (pos[:, 1] - theta) / dt
    lo = np.maximum(vel[:, 0], pos_lo)
    hi = np.minimum(vel[:, 1], pos_hi)
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        j = int(bad[0])
        name = names[j] if names is not None else str(j)
        raise InfeasibleJointError(f"joint {name}: velocity bounds cross ({lo[j]:.6g} > {hi[j]:.6g}); "
                                   f"position {theta[j]:.6g} outside [{pos[j, 0]:.6g}, {pos[j, 1]:.6g}]",
                                   joint=name)
    lo_tags = ["joint-pos-limit" if p > v else "joint-vel-limit" for p, v in zip(pos_lo, vel[:, 0])]
    hi_tags = ["joint-pos-limit" if p < v else "joint-vel-limit" for p, v in zip(pos_hi, vel[:, 1])]
    return lo, hi, lo_tags, hi_tags


def assemble(state, desired, tuning: TuningConfig, model, *, boundary=None, kept=None,
             prev_theta_dot=None) -> StepProgram:
    """Build the step program for the current kinematic state.

    ``kept`` lists, per module, an ``(indices, centers, radii)`` triple of
    obstacle spheres that survived pruning (penetrated spheres included).
    Modules with no joint upstream contribute all-zero rows, which are dropped
    when trivially satisfied.
    """
    n = len(model.joints)
    lo, hi, lo_tags, hi_tags = limit_bounds(state.theta, model.position_limits, model.velocity_limits,
                                            tuning.dt, names=model.joints)
    vm, rhs = control_rows(state.goal_velocity_maps, state.goal_positions, desired, tuning.gain_matrix)

    H = np.eye(n)
    f = np.zeros(n)
    terms = []
    if tuning.mode == HARD:
        A, b = vm, rhs
        eq_tags = ["control-goal"] * len(rhs)
    else:
        lam = tuning.tracking_weight
        H = H + 2.0 * lam * vm.T @ vm
        f = -2.0 * lam * vm.T @ rhs
        A, b = np.zeros((0, n)), np.zeros(0)
        eq_tags = []
        terms.append(("control-goal", lam))
    H = 0.5 * (H + H.T)

    rows, bounds, tags, info = [], [], [], []

    def add_row(row, bound, tag, where):
        if not np.any(row) and bound >= 0.0:
            return
        rows.append(row)
        bounds.append(bound)
        tags.append(tag)
        info.append(where)

    maps = state.module_velocity_maps
    if boundary is not None and len(boundary):
        for i, p in enumerate(state.module_positions):
            d = boundary.distances(p)
            coeff = boundary.normals @ maps[i]
            for j in range(len(boundary)):
                add_row(coeff[j], float(d[j] - model.radii[i]), "boundary", (model.modules[i], j))

    if kept is not None:
        d_min = tuning.proximity_distance
        if d_min is None:
            d_min = 2.0 * float(np.max(model.radii))
        mu = tuning.proximity_weight
        prev = None if prev_theta_dot is None else np.asarray(prev_theta_dot, dtype=float)
        penalty = np.zeros((n, n))
        for i, (idx, centers, radii) in enumerate(kept):
            if len(idx) == 0:
                continue
            p = state.module_positions[i]
            r_i = model.radii[i]
            delta = centers - p
            dist = np.linalg.norm(delta, axis=1)
            gap = dist - radii - r_i
            gamma = 0.0
            if prev is not None:
                gamma = min(tuning.repulsion_ratio * float(np.linalg.norm(maps[i] @ prev)), tuning.repulsion_max)
            for k in range(len(idx)):
                if dist[k] <= 0.0:
                    continue
                s = delta[k] / dist[k]
                a = s @ maps[i]
                where = (model.modules[i], int(idx[k]))
                if gap[k] < tuning.contact_distance:
                    add_row(a, -gamma, "repulsive", where)
                    continue
                add_row(a, float(gap[k]), "obstacle", where)
                if gap[k] < d_min and tuning.mode == SOFT:
                    penalty += np.outer(a, a)
                    terms.append(("proximity", where, mu))
        H = H + 2.0 * mu * penalty

    G = np.array(rows).reshape(-1, n)
    h = np.array(bounds, dtype=float)
    return StepProgram(H, f, A, b, G, h, lo, hi, eq_tags, tags, info, lo_tags, hi_tags, terms)


def kkt_residual(qp: StepProgram, x, eq_dual, ineq_dual, lower_dual, upper_dual) -> float:
    """Largest violation of stationarity, feasibility, dual sign and complementarity.

    Stationarity is scaled by ``max(1, |H|, |f|)`` (infinity norms) so that
    heavily weighted soft programs are judged on relative accuracy.
    """
    x = np.asarray(x, dtype=float)
    grad = qp.H @ x + qp.f + qp.A.T @ eq_dual + qp.G.T @ ineq_dual - lower_dual + upper_dual
    scale = max(1.0, float(np.max(np.abs(qp.H))) if qp.H.size else 1.0,
                float(np.max(np.abs(qp.f))) if qp.f.size else 1.0)
    parts = [float(np.max(np.abs(grad), initial=0.0)) / scale]
    parts.append(float(np.max(np.abs(qp.A @ x - qp.b), initial=0.0)))
    slack = qp.h - qp.G @ x
    parts.append(float(np.max(-slack, initial=0.0)))
    with np.errstate(invalid="ignore"):
        lo_slack = np.where(np.isfinite(qp.lo), x - qp.lo, np.inf)
        hi_slack = np.where(np.isfinite(qp.hi), qp.hi - x, np.inf)
    parts.append(float(np.max(-lo_slack, initial=0.0)))
    parts.append(float(np.max(-hi_slack, initial=0.0)))
    for dual in (ineq_dual, lower_dual, upper_dual):
        parts.append(float(np.max(-np.asarray(dual), initial=0.0)))
    parts.append(float(np.max(np.abs(ineq_dual * slack), initial=0.0)))
    lo_gap = np.where(np.isfinite(lo_slack), lo_slack, 0.0)
    hi_gap = np.where(np.isfinite(hi_slack), hi_slack, 0.0)
    parts.append(float(np.max(np.abs(lower_dual * lo_gap), initial=0.0)))
    parts.append(float(np.max(np.abs(upper_dual * hi_gap), initial=0.0)))
    return max(parts)


def solve(qp: StepProgram, tol: float = 1e-9, max_iter: int = 200) -> StepSolution:
    """Solve a strictly convex QP with the Goldfarb-Idnani dual active-set method.

    Starting from the unconstrained minimizer, the most violated constraint is
    added at each outer step; a constraint already active is dropped whenever
    its multiplier would turn negative. Equalities are added first and never
    dropped. Each step recomputes the directions from ``L^-1 N`` (``H = L L'``)
    with a QR factorization, which is cheap at the sizes used here.

    Returns status ``optimal``, ``infeasible`` (with a certificate) or
    ``max-iterations``.

    Raises:
      ValueError: if ``H`` is not positive definite or blocks are mis-sized.
    """
    start = time.perf_counter()
    n = qp.n
    me, mi = qp.A.shape[0], qp.G.shape[0]
    if qp.A.shape != (me, n) or qp.G.shape != (mi, n) or qp.f.shape != (n,):
        raise ValueError("program blocks have inconsistent sizes")

    def finish(x, status, active=(), u=(), iters=0, certificate=None):
        sol = _unpack(qp, x, status, list(active), list(u), iters, certificate)
        sol.solve_time = time.perf_counter() - start
        return sol

    crossing = np.flatnonzero(qp.lo > qp.hi)
    if crossing.size:
        j = int(crossing[0])
        return finish(np.zeros(n), "infeasible",
                      certificate={"kind": "bound-crossing", "variable": j,
                                   "lo": float(qp.lo[j]), "hi": float(qp.hi[j])})

    # Every constraint in >= form: N[k] . x >= c[k].
    lo_idx = np.flatnonzero(np.isfinite(qp.lo))
    hi_idx = np.flatnonzero(np.isfinite(qp.hi))
    eye = np.eye(n)
    N = np.vstack([qp.A, -qp.G, eye[lo_idx], -eye[hi_idx]])
    c = np.concatenate([qp.b, -qp.h, qp.lo[lo_idx], -qp.hi[hi_idx]])
    # Row k of N maps back to global row number ``owner[k]``.
    owner = np.concatenate([np.arange(me), me + np.arange(mi), me + mi + lo_idx,
                            me + mi + n + hi_idx]).astype(int)
    sign = np.ones(len(c))

    try:
        chol, _ = cho_factor(qp.H, lower=True)
    except np.linalg.LinAlgError:
        raise ValueError("Hessian is not positive definite") from None
    L = np.tril(chol)
    Linv = solve_triangular(L, eye, lower=True)
    x = -(Linv.T @ (Linv @ qp.f))

    active: list[int] = []
    u: list[float] = []
    iters = 0

    def directions(normal):
        d = Linv @ normal
        if not active:
            return Linv.T @ d, np.zeros(0), d
        B = Linv @ (N[active] * sign[active, None]).T
        Q, R = qr(B, mode="economic")
        qd = Q.T @ d
        proj = d - Q @ qd
        return Linv.T @ proj, solve_triangular(R, qd), proj

    def add(p):
        """Bring constraint ``p`` into the active set; False if infeasible."""
        nonlocal x, iters
        up = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                return None
            normal = N[p] * sign[p]
            z, r, proj = directions(normal)
            t1, drop = np.inf, -1
            for k, (j, rj) in enumerate(zip(active, r)):
                if j >= me and rj > 1e-14 and u[k] / rj < t1:
                    t1, drop = u[k] / rj, k
            s = normal @ x - c[p] * sign[p]
            zn = z @ normal
            full = np.linalg.norm(proj) > 1e-10 * max(1.0, np.linalg.norm(Linv @ normal))
            t2 = -s / zn if full and zn > 0 else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                return False
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x + t * z
            for k in range(len(u)):
                u[k] -= t * r[k]
            up += t
            if t2 <= t1:
                active.append(p)
                u.append(up)
                return True
            del active[drop]
            del u[drop]

    def certificate(p):
        normal = N[p] * sign[p]
        _, r, _ = directions(normal)
        return {"kind": "dependent-rows", "row": int(owner[p]),
                "combination": {int(owner[j]): float(rj * sign[j]) for j, rj in zip(active, r)}}

    for p in range(me):
        s = N[p] @ x - c[p]
        if abs(s) <= tol:
            z, _, proj = directions(N[p])
            if np.linalg.norm(proj) <= 1e-10 * max(1.0, np.linalg.norm(Linv @ N[p])):
                continue  # redundant and consistent
        if s > 0:
            sign[p] = -1.0
        ok = add(p)
        if ok is None:
            return finish(x, "max-iterations", active, u, iters)
        if not ok:
            return finish(x, "infeasible", active, u, iters, certificate(p))

    ineq = np.arange(me, len(c))
    while True:
        if ineq.size == 0:
            break
        slack = N[ineq] @ x - c[ineq]
        if active:
            slack[np.isin(ineq, active)] = np.inf
        k = int(np.argmin(slack))
        if slack[k] >= -tol:
            break
        p = int(ineq[k])
        ok = add(p)
        if ok is None:
            return finish(x, "max-iterations", active, u, iters)
        if not ok:
            return finish(x, "infeasible", active, u, iters, certificate(p))

    return finish(x, "optimal", [int(owner[j]) for j in active],
                  [(u[k] * sign[j], int(owner[j])) for k, j in enumerate(active)], iters)


def _unpack(qp, x, status, active, u, iters, certificate) -> StepSolution:
    n, me, mi = qp.n, qp.A.shape[0], qp.G.shape[0]
    eq, ineq = np.zeros(me), np.zeros(mi)
    lower, upper = np.zeros(n), np.zeros(n)
    if status == "optimal":
        for value, row in u:
            if row < me:
                eq[row] = -value
            elif row < me + mi:
                ineq[row - me] = value
            elif row < me + mi + n:
                lower[row - me - mi] = value
            else:
                upper[row - me - mi - n] = value
        res = kkt_residual(qp, x, eq, ineq, lower, upper)
    else:
        active, res = [], float("nan")
    return StepSolution(np.asarray(x, dtype=float), status, res, sorted(active), eq, ineq, lower, upper,
                        iters, certificate)


def dump_program(path, qp: StepProgram, sol: StepSolution | None = None, **extra) -> None:
    """Write a program (and its solution) as JSON for offline inspection."""
    data = {"program": qp.to_json(), **extra}
    if sol is not None:
        data["solution"] = {"status": sol.status, "theta_dot": sol.theta_dot.tolist(),
                            "kkt_residual": _json_float(sol.kkt_residual) if np.isfinite(sol.kkt_residual) else None,
                            "active_set": sol.active_set, "iterations": sol.iterations,
                            "certificate": sol.certificate}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)
