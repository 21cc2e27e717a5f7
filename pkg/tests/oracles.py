"""Independent reference computations used by the tests."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import expm, logm

from modqp.kinematics import Base, Connection, ConfigurationGraph
from modqp.lie import Transform


def brute_force_qp(H, f, A, b, G, h, lo, hi, tol=1e-9):
    """Exact minimizer by enumerating active sets.

    Each variable is free, at its lower bound or at its upper bound; each
    general inequality is active or not. Every choice with full-row-rank
    active rows gives one KKT system; those are solved in batches. The
    feasible candidate with correctly signed multipliers and the smallest
    objective wins. Returns ``None`` when no candidate qualifies.
    """
    n, me, mi = len(f), len(b), len(h)
    eye = np.eye(n)
    # row table: equalities, inequalities, lower bounds, upper bounds
    R = np.vstack([A.reshape(me, n), G.reshape(mi, n), eye, eye])
    rhs_all = np.concatenate([b, h, np.where(np.isfinite(lo), lo, 0.0), np.where(np.isfinite(hi), hi, 0.0)])
    var_states = [[-1] + ([me + mi + i] if np.isfinite(lo[i]) else []) + ([me + mi + n + i] if np.isfinite(hi[i]) else [])
                  for i in range(n)]
    groups = {}
    for vs in itertools.product(*var_states):
        bounds = [v for v in vs if v >= 0]
        for k in range(mi + 1):
            for act in itertools.combinations(range(me, me + mi), k):
                rows = list(range(me)) + list(act) + bounds
                if len(rows) <= n:
                    groups.setdefault(len(rows), []).append(rows)
    best, best_val = None, np.inf
    for m, combos in groups.items():
        idx = np.array(combos, dtype=int).reshape(len(combos), m)
        C = R[idx]  # (B, m, n)
        if m:
            sv = np.linalg.svd(C, compute_uv=False)
            good = sv[:, -1] > 1e-9 * np.maximum(1.0, sv[:, 0])
            idx, C = idx[good], C[good]
        B = len(idx)
        if B == 0:
            continue
        K = np.zeros((B, n + m, n + m))
        K[:, :n, :n] = H
        K[:, :n, n:] = np.transpose(C, (0, 2, 1))
        K[:, n:, :n] = C
        rhs = np.concatenate([np.broadcast_to(-f, (B, n)), rhs_all[idx]], axis=1)
        sol = np.linalg.solve(K, rhs[..., None])[..., 0]
        x, lam = sol[:, :n], sol[:, n:]
        # H x + f + C' lam = 0: "<=" rows and upper bounds need lam >= 0,
        # lower bounds need lam <= 0, equalities are free.
        sign = np.where(idx < me, 0.0, np.where((idx >= me + mi) & (idx < me + mi + n), -1.0, 1.0))
        ok = np.all(lam * sign >= -tol, axis=1)
        if mi:
            ok &= np.all(x @ G.T - h <= tol, axis=1)
        ok &= np.all(x >= lo - tol, axis=1) & np.all(x <= hi + tol, axis=1)
        if me:
            ok &= np.all(np.abs(x @ A.T - b) <= tol, axis=1)
        if not np.any(ok):
            continue
        xs = x[ok]
        vals = 0.5 * np.einsum("bi,ij,bj->b", xs, H, xs) + xs @ f
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best, best_val = xs[j], vals[j]
    return best


def random_qp(rng, n_max=6, mi_max=4, feasible=True):
    n = int(rng.integers(1, n_max + 1))
    me = int(rng.integers(0, min(n - 1, 2) + 1))
    mi = int(rng.integers(0, mi_max + 1))
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 2
    x0 = rng.normal(size=n) * 0.5
    A = rng.normal(size=(me, n))
    b = A @ x0
    G = rng.normal(size=(mi, n))
    h = G @ x0 + (rng.uniform(0, 1, mi) if feasible else rng.normal(size=mi))
    lo = x0 - rng.uniform(0.1, 2, n)
    hi = x0 + rng.uniform(0.1, 2, n)
    free = rng.uniform(size=n) < 0.2
    lo[free] = -np.inf
    hi[rng.uniform(size=n) < 0.2] = np.inf
    return H, f, A, b, G, h, lo, hi


def kkt_check(H, f, A, b, G, h, lo, hi, x, eq, ineq, lower, upper):
    """Residual of the KKT conditions, recomputed from scratch."""
    r = [np.abs(H @ x + f + A.T @ eq + G.T @ ineq - lower + upper).max(initial=0.0)
         / max(1.0, np.abs(H).max(), np.abs(f).max(initial=0.0))]
    r.append(np.abs(A @ x - b).max(initial=0.0))
    r.append(np.maximum(G @ x - h, 0).max(initial=0.0))
    r.append(np.maximum(lo - x, 0).max(initial=0.0))
    r.append(np.maximum(x - hi, 0).max(initial=0.0))
    r.append(np.maximum(-ineq, 0).max(initial=0.0))
    r.append(np.maximum(-lower, 0).max(initial=0.0))
    r.append(np.maximum(-upper, 0).max(initial=0.0))
    r.append(np.abs(ineq * (h - G @ x)).max(initial=0.0))
    fl, fh = np.isfinite(lo), np.isfinite(hi)
    r.append(np.abs(lower[fl] * (x[fl] - lo[fl])).max(initial=0.0))
    r.append(np.abs(upper[fh] * (hi[fh] - x[fh])).max(initial=0.0))
    r.append(np.abs(lower[~fl]).max(initial=0.0))
    r.append(np.abs(upper[~fh]).max(initial=0.0))
    return float(max(r))


def fd_spatial_jacobian(transform_of, theta, step=1e-6):
    """Columns ``vee(dg/dtheta_i g^-1)`` by central differences of ``transform_of``."""
    theta = np.asarray(theta, dtype=float)
    g = transform_of(theta).matrix()
    ginv = np.linalg.inv(g)
    cols = []
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = step
        d = (transform_of(theta + e).matrix() - transform_of(theta - e).matrix()) / (2 * step)
        m = d @ ginv
        cols.append(np.concatenate([m[:3, 3], [m[2, 1], m[0, 2], m[1, 0]]]))
    return np.array(cols).T.reshape(6, len(theta))


def path_poses(chain, theta):
    """World pose (4x4) of every vertex on ``chain``'s path at joint values ``theta``.

    Multiplies the rest offsets and the matrix exponentials of the joint
    twists edge by edge, without the package's closed-form exponential.
    """
    values = dict(zip(chain.joints, theta))
    g = np.eye(4)
    poses = {"W": g}
    for e in chain.edges:
        for f in e.factors:
            if isinstance(f, Transform):
                g = g @ f.matrix()
            else:
                g = g @ expm_twist(f.twist, f.sign * values[f.joint])
        poses[e.dst] = g
    return poses


def fd_path_jacobians(chain, theta, step=1e-6):
    """Central-difference spatial Jacobians of every vertex on the chain's path."""
    theta = np.asarray(theta, dtype=float)
    base = path_poses(chain, theta)
    inv = {k: np.linalg.inv(v) for k, v in base.items()}
    out = {k: np.zeros((6, len(theta))) for k in base}
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = step
        plus, minus = path_poses(chain, theta + e), path_poses(chain, theta - e)
        for k in base:
            m = (plus[k] - minus[k]) / (2 * step) @ inv[k]
            out[k][:, i] = [m[0, 3], m[1, 3], m[2, 3], m[2, 1], m[0, 2], m[1, 0]]
    return out


def expm_twist(xi, theta):
    """Matrix exponential of ``hat(xi) * theta`` computed numerically."""
    m = np.zeros((4, 4))
    w = xi[3:]
    m[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
    m[:3, 3] = xi[:3]
    return expm(m * theta)


def log_se3(g: np.ndarray) -> np.ndarray:
    return np.real(logm(g))


FAMILIES = {
    "ckbot": ["ckbot-ubar", "ckbot-cr"],
    "smores": ["smores-ep"],
}


def random_chain(rng, library, n_modules, family=None):
    """Random serial configuration with random connectors and cases.

    Returns the configuration and the frame at the far end of the chain.
    Module kinds are drawn from one connector family so every mate is legal.
    """
    family = family or rng.choice(sorted(FAMILIES))
    kinds = [str(rng.choice(FAMILIES[family])) for _ in range(n_modules)]
    modules = tuple((f"m{i + 1}", k) for i, k in enumerate(kinds))
    used = {}
    for mid, kind in modules:
        used[mid] = set()

    def pick(mid, kind):
        free = [c for c in library[kind].connectors if c not in used[mid]]
        c = str(rng.choice(free))
        used[mid].add(c)
        return c

    base_conn = pick("m1", kinds[0])
    conns = []
    for i in range(n_modules - 1):
        a, b = modules[i], modules[i + 1]
        ca = pick(a[0], a[1])
        cb = pick(b[0], b[1])
        n_cases = library[a[1]].families[library[a[1]].connector(ca).family]
        conns.append(Connection(a[0], ca, b[0], cb, int(rng.integers(0, n_cases))))
    last = modules[-1]
    end = pick(last[0], last[1])
    rot = Transform.from_matrix(expm_twist(np.concatenate([rng.normal(size=3) * 0.1, rng.normal(size=3)]), 1.0))
    config = ConfigurationGraph(modules, tuple(conns), Base("m1", base_conn, rot))
    return config, f"{last[0]}.{end}"
