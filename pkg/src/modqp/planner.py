"""Per-step control loop: refine obstacles, assemble and solve, integrate.

:func:`run` repeats :meth:`Planner.plan_step` and :func:`integrate` at a
fixed period until the summed distance of the goal frames to their final
targets drops below ``epsilon``, a step fails, or the step budget runs out.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import qp as qpcore
from .environment import refine_indices
from .errors import ModqpError
from .kinematics import KinematicState, RobotModel
from .scenario import Scenario

log = logging.getLogger(__name__)

CONVERGED = "converged"
BUDGET = "budget"


@dataclass
class StepOutcome:
    solution: qpcore.StepSolution
    program: qpcore.StepProgram
    state: KinematicState
    desired: list
    kept_counts: np.ndarray
    kept: list
    assemble_time: float


@dataclass
class StepRecord:
    step: int
    t: float
    theta: np.ndarray
    theta_dot: np.ndarray
    goal_positions: np.ndarray
    desired_positions: np.ndarray
    module_positions: np.ndarray
    boundary_margin: float
    obstacle_margin: float
    kept_counts: np.ndarray
    status: str
    constraint_residual: float
    solve_time: float = 0.0


@dataclass
class TrajectoryLog:
    joints: list
    modules: list
    goal_frames: list
    dt: float
    records: list = field(default_factory=list)
    reason: str = ""
    final_theta: np.ndarray | None = None
    final_goal_positions: np.ndarray | None = None
    final_module_positions: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    @property
    def converged(self) -> bool:
        return self.reason == CONVERGED

    @property
    def budget_exhausted(self) -> bool:
        return self.reason == BUDGET

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def goal_errors(self, goals) -> np.ndarray:
        """Summed distance of the goal frames to their final targets, per step."""
        finals = np.array([g.final for g in goals])
        return np.array([np.sum(np.linalg.norm(r.goal_positions - finals, axis=1)) for r in self.records])

    def solve_time_stats(self) -> dict:
        ts = self.column("solve_time") if self.records else np.zeros(0)
        if ts.size == 0:
            return {"mean": 0.0, "std": 0.0, "max": 0.0}
        return {"mean": float(ts.mean()), "std": float(ts.std()), "max": float(ts.max())}

    # Tabular form. Solve times are left out so identical runs give identical files.

    def header(self) -> list:
        cols = ["step", "t"]
        cols += [f"theta:{j}" for j in self.joints]
        cols += [f"theta_dot:{j}" for j in self.joints]
        for g in self.goal_frames:
            cols += [f"goal:{g}:{a}" for a in "xyz"]
        for g in self.goal_frames:
            cols += [f"desired:{g}:{a}" for a in "xyz"]
        for m in self.modules:
            cols += [f"module:{m}:{a}" for a in "xyz"]
        cols += [f"kept:{m}" for m in self.modules]
        cols += ["boundary_margin", "obstacle_margin", "constraint_residual", "status"]
        return cols

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for r in self.records:
                row = [str(r.step), _fmt(r.t)]
                row += [_fmt(v) for v in r.theta]
                row += [_fmt(v) for v in r.theta_dot]
                row += [_fmt(v) for v in r.goal_positions.ravel()]
                row += [_fmt(v) for v in r.desired_positions.ravel()]
                row += [_fmt(v) for v in r.module_positions.ravel()]
                row += [str(int(c)) for c in r.kept_counts]
                row += [_fmt(r.boundary_margin), _fmt(r.obstacle_margin), _fmt(r.constraint_residual), r.status]
                w.writerow(row)

    def write_goals_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = ["step", "t"]
            for g in self.goal_frames:
                cols += [f"{g}:actual_{a}" for a in "xyz"] + [f"{g}:desired_{a}" for a in "xyz"]
            w.writerow(cols)
            for r in self.records:
                row = [str(r.step), _fmt(r.t)]
                for k in range(len(self.goal_frames)):
                    row += [_fmt(v) for v in r.goal_positions[k]] + [_fmt(v) for v in r.desired_positions[k]]
                w.writerow(row)


def _fmt(v) -> str:
    return f"{float(v):.9g}"


def read_trajectory(path) -> TrajectoryLog:
    """Parse a trajectory CSV written by :meth:`TrajectoryLog.write_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    head = rows[0]
    joints = [c.split(":", 1)[1] for c in head if c.startswith("theta:")]
    goals = [c.split(":")[1] for c in head if c.startswith("goal:") and c.endswith(":x")]
    modules = [c.split(":", 1)[1] for c in head if c.startswith("kept:")]
    n, a, m = len(joints), len(goals), len(modules)
    out = TrajectoryLog(joints, modules, goals, dt=float("nan"))
    for row in rows[1:]:
        vals = row[2:-1]
        i = 0

        def take(k):
            nonlocal i
            chunk = np.array([float(x) for x in vals[i:i + k]])
            i += k
            return chunk

        theta, theta_dot = take(n), take(n)
        gp, dp, mp = take(3 * a).reshape(a, 3), take(3 * a).reshape(a, 3), take(3 * m).reshape(m, 3)
        kept = take(m).astype(int)
        bm, om, res = take(3)
        out.records.append(StepRecord(int(row[0]), float(row[1]), theta, theta_dot, gp, dp, mp,
                                      float(bm), float(om), kept, row[-1], float(res)))
    if len(out.records) > 1:
        out.dt = out.records[1].t - out.records[0].t
    return out


class StreamSink:
    """Writes one line per step: ``t,theta_dot_1,...,theta_dot_n`` in global joint order."""

    def __init__(self, stream, decimals: int = 9):
        self.stream = stream
        self.decimals = decimals

    def publish(self, t: float, theta_dot) -> None:
        d = self.decimals
        self.stream.write(",".join([f"{t:.6f}"] + [f"{v:.{d}f}" for v in theta_dot]) + "\n")
        self.stream.flush()


def integrate(theta, theta_dot, dt: float, position_limits=None) -> np.ndarray:
    """One Euler step ``theta + dt * theta_dot``, clamped to the position limits."""
    theta = np.asarray(theta, dtype=float)
    theta_dot = np.asarray(theta_dot, dtype=float)
    if theta.shape != theta_dot.shape:
        raise ValueError(f"theta has shape {theta.shape} but theta_dot has {theta_dot.shape}")
    nxt = theta + dt * theta_dot
    if position_limits is None:
        return nxt
    lim = np.asarray(position_limits, dtype=float).reshape(-1, 2)
    clamped = np.clip(nxt, lim[:, 0], lim[:, 1])
    overshoot = np.max(np.abs(clamped - nxt), initial=0.0)
    if overshoot > 1e-9:
        log.warning("joint position clamp bound by %.3g rad", overshoot)
    return clamped


def _margins(state: KinematicState, model: RobotModel, env):
    boundary = np.inf
    if env.boundary is not None and len(env.boundary):
        d = env.boundary.offsets[None, :] - state.module_positions @ env.boundary.normals.T
        boundary = float(np.min(d - model.radii[:, None]))
    obstacle = np.inf
    if len(env.radii):
        dist = np.linalg.norm(state.module_positions[:, None, :] - env.centers[None, :, :], axis=2)
        obstacle = float(np.min(dist - env.radii[None, :] - model.radii[:, None]))
    return boundary, obstacle


class Planner:
    """Binds a scenario to its robot model and plans one step at a time."""

    def __init__(self, scenario: Scenario, mode: str | None = None):
        self.scenario = scenario
        self.model = scenario.build_model()
        self.env = scenario.environment
        self.tuning = scenario.tuning
        if mode is not None:
            self.tuning = qpcore.TuningConfig(**{**vars(scenario.tuning), "mode": mode})

    def refine(self, state: KinematicState) -> list:
        """Per-module ``(indices, centers, radii)`` of spheres to constrain against.

        Spheres that already contain a module center skip pruning and are kept,
        so they receive a repulsive row.
        """
        env = self.env
        out = []
        for i, p in enumerate(state.module_positions):
            if not len(env.radii):
                out.append((np.zeros(0, dtype=int), np.zeros((0, 3)), np.zeros(0)))
                continue
            dist = np.linalg.norm(env.centers - p, axis=1)
            inside = np.flatnonzero(dist <= env.radii)
            outside = np.flatnonzero(dist > env.radii)
            idx = outside[refine_indices(p, self.model.radii[i], env.centers[outside], env.radii[outside])]
            idx = np.concatenate([inside, idx])
            out.append((idx, env.centers[idx], env.radii[idx]))
        return out

    def plan_step(self, theta, t: float, prev_theta_dot=None) -> StepOutcome:
        """Assemble and solve the program for the state ``theta`` at time ``t``.

        Obstacle sets and boundary rows are rebuilt from the current state on
        every call.
        """
        start = time.perf_counter()
        state = self.model.evaluate(theta)
        desired = [g.desired(t) for g in self.scenario.goals]
        kept = self.refine(state)
        program = qpcore.assemble(state, desired, self.tuning, self.model, boundary=self.env.boundary,
                                  kept=kept, prev_theta_dot=prev_theta_dot)
        assembled = time.perf_counter()
        sol = qpcore.solve(program, tol=self.tuning.solver_tol, max_iter=self.tuning.max_iter)
        sol.solve_time = time.perf_counter() - start
        counts = np.array([len(k[0]) for k in kept], dtype=int)
        return StepOutcome(sol, program, state, desired, counts, kept, assembled - start)

    def goal_error(self, state: KinematicState) -> float:
        finals = np.array([g.final for g in self.scenario.goals])
        return float(np.sum(np.linalg.norm(state.goal_positions - finals, axis=1)))


def _residual(program: qpcore.StepProgram, x) -> float:
    parts = [np.max(np.abs(program.A @ x - program.b), initial=0.0),
             np.max(program.G @ x - program.h, initial=0.0),
             np.max(program.lo - x, initial=0.0), np.max(x - program.hi, initial=0.0)]
    return float(max(parts))


def run(scenario: Scenario, *, mode: str | None = None, sinks=(), on_step=None, max_steps=None):
    """Run the control loop. Returns ``(result, log)``.

    ``sinks`` receive every command through ``publish(t, theta_dot)``;
    ``on_step(step, outcome)`` is called after each solve (used for QP dumps).
    ``log.reason`` is ``converged``, ``budget`` or a failure description.
    """
    planner = Planner(scenario, mode)
    model, tuning = planner.model, planner.tuning
    dt = tuning.dt
    budget = scenario.max_steps if max_steps is None else max_steps
    horizon = max(g.horizon for g in scenario.goals)
    out = TrajectoryLog(list(model.joints), list(model.modules), scenario.goal_frames, dt)
    theta = model.initial_theta()
    prev = None
    result = False
    out.reason = BUDGET
    for k in range(budget + 1):
        t = k * dt
        state = model.evaluate(theta)
        # waypoint goals only count as reached once their schedule has ended
        if planner.goal_error(state) < tuning.epsilon and (t >= horizon or not np.isfinite(horizon)):
            result, out.reason = True, CONVERGED
            break
        if k == budget:
            break
        try:
            step = planner.plan_step(theta, t, prev)
        except ModqpError as exc:
            out.reason = f"{type(exc).__name__}: {exc}"
            break
        sol = step.solution
        if on_step is not None:
            on_step(k, step)
        b_margin, o_margin = _margins(step.state, model, planner.env)
        theta_dot = sol.theta_dot if sol.ok else np.zeros(model.n)
        out.records.append(StepRecord(
            k, t, theta.copy(), theta_dot.copy(), step.state.goal_positions.copy(),
            np.array([d[0] for d in step.desired]).reshape(-1, 3), step.state.module_positions.copy(),
            b_margin, o_margin, step.kept_counts, sol.status,
            _residual(step.program, sol.theta_dot) if sol.ok else float("nan"), sol.solve_time))
        if not sol.ok:
            out.reason = f"solver {sol.status} at step {k}"
            break
        for s in sinks:
            s.publish(t, theta_dot)
        theta = integrate(theta, theta_dot, dt, model.position_limits)
        prev = theta_dot
    final = model.evaluate(theta)
    out.final_theta = theta
    out.final_goal_positions = final.goal_positions
    out.final_module_positions = final.module_positions
    return result, out
