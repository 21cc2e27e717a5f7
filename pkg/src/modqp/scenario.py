"""Scenario files: robot, environment, goals and tuning for one run.

A scenario file carries the header ``modqp-scenario v1``. The configuration
and the environment may be given inline or as paths (relative to the file).
Goals name a frame and either a ``destination``, a ``displacement`` from the
frame's initial position, or a list of timed ``waypoints``::

    goals:
      - frame: m5.T
        displacement: [0.0, 0.15, 0.0]
      - frame: m9.T
        waypoints:
          - {t: 0.0, displacement: [0, 0, 0]}
          - {t: 4.0, displacement: [0.05, 0, 0]}

:func:`dump_scenario` writes a normalized, self-contained file (everything
inline, all goals absolute) that loads back to an equal scenario.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .environment import ENV_HEADER, Environment, environment_from_tree
from .errors import ModqpError
from .fileio import Reader, dump_text, parse_text, read_file
from .kinematics import (CONFIG_HEADER, ConfigurationGraph, RobotModel, build_kinematics_graph,
                         config_from_tree, config_to_tree)
from .modules import bundled_library, bundled_path, load_library
from .qp import TuningConfig

SCENARIO_HEADER = "modqp-scenario v1"
DEFAULT_MAX_STEPS = 20000


@dataclass(eq=False)
class Goal:
    """Desired position of one frame over time.

    A destination goal has a single waypoint and an unbounded horizon; the
    desired velocity is zero. Waypoint goals interpolate linearly and hold the
    last position afterwards.
    """

    frame: str
    times: np.ndarray
    positions: np.ndarray
    destination: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(self.times) != len(self.positions) or len(self.times) == 0:
            raise ValueError("a goal needs one time per waypoint and at least one waypoint")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("waypoint times must be strictly increasing")

    @classmethod
    def to_destination(cls, frame, position) -> "Goal":
        return cls(frame, [0.0], [position], destination=True)

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def horizon(self) -> float:
        return np.inf if self.destination else float(self.times[-1])

    def desired(self, t: float):
        """``(position, velocity)`` wanted at time ``t``."""
        times, pos = self.times, self.positions
        if len(times) == 1 or t < times[0]:
            return pos[0].copy(), np.zeros(3)
        if t >= times[-1]:
            return pos[-1].copy(), np.zeros(3)
        k = int(np.searchsorted(times, t, side="right")) - 1
        rate = (pos[k + 1] - pos[k]) / (times[k + 1] - times[k])
        return pos[k] + rate * (t - times[k]), rate

    def to_tree(self) -> dict:
        if self.destination:
            return {"frame": self.frame, "destination": self.positions[0].tolist()}
        return {"frame": self.frame,
                "waypoints": [{"t": float(t), "position": p.tolist()}
                              for t, p in zip(self.times, self.positions)]}


@dataclass(eq=False)
class Scenario:
    config: ConfigurationGraph
    goals: list
    environment: Environment = field(default_factory=Environment)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    initial_theta: dict = field(default_factory=dict)
    max_steps: int = DEFAULT_MAX_STEPS
    seed: int | None = None
    name: str = "scenario"
    module_paths: list = field(default_factory=list)
    library: dict | None = None
    source: Path | None = None

    def __post_init__(self):
        if self.library is None:
            self.library = load_library(self.module_paths) if self.module_paths else bundled_library()

    @property
    def goal_frames(self) -> list:
        return [g.frame for g in self.goals]

    def build_model(self) -> RobotModel:
        graph = build_kinematics_graph(self.config, self.library)
        return RobotModel(graph, self.goal_frames, self.initial_theta)

    def to_tree(self) -> dict:
        out = {"name": self.name}
        if self.module_paths:
            out["modules"] = [str(p) for p in self.module_paths]
        out["config"] = config_to_tree(self.config)
        env = self.environment.to_tree()
        if env:
            out["environment"] = env
        out["goals"] = [g.to_tree() for g in self.goals]
        out["tuning"] = self.tuning.to_tree()
        if self.initial_theta:
            out["initial_theta"] = {k: float(v) for k, v in self.initial_theta.items()}
        out["max_steps"] = int(self.max_steps)
        if self.seed is not None:
            out["seed"] = int(self.seed)
        return out

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.to_tree() == other.to_tree()


_TUNING_FIELDS = {f.name for f in fields(TuningConfig)}


def _tuning(reader: Reader, node) -> TuningConfig:
    kwargs = {}
    for key, value in node.items():
        where = f"tuning.{key}"
        if key not in _TUNING_FIELDS:
            raise reader.error(f"unknown tuning key (known: {', '.join(sorted(_TUNING_FIELDS))})",
                               node, key, where)
        if key == "mode":
            kwargs[key] = reader.string(node, key, where)
        elif key == "gains":
            try:
                arr = np.atleast_2d(np.asarray(value, dtype=float))
            except (TypeError, ValueError):
                arr = None
            if arr is None or arr.ndim != 2 or arr.shape[1] != 3 or arr.size == 0:
                raise reader.error("gains must be a 3-vector or a list of 3-vectors", node, key, where)
            kwargs[key] = arr.tolist()
        elif key == "max_iter":
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise reader.error("expected a positive integer", node, key, where)
            kwargs[key] = value
        elif key == "proximity_distance" and value is None:
            kwargs[key] = None
        else:
            kwargs[key] = reader.number(node, key, where)
    try:
        return TuningConfig(**kwargs)
    except ValueError as exc:
        raise reader.error(str(exc), node, field="tuning") from None


def _sub_tree(reader: Reader, data, key, header, base_dir, loader, **kw):
    """Inline mapping, or a path to a separate file with its own header."""
    value = data[key]
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = base_dir / path
        return loader(read_file(path, header), path=path, **kw)
    if not isinstance(value, dict):
        raise reader.error("expected a mapping or a file path", data, key, key)
    return loader(value, path=reader.path, **kw)


def scenario_from_tree(data, path=None, seed=None) -> Scenario:
    reader = Reader(path)
    base_dir = Path(path).parent if path is not None else Path.cwd()
    name = reader.string(data, "name", "name", default=Path(path).stem if path else "scenario")

    module_paths = []
    for i, p in enumerate(reader.sequence(data, "modules", "modules", default=[])):
        if not isinstance(p, str):
            raise reader.error("expected a descriptor path", data["modules"], i, f"modules[{i}]")
        q = Path(p)
        module_paths.append(q if q.is_absolute() else (base_dir / q).resolve())
    library = load_library(module_paths) if module_paths else bundled_library()

    reader.require(data, "config", "config")
    config = _sub_tree(reader, data, "config", CONFIG_HEADER, base_dir, config_from_tree)
    if seed is None and "seed" in data:
        s = data["seed"]
        if isinstance(s, bool) or not isinstance(s, int):
            raise reader.error("seed must be an integer", data, "seed", "seed")
        seed = s
    env = Environment()
    if "environment" in data:
        env = _sub_tree(reader, data, "environment", ENV_HEADER, base_dir, environment_from_tree, seed=seed)

    tuning = _tuning(reader, reader.mapping(data, "tuning", "tuning", default={}))

    initial = {}
    init_node = reader.mapping(data, "initial_theta", "initial_theta", default={})
    for key in init_node:
        initial[str(key)] = reader.number(init_node, key, f"initial_theta.{key}")

    max_steps = data.get("max_steps", DEFAULT_MAX_STEPS)
    if isinstance(max_steps, bool) or not isinstance(max_steps, int) or max_steps < 1:
        raise reader.error("max_steps must be a positive integer", data, "max_steps", "max_steps")

    try:
        graph = build_kinematics_graph(config, library)
    except ModqpError as exc:
        raise reader.error(str(exc), data, "config", "config") from None
    for key in initial:
        try:
            joint = graph.joint(key)
        except (ModqpError, KeyError):
            raise reader.error(f"unknown joint {key!r}", init_node, key, f"initial_theta.{key}") from None
        lo, hi = joint.position_limits
        if not lo <= initial[key] <= hi:
            raise reader.error(f"initial value {initial[key]} outside joint range [{lo}, {hi}]",
                               init_node, key, f"initial_theta.{key}")

    goal_nodes = reader.sequence(data, "goals", "goals")
    if not goal_nodes:
        raise reader.error("at least one goal is required", data, "goals", "goals")
    frames = []
    for i, node in enumerate(goal_nodes):
        frame = reader.string(node, "frame", f"goals[{i}].frame")
        if frame not in graph or frame == "W":
            raise reader.error(f"goal frame {frame!r} is not in the kinematics graph", node, "frame",
                               f"goals[{i}].frame")
        if frame in frames:
            raise reader.error(f"duplicate goal frame {frame!r}", node, "frame", f"goals[{i}].frame")
        frames.append(frame)
    model = RobotModel(graph, frames, initial)
    start = model.evaluate(model.initial_theta()).goal_positions

    goals = []
    for i, node in enumerate(goal_nodes):
        where = f"goals[{i}]"
        kinds = [k for k in ("destination", "displacement", "waypoints") if k in node]
        if len(kinds) != 1:
            raise reader.error("give exactly one of destination, displacement, waypoints", node,
                               field=where)
        kind = kinds[0]
        if kind == "destination":
            goals.append(Goal.to_destination(frames[i], reader.vector(node, kind, f"{where}.{kind}")))
        elif kind == "displacement":
            goals.append(Goal.to_destination(frames[i], start[i] + reader.vector(node, kind, f"{where}.{kind}")))
        else:
            times, positions = [], []
            wps = reader.sequence(node, kind, f"{where}.waypoints")
            if not wps:
                raise reader.error("waypoint list is empty", node, kind, f"{where}.waypoints")
            for j, wp in enumerate(wps):
                w = f"{where}.waypoints[{j}]"
                t = reader.number(wp, "t", f"{w}.t")
                if t < 0 or (times and t <= times[-1]):
                    raise reader.error("waypoint times must be non-negative and strictly increasing",
                                       wp, "t", f"{w}.t")
                if ("position" in wp) == ("displacement" in wp):
                    raise reader.error("give exactly one of position, displacement", wp, field=w)
                if "position" in wp:
                    positions.append(reader.vector(wp, "position", f"{w}.position"))
                else:
                    positions.append(start[i] + reader.vector(wp, "displacement", f"{w}.displacement"))
                times.append(t)
            goals.append(Goal(frames[i], times, positions))

    return Scenario(config, goals, env, tuning, initial, max_steps, seed, name, module_paths, library,
                    Path(path) if path is not None else None)


def parse_scenario(text: str, path=None, seed=None) -> Scenario:
    return scenario_from_tree(parse_text(text, SCENARIO_HEADER, path), path=path, seed=seed)


def load_scenario(path, seed=None) -> Scenario:
    """Load and fully validate a scenario; ``seed`` overrides the file's seed."""
    return scenario_from_tree(read_file(path, SCENARIO_HEADER), path=path, seed=seed)


def dump_scenario(scenario: Scenario) -> str:
    return dump_text(scenario.to_tree(), SCENARIO_HEADER)


def bundled_scenario(name: str) -> Path:
    if not name.endswith(".scn"):
        name += ".scn"
    return bundled_path("scenarios", name)
