"""Whole-robot kinematics graph, kinematic chains and spatial Jacobians.

Frames are labelled ``"W"`` for the world, ``"<module>.M"`` for a module
body and ``"<module>.<connector>"`` for a connector. Joints are keyed
``"<module>.<joint>"``.

The graph is a tree rooted at ``W``. Every edge transform is stored as an
ordered list of factors: constant transforms and joint exponentials
``exp(sign * xi * theta)``. Differentiating a factor inside the product
``A exp(s xi theta) B`` gives the world twist ``s * Ad(A) xi``, which is how
Jacobian columns are formed; when an edge carries one joint this is exactly
``Ad(g_W,Mi) xi``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import lie
from .errors import ConfigurationError, DescriptorLookupError
from .fileio import Reader, read_file
from .lie import Transform
from .modules import BODY, ModuleDescriptor, mate_transform, parse_transform

CONFIG_HEADER = "modqp-config v1"
WORLD = "W"


# ---------------------------------------------------------------------------
# Configuration graph


@dataclass(frozen=True)
class Connection:
    module_a: str
    conn_a: str
    module_b: str
    conn_b: str
    case: int = 0


@dataclass(frozen=True, eq=False)
class Base:
    module: str
    connector: str
    world_transform: Transform = field(default_factory=Transform.identity)

    def __eq__(self, other):
        return (isinstance(other, Base) and self.module == other.module
                and self.connector == other.connector
                and np.array_equal(self.world_transform.matrix(), other.world_transform.matrix()))


@dataclass(frozen=True)
class ConfigurationGraph:
    modules: tuple  # of (module_id, kind)
    connections: tuple  # of Connection
    base: Base

    def kind_of(self, module_id: str) -> str:
        for mid, kind in self.modules:
            if mid == module_id:
                return kind
        raise DescriptorLookupError(f"unknown module id {module_id!r}")


def config_from_tree(data, path=None) -> ConfigurationGraph:
    reader = Reader(path)
    modules = []
    for i, node in enumerate(reader.sequence(data, "modules", "modules")):
        mid = reader.string(node, "id", f"modules[{i}].id")
        kind = reader.string(node, "kind", f"modules[{i}].kind")
        modules.append((mid, kind))
    if not modules:
        raise reader.error("module list is empty", data, "modules", "modules")
    connections = []
    for i, node in enumerate(reader.sequence(data, "connections", "connections", default=[])):
        where = f"connections[{i}]"
        ends = []
        for key in ("from", "to"):
            text = reader.string(node, key, f"{where}.{key}")
            mid, dot, conn = text.partition(".")
            if not dot or not mid or not conn:
                raise reader.error("expected '<module>.<connector>'", node, key, f"{where}.{key}")
            ends.append((mid, conn))
        case = node.get("case", 0) if isinstance(node, dict) else 0
        if isinstance(case, bool) or not isinstance(case, int) or case < 0:
            raise reader.error("case must be a non-negative integer", node, "case", f"{where}.case")
        connections.append(Connection(ends[0][0], ends[0][1], ends[1][0], ends[1][1], case))
    base_node = reader.mapping(data, "base", "base")
    base = Base(reader.string(base_node, "module", "base.module"),
                reader.string(base_node, "connector", "base.connector"),
                parse_transform(reader, base_node, "base"))
    return ConfigurationGraph(tuple(modules), tuple(connections), base)


def config_to_tree(config: ConfigurationGraph) -> dict:
    g = config.base.world_transform
    return {
        "modules": [{"id": mid, "kind": kind} for mid, kind in config.modules],
        "connections": [{"from": f"{c.module_a}.{c.conn_a}", "to": f"{c.module_b}.{c.conn_b}",
                         "case": c.case} for c in config.connections],
        "base": {"module": config.base.module, "connector": config.base.connector,
                 "translation": g.translation.tolist(), "rotation": g.rotation.tolist()},
    }


def load_config(path) -> ConfigurationGraph:
    return config_from_tree(read_file(path, CONFIG_HEADER), path=path)


# ---------------------------------------------------------------------------
# Kinematics graph


@dataclass(frozen=True, eq=False)
class JointFactor:
    joint: str
    twist: np.ndarray
    sign: float


@dataclass(frozen=True, eq=False)
class Edge:
    src: str
    dst: str
    factors: tuple
    module: str | None = None

    @property
    def joints(self) -> tuple[str, ...]:
        return tuple(f.joint for f in self.factors if isinstance(f, JointFactor))

    @property
    def is_constant(self) -> bool:
        return not self.joints

    def transform(self, theta: Mapping[str, float]) -> Transform:
        g = Transform.identity()
        for f in self.factors:
            if isinstance(f, JointFactor):
                g = g @ lie.exp_twist(f.twist, f.sign * theta[f.joint])
            else:
                g = g @ f
        return g


def _module_edges(mid: str, desc: ModuleDescriptor, conn: str):
    c = desc.connector(conn)
    fwd = [JointFactor(f"{mid}.{j}", desc.joint(j).twist, 1.0) for j in c.joints]
    fwd.append(c.rest)
    rev = [c.rest.inverse()]
    rev += [JointFactor(f"{mid}.{j}", desc.joint(j).twist, -1.0) for j in reversed(c.joints)]
    m, cf = f"{mid}.{BODY}", f"{mid}.{conn}"
    return Edge(m, cf, tuple(fwd), mid), Edge(cf, m, tuple(rev), mid)


class KinematicsGraph:
    """Frame graph of a configuration, oriented as a tree away from ``W``.

    ``edges`` holds every directed edge (both directions); ``parent`` maps each
    frame other than ``W`` to the tree edge entering it.
    """

    def __init__(self, config, modules, edges, parent, order, bfs_modules):
        self.config = config
        self.modules = modules
        self.edges = edges
        self.parent = parent
        self.frames = order
        self.bfs_modules = bfs_modules
        self.joints = [f"{mid}.{j.label}" for mid in bfs_modules for j in modules[mid].joints]

    def joint(self, key: str):
        mid, _, label = key.partition(".")
        return self.modules[mid].joint(label)

    def radius(self, mid: str) -> float:
        return self.modules[mid].body_radius

    def __contains__(self, frame):
        return frame == WORLD or frame in self.parent

    def path_to(self, frame: str) -> list[Edge]:
        """Tree edges of the unique path ``W -> frame``."""
        if frame not in self:
            raise DescriptorLookupError(f"unknown frame {frame!r}")
        path = []
        while frame != WORLD:
            e = self.parent[frame]
            path.append(e)
            frame = e.src
        path.reverse()
        return path

    def sweep(self, theta: Mapping[str, float]):
        """World pose of every frame and the joint twists upstream of it.

        Returns ``(poses, twists)`` where ``twists[frame]`` is a tuple of
        ``(joint_key, world_twist)`` pairs in path order.
        """
        poses = {WORLD: Transform.identity()}
        twists = {WORLD: ()}
        for frame in self.frames[1:]:
            e = self.parent[frame]
            g = poses[e.src]
            cols = twists[e.src]
            for f in e.factors:
                if isinstance(f, JointFactor):
                    cols = cols + ((f.joint, f.sign * (lie.adjoint(g) @ f.twist)),)
                    g = g @ lie.exp_twist(f.twist, f.sign * theta[f.joint])
                else:
                    g = g @ f
            poses[frame] = g
            twists[frame] = cols
        return poses, twists


def build_kinematics_graph(config: ConfigurationGraph, library) -> KinematicsGraph:
    """Assemble the kinematics graph by visiting modules in BFS order from the base.

    Raises:
      ConfigurationError: empty or duplicate module ids, unknown connectors,
        a connector used twice, a cycle, or modules unreachable from the base.
      DescriptorLookupError: a module kind missing from ``library``.
    """
    if not config.modules:
        raise ConfigurationError("configuration has no modules")
    modules = {}
    for mid, kind in config.modules:
        if not mid or "." in mid or mid == WORLD:
            raise ConfigurationError(f"invalid module id {mid!r}")
        if mid in modules:
            raise ConfigurationError(f"duplicate module id {mid!r}")
        modules[mid] = library[kind]

    def check(mid, conn):
        if mid not in modules:
            raise ConfigurationError(f"connection references unknown module {mid!r}")
        modules[mid].connector(conn)

    used = {}
    check(config.base.module, config.base.connector)
    used[(config.base.module, config.base.connector)] = "base attachment"
    adjacency = {mid: [] for mid in modules}
    for c in config.connections:
        for mid, conn in ((c.module_a, c.conn_a), (c.module_b, c.conn_b)):
            check(mid, conn)
            if (mid, conn) in used:
                raise ConfigurationError(f"connector {mid}.{conn} is used more than once "
                                         f"(already by {used[(mid, conn)]})")
            used[(mid, conn)] = f"{c.module_a}.{c.conn_a}-{c.module_b}.{c.conn_b}"
        if c.module_a == c.module_b:
            raise ConfigurationError(f"module {c.module_a!r} is connected to itself")
        adjacency[c.module_a].append((c.conn_a, c.module_b, c.conn_b, c, False))
        adjacency[c.module_b].append((c.conn_b, c.module_a, c.conn_a, c, True))

    edges = {}
    parent = {}
    order = [WORLD]

    def add(e: Edge, tree: bool):
        edges[(e.src, e.dst)] = e
        if tree:
            parent[e.dst] = e
            order.append(e.dst)

    def attach(mid, entry):
        # entry connector is already in the tree; add C->M then M->others
        desc = modules[mid]
        fwd, rev = _module_edges(mid, desc, entry)
        add(rev, True)
        add(fwd, False)
        for label in desc.connectors:
            if label != entry:
                fwd, rev = _module_edges(mid, desc, label)
                add(fwd, True)
                add(rev, False)

    base = config.base
    g_w = base.world_transform
    start = f"{base.module}.{base.connector}"
    add(Edge(WORLD, start, (g_w,)), True)
    add(Edge(start, WORLD, (g_w.inverse(),)), False)
    attach(base.module, base.connector)

    visited = [base.module]
    seen = {base.module}
    tree_links = set()
    queue = deque([base.module])
    while queue:
        mid = queue.popleft()
        for conn, other, other_conn, c, flipped in adjacency[mid]:
            if other in seen:
                if id(c) not in tree_links:
                    raise ConfigurationError(
                        f"configuration contains a loop closed by {mid}.{conn} - {other}.{other_conn}")
                continue
            tree_links.add(id(c))
            # mate transforms are declared a->b; the reverse direction is the inverse
            if flipped:
                g = mate_transform(modules[other], other_conn, modules[mid], conn, c.case).inverse()
            else:
                g = mate_transform(modules[mid], conn, modules[other], other_conn, c.case)
            a, b = f"{mid}.{conn}", f"{other}.{other_conn}"
            add(Edge(a, b, (g,)), True)
            add(Edge(b, a, (g.inverse(),)), False)
            attach(other, other_conn)
            seen.add(other)
            visited.append(other)
            queue.append(other)

    missing = [mid for mid in modules if mid not in seen]
    if missing:
        raise ConfigurationError(f"modules unreachable from the base: {', '.join(missing)}")
    return KinematicsGraph(config, modules, edges, parent, order, visited)


# ---------------------------------------------------------------------------
# Chains


class ChainState:
    """Kinematic chain ``W -> frame`` with cached pose and Jacobian.

    ``joints`` lists the chain's joint keys in path order. Assigning
    ``theta`` bumps ``version``; cached values are tagged with the version
    they were computed at, so a stale read is impossible.
    """

    def __init__(self, graph: KinematicsGraph, frame: str, theta=None):
        self.graph = graph
        self.frame = frame
        self.edges = graph.path_to(frame)
        joints = []
        for e in self.edges:
            for j in e.joints:
                if j not in joints:
                    joints.append(j)
        self.joints = joints
        self.vertices = [WORLD] + [e.dst for e in self.edges]
        self.version = 0
        self._theta = np.zeros(len(joints))
        self._cache = {}
        if theta is not None:
            self.theta = theta

    @property
    def theta(self) -> np.ndarray:
        return self._theta.copy()

    @theta.setter
    def theta(self, values):
        if isinstance(values, Mapping):
            arr = np.array([float(values.get(j, 0.0)) for j in self.joints])
        else:
            arr = np.array(values, dtype=float).reshape(-1)
            if arr.shape[0] != len(self.joints):
                raise ValueError(f"chain to {self.frame} has {len(self.joints)} joints, "
                                 f"got {arr.shape[0]} values")
        self._theta = arr
        self.version += 1

    def theta_map(self) -> dict[str, float]:
        return dict(zip(self.joints, self._theta.tolist()))

    def _cached(self, key, compute):
        hit = self._cache.get(key)
        if hit is not None and hit[0] == self.version:
            return hit[1]
        value = compute()
        self._cache[key] = (self.version, value)
        return value

    def _evaluate(self):
        theta = self.theta_map()
        index = {j: i for i, j in enumerate(self.joints)}
        g = Transform.identity()
        jac = np.zeros((6, len(self.joints)))
        # columns contributed before reaching each vertex
        upstream = {WORLD: 0}
        seen_cols = []
        for e in self.edges:
            for f in e.factors:
                if isinstance(f, JointFactor):
                    col = f.sign * (lie.adjoint(g) @ f.twist)
                    jac[:, index[f.joint]] += col
                    seen_cols.append((index[f.joint], col))
                    g = g @ lie.exp_twist(f.twist, f.sign * theta[f.joint])
                else:
                    g = g @ f
            upstream[e.dst] = len(seen_cols)
        return g, jac, upstream, seen_cols

    @property
    def transform(self) -> Transform:
        return self._cached("eval", self._evaluate)[0]

    @property
    def position(self) -> np.ndarray:
        return self.transform.translation

    @property
    def jacobian(self) -> np.ndarray:
        return self._cached("eval", self._evaluate)[1]

    def module_jacobian(self, module_id: str) -> np.ndarray:
        body = f"{module_id}.{BODY}"
        if body not in self.vertices:
            raise DescriptorLookupError(f"module {module_id!r} is not on the chain to {self.frame}")
        _, _, upstream, cols = self._cached("eval", self._evaluate)
        jac = np.zeros((6, len(self.joints)))
        for i, col in cols[:upstream[body]]:
            jac[:, i] += col
        return jac

    def __repr__(self):
        return f"ChainState(frame={self.frame!r}, joints={self.joints})"


def get_chain(graph: KinematicsGraph, frame: str, theta=None) -> ChainState:
    """The unique chain from ``W`` to ``frame``; ``theta`` maps joint keys to values."""
    return ChainState(graph, frame, theta)


def forward_kinematics(chain: ChainState) -> Transform:
    return chain.transform


def position(chain: ChainState) -> np.ndarray:
    return chain.position


def chain_jacobian(chain: ChainState) -> np.ndarray:
    """6 x n spatial chain Jacobian, columns in path order."""
    return chain.jacobian


def module_jacobian(chain: ChainState, module_id: str) -> np.ndarray:
    """Chain Jacobian with the columns of joints downstream of the module body zeroed."""
    return chain.module_jacobian(module_id)


def frame_point_velocity(jac, theta_dot, p) -> np.ndarray:
    """Linear velocity of the point at ``p`` under spatial velocity ``jac @ theta_dot``."""
    jac = np.asarray(jac, dtype=float)
    theta_dot = np.asarray(theta_dot, dtype=float).reshape(-1)
    if jac.ndim != 2 or jac.shape[0] != 6 or jac.shape[1] != theta_dot.shape[0]:
        raise ValueError(f"dimension mismatch: J is {jac.shape}, theta_dot has {theta_dot.shape[0]} entries")
    return lie.point_velocity_map(p) @ (jac @ theta_dot)


# ---------------------------------------------------------------------------
# Robot model: global joint vector over all goal chains


@dataclass(frozen=True, eq=False)
class KinematicState:
    """Kinematic quantities of the whole robot at one joint configuration.

    Arrays are indexed by module (in BFS order) or by goal; Jacobians map the
    global joint-velocity vector.
    """

    theta: np.ndarray
    module_positions: np.ndarray  # (N, 3)
    module_jacobians: np.ndarray  # (N, 6, n) spatial
    module_velocity_maps: np.ndarray  # (N, 3, n) linear velocity of each module center
    goal_positions: np.ndarray  # (alpha, 3)
    goal_jacobians: np.ndarray  # (alpha, 6, n)
    goal_velocity_maps: np.ndarray  # (alpha, 3, n)


class RobotModel:
    """Global joint ordering and whole-robot evaluation for a set of goal frames.

    The controlled joints are the union of the goal chains' joints, ordered by
    BFS discovery (module BFS order, then descriptor joint order). Joints off
    every goal chain are held at ``fixed_theta``.
    """

    def __init__(self, graph: KinematicsGraph, goal_frames, fixed_theta=None):
        self.graph = graph
        self.goal_frames = list(goal_frames)
        self.chains = [get_chain(graph, f) for f in self.goal_frames]
        members = set()
        for c in self.chains:
            members.update(c.joints)
        self.joints = [j for j in graph.joints if j in members]
        self.index = {j: i for i, j in enumerate(self.joints)}
        self.modules = list(graph.bfs_modules)
        self.radii = np.array([graph.radius(m) for m in self.modules])
        self.fixed_theta = {j: 0.0 for j in graph.joints}
        if fixed_theta:
            for k, v in fixed_theta.items():
                if k not in self.fixed_theta:
                    raise DescriptorLookupError(f"unknown joint {k!r}")
                self.fixed_theta[k] = float(v)
        js = [graph.joint(j) for j in self.joints]
        self.position_limits = np.array([j.position_limits for j in js]).reshape(-1, 2)
        self.velocity_limits = np.array([j.velocity_limits for j in js]).reshape(-1, 2)

    @property
    def n(self) -> int:
        return len(self.joints)

    def initial_theta(self) -> np.ndarray:
        return np.array([self.fixed_theta[j] for j in self.joints])

    def theta_map(self, theta) -> dict[str, float]:
        values = dict(self.fixed_theta)
        values.update(zip(self.joints, np.asarray(theta, dtype=float).tolist()))
        return values

    def columns(self, contributions) -> np.ndarray:
        jac = np.zeros((6, self.n))
        for key, col in contributions:
            i = self.index.get(key)
            if i is not None:
                jac[:, i] += col
        return jac

    def evaluate(self, theta) -> KinematicState:
        theta = np.asarray(theta, dtype=float).copy()
        poses, twists = self.graph.sweep(self.theta_map(theta))
        mp, mj = [], []
        for m in self.modules:
            body = f"{m}.{BODY}"
            mp.append(poses[body].translation)
            mj.append(self.columns(twists[body]))
        gp, gj = [], []
        for f in self.goal_frames:
            gp.append(poses[f].translation)
            gj.append(self.columns(twists[f]))
        mp, mj = np.array(mp), np.array(mj).reshape(len(self.modules), 6, self.n)
        gp, gj = np.array(gp).reshape(-1, 3), np.array(gj).reshape(len(self.goal_frames), 6, self.n)
        return KinematicState(theta, mp, mj, _velocity_maps(mp, mj), gp, gj, _velocity_maps(gp, gj))


def _velocity_maps(points, jacs):
    # [I | -hat(p)] @ J for every point, vectorized
    v = jacs[:, :3, :]
    w = jacs[:, 3:, :]
    return v - np.cross(points[:, :, None], w, axis=1)
