"""Boundary polyhedron, obstacle spheres, obstacle planes and sphere pruning.

Each module body is approximated by a sphere of radius ``r_i`` centered at
its body-frame origin ``p``. For an obstacle sphere ``(o, r_o)`` the
obstacle plane has normal ``s = (o - p) / |o - p|`` and touches the sphere
at ``o' = o - r_o s``; the linear constraint on the module-center velocity
is ``v . s <= |o' - p| - r_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import lie
from .errors import InfeasibleStateError, PenetrationError
from .fileio import Reader, read_file
from .modules import parse_rotation

ENV_HEADER = "modqp-env v1"
MAX_LEVEL = 4


@dataclass(frozen=True, eq=False)
class ObstacleSphere:
    center: np.ndarray
    radius: float
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if not self.radius > 0:
            raise ValueError(f"obstacle sphere radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True, eq=False)
class ObstaclePlane:
    normal: np.ndarray
    tangency_point: np.ndarray
    rhs: float


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    box_id: str = "box"

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))

    def contains(self, points) -> np.ndarray:
        local = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + 1e-12, axis=1)


class BoundaryPolyhedron:
    """Feasible region ``{x : n_j . x <= c_j for every face j}``.

    Normals are normalized on construction (offsets scaled to match).
    """

    def __init__(self, faces):
        normals, offsets = [], []
        for n, c in faces:
            n = np.asarray(n, dtype=float).reshape(3)
            norm = np.linalg.norm(n)
            if norm < 1e-12:
                raise ValueError("boundary face normal must be non-zero")
            normals.append(n / norm)
            offsets.append(float(c) / norm)
        self.normals = np.array(normals).reshape(-1, 3)
        self.offsets = np.array(offsets)

    @classmethod
    def from_aabb(cls, lower, upper) -> "BoundaryPolyhedron":
        faces = []
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = 1.0
            faces.append((e, float(upper[axis])))
            faces.append((0.0 - e, -float(lower[axis])))
        return cls(faces)

    @property
    def faces(self):
        return list(zip(self.normals, self.offsets))

    def __len__(self):
        return len(self.offsets)

    def distances(self, p) -> np.ndarray:
        """Perpendicular distance from ``p`` to every face (negative outside)."""
        return self.offsets - self.normals @ np.asarray(p, dtype=float)

    def contains(self, p) -> bool:
        return bool(np.all(self.distances(p) >= 0.0))


def generate_spheres(box: OrientedBox, level: int) -> list[ObstacleSphere]:
    """Cover a box with ``8**level`` spheres, one circumscribing each octree cell.

    Raises:
      ValueError: if the box has a zero extent or ``level`` is outside 1..4.
    """
    if isinstance(level, bool) or not isinstance(level, (int, np.integer)) or not 1 <= level <= MAX_LEVEL:
        raise ValueError(f"level must be an integer in 1..{MAX_LEVEL}, got {level!r}")
    h = box.half_extents
    if np.any(h <= 0.0) or not np.all(np.isfinite(h)):
        raise ValueError(f"degenerate box {box.box_id!r}: half extents {h.tolist()}")
    k = 2 ** level
    cell = h / k
    radius = float(np.linalg.norm(cell))
    ticks = [-h[a] + (2 * np.arange(k) + 1) * cell[a] for a in range(3)]
    grid = np.stack(np.meshgrid(*ticks, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = grid @ box.rotation.T + box.center
    return [ObstacleSphere(c, radius, box.box_id) for c in centers]


def boundary_rows(p_m, r_i: float, j_m, poly: BoundaryPolyhedron):
    """Velocity rows ``n_j . v_M <= d_j - r_i`` for every face.

    ``j_m`` is the 6 x n spatial module Jacobian. Returns a list of
    ``(row, bound)`` pairs.

    Raises:
      InfeasibleStateError: if ``p_m`` lies outside the region.
    """
    p_m = np.asarray(p_m, dtype=float)
    d = poly.distances(p_m)
    bad = np.flatnonzero(d < 0.0)
    if bad.size:
        j = int(bad[0])
        raise InfeasibleStateError(f"module center {p_m.tolist()} is outside boundary face {j} "
                                   f"by {-d[j]:.6g} m", face=j)
    vmap = lie.point_velocity_map(p_m) @ np.asarray(j_m, dtype=float)
    rows = poly.normals @ vmap
    return [(rows[j], float(d[j] - r_i)) for j in range(len(poly))]


def obstacle_plane(p_m, r_i: float, sphere: ObstacleSphere) -> ObstaclePlane:
    """Obstacle plane of ``sphere`` as seen from a module at ``p_m``.

    Raises:
      PenetrationError: if the module center is inside the sphere.
    """
    p_m = np.asarray(p_m, dtype=float)
    delta = sphere.center - p_m
    dist = float(np.linalg.norm(delta))
    if dist <= sphere.radius:
        raise PenetrationError(f"module center is inside obstacle sphere {sphere.source_id!r}",
                               depth=sphere.radius - dist, sphere=sphere)
    s = delta / dist
    tangent = sphere.center - sphere.radius * s
    return ObstaclePlane(s, tangent, float(np.linalg.norm(tangent - p_m) - r_i))


def refine_indices(p_m, r_i: float, centers, radii) -> np.ndarray:
    """Indices of the spheres kept after plane-separation pruning.

    Spheres are visited by increasing surface gap ``|o - p| - r_o`` (stable on
    ties). A sphere ``q`` is pruned when a kept sphere's plane has all of
    ``q`` strictly on its far side, i.e. ``s_k . (o_q - o'_k) - r_q > 0``.
    Equivalently, ``q`` inflated by ``r_i`` lies beyond the plane that bounds
    the module center (``o'_k`` moved by ``r_i`` toward the module).

    With this visiting order no later sphere can separate an earlier one, so a
    single pass is already a fixed point and refining the result again prunes
    nothing.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if centers.shape[0] == 0:
        return np.zeros(0, dtype=int)
    delta = centers - np.asarray(p_m, dtype=float)
    dist = np.linalg.norm(delta, axis=1)
    if np.any(dist <= radii):
        i = int(np.flatnonzero(dist <= radii)[0])
        raise PenetrationError("module center is inside an obstacle sphere", depth=float(radii[i] - dist[i]))
    order = np.argsort(dist - radii, kind="stable")
    alive = np.ones(len(radii), dtype=bool)
    kept = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(i)
        s = delta[i] / dist[i]
        tangent = centers[i] - radii[i] * s
        beyond = centers @ s - radii - tangent @ s > 0.0
        beyond[i] = False
        alive &= ~beyond
    return np.array(kept, dtype=int)


def refine_spheres(p_m, r_i: float, spheres):
    """Prune spheres hidden behind other spheres' obstacle planes.

    Returns ``(kept, planes)`` where ``planes[k]`` is the obstacle plane of
    ``kept[k]``. Soundness: a module that stays behind every kept plane cannot
    touch any pruned sphere during the step.
    """
    spheres = list(spheres)
    if not spheres:
        return [], []
    centers = np.array([s.center for s in spheres])
    radii = np.array([s.radius for s in spheres])
    idx = refine_indices(p_m, r_i, centers, radii)
    kept = [spheres[i] for i in idx]
    return kept, [obstacle_plane(p_m, r_i, s) for s in kept]


@dataclass(eq=False)
class Environment:
    """Boundary region and obstacle spheres for a run.

    ``boxes`` keeps the generating boxes and levels so a normalized file can
    be written back; ``spheres`` is the full sphere cover (box spheres first).
    """

    boundary: BoundaryPolyhedron | None = None
    boxes: list = field(default_factory=list)  # (OrientedBox, level)
    extra_spheres: list = field(default_factory=list)

    def __post_init__(self):
        spheres = []
        for box, level in self.boxes:
            spheres.extend(generate_spheres(box, level))
        spheres.extend(self.extra_spheres)
        self.spheres = spheres
        if spheres:
            self.centers = np.array([s.center for s in spheres])
            self.radii = np.array([s.radius for s in spheres])
        else:
            self.centers = np.zeros((0, 3))
            self.radii = np.zeros(0)

    def to_tree(self) -> dict:
        out = {}
        if self.boundary is not None:
            out["boundary"] = {"faces": [{"normal": n.tolist(), "offset": float(c)}
                                         for n, c in self.boundary.faces]}
        obstacles = {}
        if self.boxes:
            obstacles["boxes"] = [{"id": b.box_id, "center": b.center.tolist(),
                                   "half_extents": b.half_extents.tolist(),
                                   "rotation": b.rotation.tolist(), "level": int(level)}
                                  for b, level in self.boxes]
        if self.extra_spheres:
            obstacles["spheres"] = [{"id": s.source_id, "center": s.center.tolist(),
                                     "radius": s.radius} for s in self.extra_spheres]
        if obstacles:
            out["obstacles"] = obstacles
        return out


def environment_from_tree(data, path=None, seed=None) -> Environment:
    reader = Reader(path)
    boundary = None
    if "boundary" in data:
        bnode = reader.mapping(data, "boundary", "boundary")
        if "aabb" in bnode:
            box = reader.mapping(bnode, "aabb", "boundary.aabb")
            lower = reader.vector(box, "min", "boundary.aabb.min")
            upper = reader.vector(box, "max", "boundary.aabb.max")
            if np.any(lower >= upper):
                raise reader.error("aabb min must be below max", bnode, "aabb", "boundary.aabb")
            boundary = BoundaryPolyhedron.from_aabb(lower, upper)
        else:
            faces = []
            for i, node in enumerate(reader.sequence(bnode, "faces", "boundary.faces")):
                n = reader.vector(node, "normal", f"boundary.faces[{i}].normal")
                if np.linalg.norm(n) < 1e-12:
                    raise reader.error("normal must be non-zero", node, "normal", f"boundary.faces[{i}].normal")
                faces.append((n, reader.number(node, "offset", f"boundary.faces[{i}].offset")))
            boundary = BoundaryPolyhedron(faces)

    boxes, extra = [], []
    obs = reader.mapping(data, "obstacles", "obstacles", default={})
    for i, node in enumerate(reader.sequence(obs, "boxes", "obstacles.boxes", default=[])):
        where = f"obstacles.boxes[{i}]"
        if not isinstance(node, dict):
            raise reader.error("expected a mapping", obs, field=where)
        center = reader.vector(node, "center", f"{where}.center")
        rotation = parse_rotation(reader, node, where)
        half = reader.vector(node, "half_extents", f"{where}.half_extents")
        if np.any(half <= 0):
            raise reader.error("half extents must be positive", node, "half_extents", f"{where}.half_extents")
        level = node.get("level", 1)
        if isinstance(level, bool) or not isinstance(level, int) or not 1 <= level <= MAX_LEVEL:
            raise reader.error(f"level must be an integer in 1..{MAX_LEVEL}", node, "level", f"{where}.level")
        box_id = reader.string(node, "id", f"{where}.id", default=f"box{i}")
        boxes.append((OrientedBox(center, half, rotation, box_id), level))
    for i, node in enumerate(reader.sequence(obs, "spheres", "obstacles.spheres", default=[])):
        where = f"obstacles.spheres[{i}]"
        if not isinstance(node, dict):
            raise reader.error("expected a mapping", obs, field=where)
        extra.append(ObstacleSphere(reader.vector(node, "center", f"{where}.center"),
                                    reader.number(node, "radius", f"{where}.radius", positive=True),
                                    reader.string(node, "id", f"{where}.id", default=f"sphere{i}")))
    random_nodes = reader.sequence(obs, "random", "obstacles.random", default=[])
    if random_nodes:
        rng = np.random.default_rng(seed)
        for i, node in enumerate(random_nodes):
            where = f"obstacles.random[{i}]"
            if not isinstance(node, dict):
                raise reader.error("expected a mapping", obs, field=where)
            count = node.get("count")
            if isinstance(count, bool) or not isinstance(count, int) or count < 1:
                raise reader.error("count must be a positive integer", node, "count", f"{where}.count")
            lower = reader.vector(node, "min", f"{where}.min")
            upper = reader.vector(node, "max", f"{where}.max")
            rr = reader.vector(node, "radius", f"{where}.radius", size=2)
            if not 0 < rr[0] <= rr[1]:
                raise reader.error("radius range must satisfy 0 < lo <= hi", node, "radius", f"{where}.radius")
            sid = reader.string(node, "id", f"{where}.id", default=f"random{i}")
            centers = rng.uniform(lower, upper, size=(count, 3))
            radii = rng.uniform(rr[0], rr[1], size=count)
            extra.extend(ObstacleSphere(c, r, sid) for c, r in zip(centers, radii))
    return Environment(boundary, boxes, extra)


def load_environment(path, seed=None) -> Environment:
    return environment_from_tree(read_file(path, ENV_HEADER), path=path, seed=seed)


def box_from_rpy(center, half_extents, rpy=(0.0, 0.0, 0.0), box_id="box") -> OrientedBox:
    return OrientedBox(center, half_extents, Rotation.from_euler("xyz", rpy).as_matrix(), box_id)
