"""Module descriptors: frames, connectors, joints and docking transforms.

A descriptor is data loaded from a ``modqp-module v1`` file. Each module has
a body frame ``M`` and a set of connector frames. Every connector is joined
to ``M`` by one edge whose transform is the product of exponentials

    g_MC(theta) = exp(xi_1 theta_1) ... exp(xi_k theta_k) g_MC(0)

over the joints listed on that connector, with every twist expressed in
``M`` at the zero configuration. Connectors without joints are fixed in ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.spatial.transform import Rotation

from . import lie
from .errors import DescriptorLookupError
from .fileio import Reader, read_file, parse_text
from .lie import Transform

MODULE_HEADER = "modqp-module v1"
BODY = "M"

_FLIP = np.diag([1.0, -1.0, -1.0])  # rotation by pi about x


@dataclass(frozen=True, eq=False)
class Joint:
    label: str
    twist: np.ndarray
    position_limits: tuple[float, float]
    velocity_limits: tuple[float, float]

    @property
    def is_revolute(self) -> bool:
        return bool(np.linalg.norm(self.twist[3:]) > 0.0)


@dataclass(frozen=True, eq=False)
class Connector:
    label: str
    rest: Transform
    normal: np.ndarray
    reference: np.ndarray
    family: str
    joints: tuple[str, ...] = ()

    @property
    def docking_frame(self) -> np.ndarray:
        """Rotation (in the connector frame) whose z axis is the outward normal."""
        n = self.normal
        return np.column_stack([self.reference, np.cross(n, self.reference), n])


@dataclass(frozen=True)
class ConnectionCase:
    case_index: int
    relative_transform: Transform = field(compare=False)


@dataclass(frozen=True, eq=False)
class ModuleDescriptor:
    kind: str
    connectors: dict
    joints: tuple
    body_radius: float
    families: dict
    body_frame: str = BODY
    source: str | None = None

    def connector(self, label: str) -> Connector:
        try:
            return self.connectors[label]
        except KeyError:
            raise DescriptorLookupError(
                f"module kind {self.kind!r} has no connector {label!r} "
                f"(known: {', '.join(self.connectors)})") from None

    def joint(self, label: str) -> Joint:
        for j in self.joints:
            if j.label == label:
                return j
        raise DescriptorLookupError(f"module kind {self.kind!r} has no joint {label!r}")

    @property
    def joint_labels(self) -> tuple[str, ...]:
        return tuple(j.label for j in self.joints)

    @property
    def frame_graph(self) -> list[tuple[str, str, tuple[str, ...]]]:
        """Directed edges ``(source, target, joint dependencies)`` in both directions."""
        edges = []
        for c in self.connectors.values():
            edges.append((BODY, c.label, c.joints))
            edges.append((c.label, BODY, tuple(reversed(c.joints))))
        return edges

    def theta_vector(self, theta) -> dict[str, float]:
        """Normalize a joint assignment to a ``label -> value`` mapping."""
        if theta is None:
            return {j.label: 0.0 for j in self.joints}
        if isinstance(theta, Mapping):
            return {k: float(v) for k, v in theta.items()}
        values = np.atleast_1d(np.asarray(theta, dtype=float))
        if values.shape[0] != len(self.joints):
            raise ValueError(f"{self.kind}: expected {len(self.joints)} joint values, "
                             f"got {values.shape[0]}")
        return {j.label: float(v) for j, v in zip(self.joints, values)}


def _resolve(module, library) -> ModuleDescriptor:
    if isinstance(module, ModuleDescriptor):
        return module
    lib = library if library is not None else bundled_library()
    return lib[module]


def module_forward(module, connector: str, theta=None, *, reverse: bool = False,
                   library=None) -> Transform:
    """Forward kinematics ``g_MC(theta)`` from the body frame to a connector.

    ``module`` is a descriptor or a kind name looked up in ``library`` (the
    bundled library by default). ``theta`` is a ``label -> value`` mapping or a
    vector in descriptor joint order; joints not on the path are ignored.
    With ``reverse=True`` the inverse ``g_CM`` is returned.
    """
    desc = _resolve(module, library)
    conn = desc.connector(connector)
    values = desc.theta_vector(theta)
    g = Transform.identity()
    for label in conn.joints:
        joint = desc.joint(label)
        if label not in values:
            raise DescriptorLookupError(f"no value supplied for joint {label!r} of {desc.kind!r}")
        g = g @ lie.exp_twist(joint.twist, values[label])
    g = g @ conn.rest
    return g.inverse() if reverse else g


def mate_transform(kind_a, conn_a: str, kind_b, conn_b: str, case, library=None) -> Transform:
    """Fixed transform ``g_{Ca Cb}`` between two docked connector frames.

    The docking frames face each other (outward normals opposed) and case
    ``k`` adds a rotation of ``2 pi k / n`` about the docking normal, where
    ``n`` is the number of cases of the connector family.
    """
    da, db = _resolve(kind_a, library), _resolve(kind_b, library)
    ca, cb = da.connector(conn_a), db.connector(conn_b)
    if ca.family != cb.family:
        raise ValueError(f"connectors {da.kind}.{conn_a} ({ca.family}) and "
                         f"{db.kind}.{conn_b} ({cb.family}) cannot dock")
    n_cases = da.families[ca.family]
    if n_cases != db.families[cb.family]:
        raise ValueError(f"family {ca.family!r} declares different case counts "
                         f"in {da.kind!r} and {db.kind!r}")
    index = case.case_index if isinstance(case, ConnectionCase) else case
    if isinstance(index, bool) or not isinstance(index, (int, np.integer)) or not 0 <= index < n_cases:
        raise ValueError(f"invalid connection case {index!r}; valid range is 0..{n_cases - 1}")
    rot = ca.docking_frame @ _FLIP @ lie.rotation_about((0.0, 0.0, 1.0), 2.0 * np.pi * index / n_cases) \
        @ cb.docking_frame.T
    return Transform.from_rotation(rot)


def connection_cases(kind_a, conn_a, kind_b, conn_b, library=None) -> list[ConnectionCase]:
    da = _resolve(kind_a, library)
    n_cases = da.families[da.connector(conn_a).family]
    return [ConnectionCase(k, mate_transform(kind_a, conn_a, kind_b, conn_b, k, library))
            for k in range(n_cases)]


class ModuleLibrary(dict):
    """``kind -> ModuleDescriptor`` mapping with a descriptive lookup error."""

    def __missing__(self, kind):
        raise DescriptorLookupError(f"unknown module kind {kind!r} (known: {', '.join(sorted(self))})")

    def add(self, desc: ModuleDescriptor) -> None:
        self[desc.kind] = desc


def parse_rotation(reader, node, field_prefix) -> np.ndarray:
    if "rotation" in node:
        try:
            r = np.asarray(node["rotation"], dtype=float)
        except (TypeError, ValueError):
            r = np.zeros(0)
        if r.shape != (3, 3):
            raise reader.error("rotation must be a 3x3 matrix", node, "rotation",
                               f"{field_prefix}.rotation")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6 or np.linalg.det(r) < 0:
            raise reader.error("rotation must be a proper orthonormal matrix", node, "rotation",
                               f"{field_prefix}.rotation")
        return r
    if "rpy" in node:
        return Rotation.from_euler("xyz", reader.vector(node, "rpy", f"{field_prefix}.rpy")).as_matrix()
    return np.eye(3)


def parse_transform(reader: Reader, node, field_prefix: str) -> Transform:
    """Transform from ``translation`` plus optional ``rotation`` or ``rpy`` (radians)."""
    p = reader.vector(node, "translation", f"{field_prefix}.translation", default=(0.0, 0.0, 0.0))
    return Transform(parse_rotation(reader, node, field_prefix), p)


def _unit(reader, node, key, field_name):
    v = reader.vector(node, key, field_name)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise reader.error("vector must be non-zero", node, key, field_name)
    return v / n


def _parse_joint(reader, node, i) -> Joint:
    where = f"joints[{i}]"
    label = reader.string(node, "label", f"{where}.label")
    kind = reader.string(node, "type", f"{where}.type", default="revolute")
    if "twist" in node:
        xi = reader.vector(node, "twist", f"{where}.twist", size=6)
        if not lie.is_unit_screw(xi):
            raise reader.error("joint twist must be a unit screw", node, "twist", f"{where}.twist")
    elif kind == "revolute":
        xi = lie.revolute_twist(_unit(reader, node, "axis", f"{where}.axis"),
                                reader.vector(node, "point", f"{where}.point", default=(0, 0, 0)))
    elif kind == "prismatic":
        xi = lie.prismatic_twist(_unit(reader, node, "axis", f"{where}.axis"))
    else:
        raise reader.error(f"unknown joint type {kind!r}", node, "type", f"{where}.type")
    pos = reader.vector(node, "position_limits", f"{where}.position_limits", size=2,
                        default=(-np.pi / 2, np.pi / 2))
    vel = reader.vector(node, "velocity_limits", f"{where}.velocity_limits", size=2)
    if not pos[0] < pos[1]:
        raise reader.error("position_limits must satisfy min < max", node, "position_limits",
                           f"{where}.position_limits")
    if not (vel[0] < 0.0 < vel[1]) or not np.all(np.isfinite(vel)):
        raise reader.error("velocity_limits must satisfy min < 0 < max and be finite",
                           node, "velocity_limits", f"{where}.velocity_limits")
    return Joint(label, xi, (float(pos[0]), float(pos[1])), (float(vel[0]), float(vel[1])))


def descriptor_from_tree(data, path=None) -> ModuleDescriptor:
    reader = Reader(path)
    kind = reader.string(data, "kind", "kind")
    radius = reader.number(data, "body_radius", "body_radius", positive=True)
    families_node = reader.mapping(data, "families", "families")
    families = {}
    for name, count in families_node.items():
        if isinstance(count, bool) or not isinstance(count, int) or count < 1:
            raise reader.error("case count must be a positive integer", families_node, name,
                               f"families.{name}")
        families[name] = count

    joints = []
    for i, node in enumerate(reader.sequence(data, "joints", "joints", default=[])):
        joint = _parse_joint(reader, node, i)
        if any(j.label == joint.label for j in joints):
            raise reader.error(f"duplicate joint label {joint.label!r}", node, "label", f"joints[{i}].label")
        joints.append(joint)
    labels = {j.label for j in joints}

    connectors = {}
    used = set()
    for i, node in enumerate(reader.sequence(data, "connectors", "connectors")):
        where = f"connectors[{i}]"
        label = reader.string(node, "label", f"{where}.label")
        if label == BODY or label in connectors:
            raise reader.error(f"invalid or duplicate connector label {label!r}", node, "label",
                               f"{where}.label")
        normal = _unit(reader, node, "normal", f"{where}.normal")
        ref = reader.vector(node, "reference", f"{where}.reference")
        ref = ref - normal * (normal @ ref)
        if np.linalg.norm(ref) < 1e-9:
            raise reader.error("reference must not be parallel to normal", node, "reference",
                               f"{where}.reference")
        ref /= np.linalg.norm(ref)
        family = reader.string(node, "family", f"{where}.family")
        if family not in families:
            raise reader.error(f"undeclared connector family {family!r}", node, "family", f"{where}.family")
        deps = tuple(reader.sequence(node, "joints", f"{where}.joints", default=[]))
        for d in deps:
            if d not in labels:
                raise reader.error(f"connector depends on unknown joint {d!r}", node, "joints",
                                   f"{where}.joints")
        used.update(deps)
        connectors[label] = Connector(label, parse_transform(reader, node, where), normal, ref,
                                      family, deps)
    if not connectors:
        raise reader.error("a module needs at least one connector", data, "connectors", "connectors")
    return ModuleDescriptor(kind, connectors, tuple(joints), radius, families,
                            source=str(path) if path is not None else None)


def load_descriptor(path) -> ModuleDescriptor:
    return descriptor_from_tree(read_file(path, MODULE_HEADER), path=path)


def load_library(paths: Iterable = (), include_bundled: bool = True) -> ModuleLibrary:
    lib = ModuleLibrary(bundled_library()) if include_bundled else ModuleLibrary()
    for p in paths:
        lib.add(load_descriptor(p))
    return lib


_BUNDLED = None


def bundled_library() -> ModuleLibrary:
    """Descriptors shipped with the package (CKBot UBar, CKBot CR, SMORES-EP)."""
    global _BUNDLED
    if _BUNDLED is None:
        lib = ModuleLibrary()
        root = resources.files("modqp") / "data" / "modules"
        for entry in sorted(root.iterdir(), key=lambda e: e.name):
            if entry.name.endswith(".mod"):
                data = parse_text(entry.read_text(), MODULE_HEADER, path=entry.name)
                lib.add(descriptor_from_tree(data, path=entry.name))
        _BUNDLED = lib
    return _BUNDLED


def bundled_path(*parts) -> Path:
    node = resources.files("modqp") / "data"
    for part in parts:
        node = node / part
    return Path(str(node))
