"""Rigid-body transforms, twists, exponentials and adjoints.

Twist coordinates are plain 6-vectors ordered ``(v, omega)``; a spatial
velocity uses the same layout. Units are meters, radians and seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedInputError

_ORTHO_DEFECT = 1e-7
_SE3_TOL = 1e-9


def skew(w) -> np.ndarray:
    """3x3 skew-symmetric matrix with ``skew(w) @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def twist(v=(0.0, 0.0, 0.0), omega=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Pack linear and angular parts into twist coordinates ``(v, omega)``."""
    return np.concatenate([np.asarray(v, dtype=float), np.asarray(omega, dtype=float)])


def revolute_twist(axis, point=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Unit twist of a rotation about ``axis`` through ``point``."""
    w = np.asarray(axis, dtype=float)
    w = w / np.linalg.norm(w)
    return twist(-np.cross(w, np.asarray(point, dtype=float)), w)


def prismatic_twist(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    return twist(d / np.linalg.norm(d), np.zeros(3))


def is_unit_screw(xi, tol: float = 1e-9) -> bool:
    """True for a unit revolute screw (|omega| = 1) or a unit prismatic one."""
    xi = np.asarray(xi, dtype=float)
    wn = np.linalg.norm(xi[3:])
    if wn > tol:
        return abs(wn - 1.0) <= tol
    return abs(np.linalg.norm(xi[:3]) - 1.0) <= tol


def hat(xi) -> np.ndarray:
    """4x4 se(3) matrix of twist coordinates ``xi = (v, omega)``."""
    xi = np.asarray(xi, dtype=float)
    m = np.zeros((4, 4))
    m[:3, :3] = skew(xi[3:])
    m[:3, 3] = xi[:3]
    return m


def vee(m) -> np.ndarray:
    """Inverse of :func:`hat`.

    Raises:
      MalformedInputError: if ``m`` is not 4x4, its rotational block is not
        skew-symmetric within 1e-9, or its bottom row is non-zero.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4):
        raise MalformedInputError(f"vee expects a 4x4 matrix, got shape {m.shape}")
    w = m[:3, :3]
    if np.max(np.abs(w + w.T)) > _SE3_TOL:
        raise MalformedInputError("rotational block is not skew-symmetric")
    if np.max(np.abs(m[3])) > _SE3_TOL:
        raise MalformedInputError("bottom row of an se(3) matrix must be zero")
    return twist(m[:3, 3], (w[2, 1], w[0, 2], w[1, 0]))


def _polar(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, -1] *= -1
        q = u @ vt
    return q


@dataclass(frozen=True, eq=False)
class Transform:
    """Element of SE(3) stored as a rotation matrix and a translation.

    Composition uses ``@``; applying to a 3-vector point also uses ``@``.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        p = np.array(self.translation, dtype=float).reshape(3)
        r.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Transform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, p) -> "Transform":
        return cls(np.eye(3), p)

    @classmethod
    def from_rotation(cls, r) -> "Transform":
        return cls(r, np.zeros(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def compose(self, other: "Transform") -> "Transform":
        r = self.rotation @ other.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_DEFECT:
            r = _polar(r)
        return Transform(r, self.rotation @ other.translation + self.translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def __matmul__(self, other):
        if isinstance(other, Transform):
            return self.compose(other)
        return self.apply(other)

    def allclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol))

    def __repr__(self):
        return (f"Transform(rotation={self.rotation.tolist()}, "
                f"translation={self.translation.tolist()})")


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit ``axis`` and ``angle``."""
    w = np.asarray(axis, dtype=float)
    k = skew(w)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def exp_twist(xi, theta: float) -> Transform:
    """Rigid motion ``exp(hat(xi) * theta)``.

    Revolute screws use the closed-form Rodrigues formula; a screw with
    ``omega = 0`` is a pure translation along ``v``. Non-unit revolute
    screws are rescaled so the result is still exact.
    """
    xi = np.asarray(xi, dtype=float)
    v, w = xi[:3], xi[3:]
    wn = np.linalg.norm(w)
    if wn < 1e-12:
        return Transform(np.eye(3), v * theta)
    w = w / wn
    v = v / wn
    theta = theta * wn
    r = rotation_about(w, theta)
    p = (np.eye(3) - r) @ np.cross(w, v) + w * (w @ v) * theta
    return Transform(r, p)


def adjoint(g: Transform) -> np.ndarray:
    """6x6 adjoint ``[[R, hat(p) R], [0, R]]`` acting on ``(v, omega)``."""
    r, p = g.rotation, g.translation
    ad = np.zeros((6, 6))
    ad[:3, :3] = r
    ad[:3, 3:] = skew(p) @ r
    ad[3:, 3:] = r
    return ad


def point_velocity_map(p) -> np.ndarray:
    """3x6 matrix ``[I | -hat(p)]``.

    For a spatial twist ``V``, ``point_velocity_map(p) @ V`` is the velocity
    of the point currently at ``p``, i.e. ``(hat(V) @ [p, 1])[:3]``.
    """
    m = np.zeros((3, 6))
    m[:, :3] = np.eye(3)
    m[:, 3:] = -skew(p)
    return m
