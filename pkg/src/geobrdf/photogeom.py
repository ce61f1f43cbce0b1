"""Camera/sun geometry and per-pixel photometric angles.

Azimuths are right-handed about the surface normal: measured from the
tangent ``t`` (north projected onto the tangent plane) towards ``n x t``.
Angles between unit vectors are computed as ``atan2(|u x v|, u . v)``,
which equals ``arccos(clamp(u . v))`` but keeps full precision near 0 and pi.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError

NORTH = np.array([0.0, 1.0, 0.0])


class Projection(str, enum.Enum):
    PERSPECTIVE = "perspective"
    ORTHO_NADIR = "orthographic-nadir"


def _unit(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def _dot(u, v):
    return np.sum(u * v, axis=-1)


def angle_between(u, v):
    """Angle in [0, pi] between (arrays of) unit vectors."""
    return np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1), _dot(u, v))


def direction_from_angles(elevation_deg, azimuth_deg):
    """Unit vector from elevation above the horizon and azimuth clockwise from north."""
    el, az = math.radians(elevation_deg), math.radians(azimuth_deg)
    return np.array([math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)])


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Pinhole or orthographic camera.

    ``orientation`` maps world vectors to camera coordinates; its rows are the
    camera axes in world coordinates and the camera looks along its +z axis.
    """

    position: np.ndarray
    orientation: np.ndarray
    fov_deg: float = 45.0
    image_size: tuple[int, int] = (128, 128)
    projection: Projection = Projection.PERSPECTIVE

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        rot = np.array(self.orientation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1) > 1e-9:
            raise InvalidInputError("orientation must be a proper rotation")
        proj = Projection(self.projection)
        if proj is Projection.PERSPECTIVE and not 0 < self.fov_deg < 180:
            raise InvalidInputError(f"fov must lie in (0, 180) degrees, got {self.fov_deg}")
        pos.setflags(write=False)
        rot.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", rot)
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @property
    def view_dir(self) -> np.ndarray:
        """World-space direction the camera looks along."""
        return self.orientation[2].copy()

    @classmethod
    def look_at(cls, position, target, fov_deg=45.0, image_size=(128, 128),
                projection=Projection.PERSPECTIVE) -> "CameraPose":
        position = np.asarray(position, dtype=np.float64)
        z = _unit(np.asarray(target, dtype=np.float64) - position)
        up = NORTH if abs(z @ NORTH) < 0.999 else np.array([1.0, 0.0, 0.0])
        x = _unit(np.cross(z, up))
        y = np.cross(z, x)
        return cls(position, np.stack([x, y, z]), fov_deg, image_size, projection)

    @classmethod
    def nadir(cls, position, fov_deg=45.0, image_size=(128, 128),
              projection=Projection.ORTHO_NADIR) -> "CameraPose":
        position = np.asarray(position, dtype=np.float64)
        return cls.look_at(position, position - np.array([0.0, 0.0, 1.0]), fov_deg, image_size, projection)

    def tilt_deg(self) -> float:
        """Angle between the view axis and straight down."""
        return math.degrees(math.acos(np.clip(-self.view_dir[2], -1.0, 1.0)))

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "orientation": self.orientation.tolist(),
            "fov_deg": float(self.fov_deg),
            "image_size": list(self.image_size),
            "projection": self.projection.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(d["position"], d["orientation"], d["fov_deg"], tuple(d["image_size"]), d["projection"])


def surface_normals(dem) -> np.ndarray:
    """Unit normals (H, W, 3) from elevation gradients.

    Central differences inside, one-sided differences on the border.
    """
    z = np.where(dem.valid, dem.elevations, 0.0)
    dz_dy, dz_dx = np.gradient(z, dem.gsd)
    n = np.stack([-dz_dx, -dz_dy, np.ones_like(z)], axis=-1)
    return _unit(n)


def tangent_frame(n):
    """Tangent ``t`` (projected north) and bitangent ``n x t``."""
    t = NORTH - _dot(n, NORTH)[..., None] * n
    t = _unit(t)
    return t, np.cross(n, t)


def classical_angles(n, w_i, w_o):
    """Incidence, phase and emission angles: (theta_i, theta_p, theta_o)."""
    return angle_between(n, w_i), angle_between(w_i, w_o), angle_between(n, w_o)


def half_vector(w_i, w_o):
    s = np.asarray(w_i, dtype=np.float64) + np.asarray(w_o, dtype=np.float64)
    norm = np.linalg.norm(s, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateGeometryError("incident and outgoing directions are opposite; half-vector undefined")
    return s / norm


def rusinkiewicz_angles(n, t, w_i, w_o):
    """Half/difference angles (theta_h, phi_h, theta_d, phi_d).

    The difference direction is ``w_i`` carried by the rotation that takes
    ``h`` onto ``n`` about the axis ``h x n``; its azimuth is read in the
    same (t, n x t) frame as the half-vector's.
    """
    n = np.asarray(n, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    w_i = np.asarray(w_i, dtype=np.float64)
    h = half_vector(w_i, w_o)
    b = np.cross(n, t)

    theta_h = angle_between(n, h)
    phi_h = np.arctan2(_dot(h, b), _dot(h, t))
    theta_d = angle_between(w_i, h)

    # Rodrigues rotation taking h to n: v' = c v + s x v + s (s . v) / (1 + c)
    s = np.cross(h, n)
    c = _dot(h, n)[..., None]
    w_d = c * w_i + np.cross(s, w_i) + s * _dot(s, w_i)[..., None] / (1.0 + c)
    phi_d = np.arctan2(_dot(w_d, b), _dot(w_d, t))
    return theta_h, phi_h, theta_d, phi_d


@dataclass(frozen=True, eq=False)
class ViewLightGeometry:
    n: np.ndarray
    w_i: np.ndarray
    w_o: np.ndarray
    t: np.ndarray
    theta_i: np.ndarray
    theta_p: np.ndarray
    theta_o: np.ndarray
    theta_h: np.ndarray
    phi_h: np.ndarray
    theta_d: np.ndarray
    phi_d: np.ndarray

    @property
    def shape(self):
        return self.theta_i.shape

    @classmethod
    def from_vectors(cls, n, t, w_i, w_o) -> "ViewLightGeometry":
        n, t, w_i, w_o = (np.asarray(v, dtype=np.float64) for v in (n, t, w_i, w_o))
        w_i, w_o = np.broadcast_to(w_i, n.shape), np.broadcast_to(w_o, n.shape)
        theta_i, theta_p, theta_o = classical_angles(n, w_i, w_o)
        theta_h, phi_h, theta_d, phi_d = rusinkiewicz_angles(n, t, w_i, w_o)
        return cls(n, w_i, w_o, t, theta_i, theta_p, theta_o, theta_h, phi_h, theta_d, phi_d)


def surface_points(dem) -> np.ndarray:
    x, y = dem.world_xy()
    z = np.where(dem.valid, dem.elevations, 0.0)
    return np.stack([x, y, z], axis=-1)


def view_directions(dem, camera: CameraPose) -> np.ndarray:
    """Unit vectors from each surface point toward the camera."""
    if camera.projection is Projection.ORTHO_NADIR:
        w_o = -camera.view_dir
        if w_o[2] <= 0:
            raise DegenerateGeometryError("orthographic camera does not look down on the terrain")
        return np.broadcast_to(w_o, dem.shape + (3,)).copy()
    top = np.max(dem.elevations[dem.valid]) if dem.valid.any() else 0.0
    if camera.position[2] <= top:
        raise DegenerateGeometryError(
            f"camera height {camera.position[2]:.3f} m is not above the terrain (max {top:.3f} m)"
        )
    return _unit(camera.position - surface_points(dem))


def view_light_field(dem, camera: CameraPose, sun_dir) -> ViewLightGeometry:
    """Per-pixel normals, directions and angles for a directional sun."""
    sun = np.asarray(sun_dir, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(sun) - 1.0) > 1e-9:
        raise InvalidInputError("sun_dir must be a unit vector")
    n = surface_normals(dem)
    t, _ = tangent_frame(n)
    w_o = view_directions(dem, camera)
    w_i = np.broadcast_to(sun, n.shape).copy()
    return ViewLightGeometry.from_vectors(n, t, w_i, w_o)
