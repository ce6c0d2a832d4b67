"""Homogeneous 2D/3D primitives, the pinhole camera, masks and triangle meshes.

Conventions
-----------
* Pixels: integer coordinates address pixel centres, origin top-left, y down.
* Room frame: z up, floor at z = 0; the camera sits at (0, 0, h_cam).
* Camera frame: x right, y down, z forward. ``R`` maps room directions to
  camera directions, ``X_cam = R @ (X - C)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateInput, DimensionMismatch

EPS = 1e-12


def hpoint(x, y, w=1.0):
    return np.array([x, y, w], dtype=float)


def to_pixel(p):
    """Dehomogenise; raises ZeroDivisionError-free by returning inf for w=0."""
    p = np.asarray(p, dtype=float)
    if abs(p[2]) < EPS:
        return np.array([np.inf, np.inf])
    return p[:2] / p[2]


def is_finite_point(p, tol=1e-9):
    p = np.asarray(p, dtype=float)
    return abs(p[2]) > tol * max(1.0, np.abs(p[:2]).max())


def unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < EPS:
        raise DegenerateInput("zero-length vector")
    return v / n


def normalize_line(l):
    """Scale a line triple so that a^2 + b^2 = 1."""
    l = np.asarray(l, dtype=float)
    n = np.hypot(l[0], l[1])
    if n < EPS:
        raise DegenerateInput("line at infinity")
    return l / n


def intersect(l1, l2):
    return np.cross(l1, l2)


@dataclass(frozen=True)
class LineSeg2:
    p0: np.ndarray
    q0: np.ndarray
    line: np.ndarray
    length: float

    @property
    def midpoint(self):
        return 0.5 * (self.p0 + self.q0)

    @property
    def direction(self):
        return (self.q0 - self.p0) / max(self.length, EPS)


def line_through(p, q) -> LineSeg2:
    p = np.asarray(p, dtype=float)[:2]
    q = np.asarray(q, dtype=float)[:2]
    length = float(np.hypot(*(q - p)))
    if length < EPS:
        raise DegenerateInput("line_through needs two distinct points")
    l = normalize_line(np.cross(np.append(p, 1.0), np.append(q, 1.0)))
    return LineSeg2(p.copy(), q.copy(), l, length)


def point_line_distance(l, p):
    l = normalize_line(l)
    return abs(l[0] * p[0] + l[1] * p[1] + l[2])


@dataclass(frozen=True)
class CameraModel:
    f: float
    c: np.ndarray
    R: np.ndarray
    h_cam: float = 1.0

    def __post_init__(self):
        if not self.f > 0:
            raise DegenerateInput("focal length must be positive")
        if not self.h_cam > 0:
            raise DegenerateInput("camera height must be positive")
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))

    @property
    def K(self):
        return np.array([[self.f, 0.0, self.c[0]], [0.0, self.f, self.c[1]], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self):
        return np.array([[1.0 / self.f, 0.0, -self.c[0] / self.f],
                         [0.0, 1.0 / self.f, -self.c[1] / self.f],
                         [0.0, 0.0, 1.0]])

    @property
    def position(self):
        return np.array([0.0, 0.0, self.h_cam])

    def with_height(self, h_cam):
        return CameraModel(self.f, self.c, self.R, float(h_cam))

    def to_camera(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.position) @ self.R.T

    def vanishing_point(self, axis):
        """Homogeneous image of room axis ``axis`` (sign kept: w < 0 means the
        direction points behind the camera)."""
        return self.K @ self.R[:, axis]

    def ray(self, pixel):
        """Unit room-frame direction of the ray through ``pixel``."""
        d = self.R.T @ (self.K_inv @ np.array([pixel[0], pixel[1], 1.0]))
        return d / np.linalg.norm(d)

    def rays(self, pixels):
        pixels = np.asarray(pixels, dtype=float)
        h = np.column_stack([pixels, np.ones(len(pixels))])
        d = (h @ self.K_inv.T) @ self.R
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def project(cam: CameraModel, X):
    """Project one room point to pixel coordinates."""
    Xc = cam.to_camera(X)
    if Xc[2] <= 0:
        raise BehindCamera(f"point {np.asarray(X)} has depth {Xc[2]:.3g}")
    return np.array([cam.f * Xc[0] / Xc[2] + cam.c[0], cam.f * Xc[1] / Xc[2] + cam.c[1]])


def project_many(cam: CameraModel, X, check=True):
    """Vectorised projection; returns (pixels, depths)."""
    Xc = cam.to_camera(np.atleast_2d(X))
    z = Xc[:, 2]
    if check and np.any(z <= 0):
        raise BehindCamera("some points have non-positive depth")
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = cam.f * Xc[:, :2] / z[:, None] + cam.c
    return uv, z


def ray_plane(cam: CameraModel, pixel, normal, offset):
    """Intersect the pixel ray with the plane ``normal . X = offset``; returns the
    room point, or None when the ray is parallel or the hit lies behind."""
    d = cam.ray(pixel)
    denom = float(np.dot(normal, d))
    if abs(denom) < 1e-12:
        return None
    t = (offset - float(np.dot(normal, cam.position))) / denom
    if t <= 0:
        return None
    return cam.position + t * d


def mask_iou(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} and {b.shape} differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


_BOX_TRIS = np.array([
    [0, 2, 1], [0, 3, 2],  # bottom
    [4, 5, 6], [4, 6, 7],  # top
    [0, 1, 5], [0, 5, 4],
    [1, 2, 6], [1, 6, 5],
    [2, 3, 7], [2, 7, 6],
    [3, 0, 4], [3, 4, 7],
])


def box_corners(lo, hi):
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    return np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                     [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], dtype=float)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    parts: tuple = field(default=(), compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise DegenerateInput("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def height(self):
        lo, hi = self.bounds
        return float(hi[2] - lo[2])

    def normalized(self):
        """Centre in x/y and rest on z = 0."""
        lo, hi = self.bounds
        shift = np.array([-(lo[0] + hi[0]) / 2, -(lo[1] + hi[1]) / 2, -lo[2]])
        parts = tuple((a + shift, b + shift) for a, b in self.parts)
        return TriMesh(self.vertices + shift, self.triangles, parts)


def box_mesh(size=(1.0, 1.0, 1.0)):
    """Floor-aligned box centred on the z axis."""
    sx, sy, sz = size
    lo, hi = np.array([-sx / 2, -sy / 2, 0.0]), np.array([sx / 2, sy / 2, sz])
    return TriMesh(box_corners(lo, hi), _BOX_TRIS, ((lo, hi),))


def union_of_boxes(boxes):
    """Mesh made of axis-aligned boxes given as (lo, hi) pairs; the boxes are
    remembered in ``parts`` so ray casters can use them directly."""
    verts, tris, parts = [], [], []
    for k, (lo, hi) in enumerate(boxes):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        verts.append(box_corners(lo, hi))
        tris.append(_BOX_TRIS + 8 * k)
        parts.append((lo, hi))
    return TriMesh(np.vstack(verts), np.vstack(tris), tuple(parts))
