"""Object heights from single-view metrology.

Each object's height line is the longest chord of its mask along a ray from
the vertical vanishing point. Top altitudes follow from the cross ratio with
the room height line as reference; heights are altitude differences taken
down the support graph, and implausible values are replaced by the
category's prior mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.stats import gaussian_kde

from .errors import EmptyMask, SingularConfiguration
from .geom import CameraModel, is_finite_point, project, ray_plane
from .layout import CEILING, FLOOR, WALL_IDS, RoomLayout
from .support import BELOW, BEHIND, SupportGraph


@dataclass
class HeightLine:
    top: np.ndarray
    bottom: np.ndarray
    owner: int = -1

    @property
    def length(self):
        return float(np.hypot(*(self.top - self.bottom)))


@dataclass
class ObjectHeight:
    H: float
    A: float
    clamped: bool = False
    flags: dict = field(default_factory=dict)

    @property
    def bottom(self):
        return self.A - self.H


def up_direction(vp_v, p):
    """Image direction in which a point at ``p`` moves when raised."""
    vp_v = np.asarray(vp_v, dtype=float)
    return vp_v[:2] - vp_v[2] * np.asarray(p, dtype=float)


def _boundary(mask):
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def _chord(mask, origin, direction, lo, hi):
    """Longest run of mask pixels along origin + s*direction, s in [lo, hi]."""
    h, w = mask.shape
    s = np.arange(lo, hi + 0.5, 0.5)
    P = origin + s[:, None] * direction
    ix, iy = np.rint(P[:, 0]).astype(int), np.rint(P[:, 1]).astype(int)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    inside = np.zeros(len(s), dtype=bool)
    inside[ok] = mask[iy[ok], ix[ok]]
    if not inside.any():
        return 0.0, None, None
    best = (-1.0, 0, 0)
    start = None
    for k, v in enumerate(np.append(inside, False)):
        if v and start is None:
            start = k
        elif not v and start is not None:
            if s[k - 1] - s[start] > best[0]:
                best = (s[k - 1] - s[start], start, k - 1)
            start = None
    _, a, b = best
    # snap the run's ends to the centres of its extreme pixels, taken on the ray
    d2 = float(direction @ direction)
    sa = float((np.array([ix[a], iy[a]]) - origin) @ direction) / d2
    sb = float((np.array([ix[b], iy[b]]) - origin) @ direction) / d2
    pa, pb = origin + sa * direction, origin + sb * direction
    return float(np.hypot(*(pb - pa))), pa, pb


def _density_peaks(x):
    if len(x) < 2 or np.ptp(x) < 1e-9:
        return np.array([np.mean(x)])
    kde = gaussian_kde(x, bw_method="silverman")
    grid = np.linspace(x.min(), x.max(), 512)
    d = kde(grid)
    left = np.concatenate([[-np.inf], d[:-1]])
    right = np.concatenate([d[1:], [-np.inf]])
    return grid[(d >= left) & (d >= right)]


def extract_height_line(mask, vp_v, owner=-1) -> HeightLine:
    """Height line of a mask as seen from the vertical vanishing point.

    Boundary pixels are turned into rays from ``vp_v``; the rays at local
    maxima of the kernel density of their angle (offset, for a vanishing
    point at infinity) are candidates, and the one with the longest chord
    through the mask wins.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask(f"instance {owner} has an empty mask")
    vp_v = np.asarray(vp_v, dtype=float)
    ys, xs = np.nonzero(_boundary(mask))
    B = np.column_stack([xs, ys]).astype(float)
    centroid = np.array(np.nonzero(mask)[::-1], dtype=float).mean(axis=1)
    reach = float(np.hypot(*mask.shape)) + 2.0
    finite = is_finite_point(vp_v)
    if finite:
        v = vp_v[:2] / vp_v[2]
        ref = centroid - v
        if np.linalg.norm(ref) < 1e-9:
            raise SingularConfiguration("vanishing point inside the mask centroid")
        ref /= np.linalg.norm(ref)
        R = B - v
        ang = np.arctan2(ref[0] * R[:, 1] - ref[1] * R[:, 0], R @ ref)
        dist = np.linalg.norm(R, axis=1)
        peaks = _density_peaks(ang)
        cands = []
        for a in peaks:
            c, s = np.cos(a), np.sin(a)
            d = np.array([c * ref[0] - s * ref[1], s * ref[0] + c * ref[1]])
            cands.append((v, d, max(dist.min() - 2.0, 0.0), dist.max() + 2.0))
    else:
        u = vp_v[:2] / np.linalg.norm(vp_v[:2])
        n = np.array([-u[1], u[0]])
        off = B @ n
        along = B @ u
        peaks = _density_peaks(off)
        cands = [(o * n, u, along.min() - 2.0, along.max() + 2.0) for o in peaks]
    best = None
    for origin, d, lo, hi in cands:
        length, a, b = _chord(mask, origin, d, lo, min(hi, lo + 2 * reach))
        if a is not None and (best is None or length > best[0] + 1e-9):
            best = (length, a, b)
    if best is None:
        p = centroid
        return HeightLine(p.copy(), p.copy(), owner)
    _, a, b = best
    up = up_direction(vp_v, 0.5 * (a + b))
    top, bottom = (b, a) if np.dot(b - a, up) >= 0 else (a, b)
    return HeightLine(np.asarray(top), np.asarray(bottom), owner)


def cross_ratio_altitude(t_i, b_r, t_r, vp_v, H_r):
    """Altitude of ``t_i`` (already on the reference line) above ``b_r``.

    Signed positions along the reference line are used, so points below the
    reference bottom give negative altitudes. A vanishing point at infinity
    takes the analytic limit of the vanishing-point ratio, which is 1.
    """
    t_i, b_r, t_r = (np.asarray(p, dtype=float)[:2] for p in (t_i, b_r, t_r))
    e = t_r - b_r
    L = np.linalg.norm(e)
    if L < 1e-12:
        raise SingularConfiguration("reference height line has zero length")
    e /= L
    x_t = float(np.dot(t_i - b_r, e))
    ratio = x_t / L
    vp_v = np.asarray(vp_v, dtype=float)
    if is_finite_point(vp_v):
        v = vp_v[:2] / vp_v[2]
        x_v = float(np.dot(v - b_r, e))
        if abs(x_v - x_t) < 1e-12 or np.linalg.norm(v - t_i) < 1e-12:
            raise SingularConfiguration("top point coincides with the vertical vanishing point")
        ratio *= (x_v - L) / (x_v - x_t)
    return H_r * ratio


def horizon(cam: CameraModel):
    return np.cross(cam.vanishing_point(0), cam.vanishing_point(1))


def map_to_reference(p, foot, b_r, t_r, horizon_line):
    """Transfer ``p`` onto the reference vertical line at the same altitude,
    using ``foot`` (the floor point below ``p``) and the horizon."""
    P, F, Br, Tr = (np.append(np.asarray(q, float)[:2], 1.0) for q in (p, foot, b_r, t_r))
    ref = np.cross(Br, Tr)
    ref_n = ref / np.hypot(ref[0], ref[1])
    if abs(np.dot(ref_n, F)) < 1e-9:
        # foot already on the reference vertical, so p is too
        return P[:2].copy()
    u = np.cross(np.cross(F, Br), horizon_line)
    q = np.cross(np.cross(u, P), ref)
    if abs(q[2]) < 1e-15:
        raise SingularConfiguration("transfer line parallel to the reference line")
    return q[:2] / q[2]


def reference_line(cam: CameraModel, layout: RoomLayout, column, dims, n=200):
    """Room height line (b_r, t_r) on a far wall whose floor point is closest to
    image column ``column``."""
    w, h = dims
    lo, hi = layout.lo, layout.hi
    pts = [np.array([hi[0], y, 0.0]) for y in np.linspace(lo[1], hi[1], n)]
    pts += [np.array([x, hi[1], 0.0]) for x in np.linspace(lo[0], hi[0], n)]
    best = None
    for X in pts:
        top = X + np.array([0, 0, layout.sizes[2]])
        if cam.to_camera(X)[2] <= 1e-6 or cam.to_camera(top)[2] <= 1e-6:
            continue
        b = project(cam, X)
        inside = 0 <= b[0] < w and 0 <= b[1] < h
        key = (not inside, abs(b[0] - column))
        if best is None or key < best[0]:
            best = (key, b, project(cam, top))
    if best is None:
        raise SingularConfiguration("no far-wall reference line in front of the camera")
    return best[1], best[2]


@dataclass
class _Metrology:
    cam: CameraModel
    layout: RoomLayout
    dims: tuple

    def __post_init__(self):
        self.vp_v = self.cam.vanishing_point(2)
        self.hz = horizon(self.cam)
        self.H_r = float(self.layout.sizes[2])

    def altitude(self, p, foot):
        b_r, t_r = reference_line(self.cam, self.layout, foot[0], self.dims)
        q = map_to_reference(p, foot, b_r, t_r, self.hz)
        return cross_ratio_altitude(q, b_r, t_r, self.vp_v, self.H_r) + self.layout.lo[2]

    def foot_at(self, pixel, altitude):
        X = ray_plane(self.cam, pixel, np.array([0, 0, 1.0]), altitude)
        if X is None:
            return None
        X[2] = self.layout.lo[2]
        try:
            return project(self.cam, X)
        except Exception:
            return None

    def wall_foot(self, pixel, wall):
        """Floor point under ``pixel`` on a wall: the vertical through the pixel
        meets the wall's floor edge."""
        n, off = self.layout.face_plane(wall)
        corners = self.layout.face_corners(wall)
        floor_pts = corners[np.isclose(corners[:, 2], self.layout.lo[2])]
        a = self.cam.K @ self.cam.to_camera(floor_pts[0])
        b = self.cam.K @ self.cam.to_camera(floor_pts[1])
        edge = np.cross(a, b)
        vert = np.cross(np.append(pixel, 1.0), self.vp_v)
        q = np.cross(edge, vert)
        if abs(q[2]) < 1e-15:
            return None
        return q[:2] / q[2]


@dataclass
class HeightSolution:
    objects: dict = field(default_factory=dict)

    def __getitem__(self, i):
        return self.objects[i]


def solve_heights(graph: SupportGraph, lines, cam: CameraModel, layout: RoomLayout, priors,
                  categories, dims, occluded=()):
    """Heights and top altitudes for every object, parents first.

    ``lines`` maps instance id to HeightLine, ``occluded`` holds ids whose
    bottom is not visible (their bottom is replaced by the parent's top).
    Support types may be corrected on ``graph`` in place when a 'below'
    estimate comes out negative.
    """
    m = _Metrology(cam, layout, tuple(dims))
    occluded = set(occluded)
    sol = HeightSolution()
    for i in graph.topological_order():
        hl = lines[i]
        parent, stype = graph.edges[i]
        flags = {}
        H = A = None
        if stype == BELOW and parent not in WALL_IDS and parent != CEILING:
            A_j = 0.0 if parent == FLOOR else sol[parent].A
            b_eff = hl.bottom
            if parent != FLOOR and i in occluded:
                b_eff = lines[parent].top
                flags["bottom_substituted"] = True
            foot = m.foot_at(b_eff, A_j + layout.lo[2])
            if foot is not None:
                A = m.altitude(hl.top, foot)
                H = A - A_j
            if H is None or H < 0:
                graph.edges[i] = (parent, BEHIND)
                stype = BEHIND
                flags["type_corrected"] = True
                H = A = None
        if H is None and parent in WALL_IDS:
            foot = m.wall_foot(hl.bottom, parent)
            if foot is not None:
                A = m.altitude(hl.top, foot)
                H = A - m.altitude(hl.bottom, foot)
        if H is None and parent == CEILING:
            A, H = m.H_r, None
            flags["low_confidence"] = True
        if H is None and A is None:
            flags["low_confidence"] = True
            pf = None
            if parent in sol.objects:
                pf = m.foot_at(lines[parent].bottom, sol[parent].bottom + layout.lo[2])
            if pf is None:
                pf = m.foot_at(hl.bottom, layout.lo[2])
            if pf is not None:
                A = m.altitude(hl.top, pf)
                H = A - m.altitude(hl.bottom, pf)
        cat = categories[i]
        mu, sigma = priors.height_mu[cat], priors.height_sigma[cat]
        clamped = False
        if H is None or not np.isfinite(H) or (
                mu > 0 and abs(H / m.H_r - mu) > 3 * sigma):
            H = mu * m.H_r
            clamped = True
            if stype == BELOW and parent not in WALL_IDS and parent != CEILING:
                A = (0.0 if parent == FLOOR else sol[parent].A) + H
            elif A is None or not np.isfinite(A):
                A = m.H_r if parent == CEILING else H
        sol.objects[i] = ObjectHeight(float(H), float(A), clamped, flags)
    return sol
