"""Room layout proposals, edge-map scoring and cuboid fitting.

The room is a cuboid aligned with the Manhattan frame recovered by
calibration. The camera stands at (0, 0, h_cam) looking into the quadrant
x > 0, y > 0, so the two far walls (x = x_max and y = y_max) are the ones
observed. The near walls are never in view; they are placed
``near_offset`` metres behind the camera.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import DimensionMismatch, NoProposal, UnderConstrained
from .geom import CameraModel, box_corners, is_finite_point, line_through

ROOM_HEIGHT = 3.0
NEAR_OFFSET = 0.5
HIGH_INTENSITY = 0.3
HIGH_FRACTION = 0.6
BAND = 2
P_MAX = 200

FLOOR, CEILING, WALL_XMAX, WALL_YMAX, WALL_XMIN, WALL_YMIN = 60, 61, 62, 63, 64, 65
LAYOUT_IDS = (FLOOR, CEILING, WALL_XMAX, WALL_YMAX, WALL_XMIN, WALL_YMIN)
WALL_IDS = (WALL_XMAX, WALL_YMAX, WALL_XMIN, WALL_YMIN)
LAYOUT_NAMES = {FLOOR: "floor", CEILING: "ceiling", WALL_XMAX: "wall_xmax",
                WALL_YMAX: "wall_ymax", WALL_XMIN: "wall_xmin", WALL_YMIN: "wall_ymin"}


@dataclass
class EdgeMap:
    intensity: np.ndarray

    def __post_init__(self):
        self.intensity = np.clip(np.asarray(self.intensity, dtype=float), 0.0, 1.0)

    @property
    def width(self):
        return self.intensity.shape[1]

    @property
    def height(self):
        return self.intensity.shape[0]


@dataclass
class RoomLayout:
    corner: np.ndarray
    sizes: np.ndarray
    yaw: float = 0.0
    camera_height: float | None = None
    residual: float = 0.0
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.corner = np.asarray(self.corner, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)

    @property
    def lo(self):
        return self.corner

    @property
    def hi(self):
        return self.corner + self.sizes

    def face_plane(self, face):
        """(normal pointing into the room, offset) with normal . X = offset."""
        lo, hi = self.lo, self.hi
        return {
            FLOOR: (np.array([0, 0, 1.0]), lo[2]),
            CEILING: (np.array([0, 0, -1.0]), -hi[2]),
            WALL_XMAX: (np.array([-1.0, 0, 0]), -hi[0]),
            WALL_YMAX: (np.array([0, -1.0, 0]), -hi[1]),
            WALL_XMIN: (np.array([1.0, 0, 0]), lo[0]),
            WALL_YMIN: (np.array([0, 1.0, 0]), lo[1]),
        }[face]

    def face_corners(self, face):
        lo, hi = self.lo, self.hi
        c = box_corners(lo, hi)
        idx = {FLOOR: [0, 1, 2, 3], CEILING: [4, 7, 6, 5], WALL_XMAX: [1, 5, 6, 2],
               WALL_YMAX: [2, 6, 7, 3], WALL_XMIN: [0, 3, 7, 4], WALL_YMIN: [0, 4, 5, 1]}[face]
        return c[idx]


@dataclass
class LayoutProposal:
    polygons: dict
    edges: dict
    lines: list = field(default_factory=list)
    score: float = 0.0
    raw_score: float = 0.0
    hypothesis: tuple = ()

    @property
    def key(self):
        return tuple(sorted((k, tuple(np.round(v, 1).ravel())) for k, v in self.polygons.items()))


# ---------------------------------------------------------------- polygons


def _clip_poly_3d(P, keep):
    """Sutherland-Hodgman against a half-space given by signed values ``keep``."""
    out = []
    n = len(P)
    for i in range(n):
        a, b = P[i], P[(i + 1) % n]
        ka, kb = keep[i], keep[(i + 1) % n]
        if ka >= 0:
            out.append(a)
        if (ka >= 0) != (kb >= 0):
            t = ka / (ka - kb)
            out.append(a + t * (b - a))
    return out


def _clip_poly_rect(poly, xmin, ymin, xmax, ymax):
    for axis, bound, sign in ((0, xmin, 1), (0, xmax, -1), (1, ymin, 1), (1, ymax, -1)):
        if not poly:
            break
        vals = [sign * (p[axis] - bound) for p in poly]
        poly = _clip_poly_3d(poly, vals)
    return poly


def _project_cam(cam, Xc):
    return cam.f * Xc[..., :2] / Xc[..., 2:3] + cam.c


def face_polygons(cam: CameraModel, layout: RoomLayout, dims, near=1e-6):
    """Image polygons of the visible room faces, clipped to the image."""
    w, h = dims
    polys = {}
    for face in LAYOUT_IDS:
        Xc = cam.to_camera(layout.face_corners(face))
        clipped = _clip_poly_3d(list(Xc), list(Xc[:, 2] - near))
        if len(clipped) < 3:
            continue
        uv = [p for p in _project_cam(cam, np.array(clipped))]
        uv = _clip_poly_rect(uv, -0.5, -0.5, w - 0.5, h - 0.5)
        if len(uv) < 3:
            continue
        uv = np.array(uv)
        area = 0.5 * abs(np.dot(uv[:, 0], np.roll(uv[:, 1], 1)) - np.dot(uv[:, 1], np.roll(uv[:, 0], 1)))
        if area > 1e-6:
            polys[face] = uv
    return polys


_EDGES = {
    (FLOOR, WALL_XMAX): (1, 2), (FLOOR, WALL_YMAX): (2, 3), (FLOOR, WALL_XMIN): (0, 3),
    (FLOOR, WALL_YMIN): (0, 1), (CEILING, WALL_XMAX): (5, 6), (CEILING, WALL_YMAX): (6, 7),
    (CEILING, WALL_XMIN): (4, 7), (CEILING, WALL_YMIN): (4, 5), (WALL_XMAX, WALL_YMAX): (2, 6),
    (WALL_YMAX, WALL_XMIN): (3, 7), (WALL_XMIN, WALL_YMIN): (0, 4), (WALL_YMIN, WALL_XMAX): (1, 5),
}


def _clip_segment_rect(a, b, xmin, ymin, xmax, ymax):
    """Liang-Barsky; returns the clipped segment or None."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], a[0] - xmin), (d[0], xmax - a[0]), (-d[1], a[1] - ymin), (d[1], ymax - a[1])):
        if abs(p) < 1e-15:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return a + t0 * d, a + t1 * d


def visible_edges(cam, layout, dims, near=1e-6, min_len=0.5):
    """Image segments of the room's edges that fall inside the image."""
    w, h = dims
    C = box_corners(layout.lo, layout.hi)
    out = {}
    for name, (i, j) in _EDGES.items():
        A, B = cam.to_camera(C[i]), cam.to_camera(C[j])
        if A[2] < near and B[2] < near:
            continue
        if A[2] < near:
            A = A + (near - A[2]) / (B[2] - A[2]) * (B - A)
        elif B[2] < near:
            B = B + (near - B[2]) / (A[2] - B[2]) * (A - B)
        seg = _clip_segment_rect(_project_cam(cam, A), _project_cam(cam, B), 0.0, 0.0, w - 1.0, h - 1.0)
        if seg is not None and np.hypot(*(seg[1] - seg[0])) >= min_len:
            out[name] = np.array(seg)
    return out


def label_map(cam: CameraModel, layout: RoomLayout, dims):
    """Per-pixel layout face id by casting rays from inside the room."""
    w, h = dims
    ys, xs = np.mgrid[0:h, 0:w]
    d = cam.rays(np.column_stack([xs.ravel(), ys.ravel()]))
    C = cam.position
    lo, hi = layout.lo, layout.hi
    t = np.full((len(d), 3), np.inf)
    for a in range(3):
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.where(d[:, a] > 0, hi[a], lo[a])
            ta = (bound - C[a]) / d[:, a]
        t[:, a] = np.where(np.abs(d[:, a]) > 1e-15, ta, np.inf)
    axis = np.argmin(t, axis=1)
    pos = d[np.arange(len(d)), axis] > 0
    lut = np.array([[WALL_XMIN, WALL_XMAX], [WALL_YMIN, WALL_YMAX], [FLOOR, CEILING]])
    return lut[axis, pos.astype(int)].reshape(h, w)


def proposal_from_box(cam, layout, dims, lines=()):
    hyp = (float(layout.hi[0]), float(layout.hi[1]), float(cam.h_cam))
    return LayoutProposal(face_polygons(cam, layout, dims), visible_edges(cam, layout, dims),
                          list(lines), hypothesis=hyp)


def room_from_hypothesis(X1, Y1, room_height=ROOM_HEIGHT, near_offset=NEAR_OFFSET):
    corner = np.array([-near_offset, -near_offset, 0.0])
    return RoomLayout(corner, np.array([X1 + near_offset, Y1 + near_offset, room_height]))


# ---------------------------------------------------------------- scoring


def _disk(r):
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    keep = xs ** 2 + ys ** 2 <= r * r
    return np.column_stack([xs[keep], ys[keep]])


def boundary_band(edges, dims, band=BAND):
    """Flat pixel indices within ``band`` pixels of the boundary segments."""
    w, h = dims
    pts = []
    for a, b in edges.values():
        n = max(int(np.ceil(np.hypot(*(b - a)) * 2)), 1)
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        pts.append(np.rint(a + t * (b - a)).astype(np.int64))
    if not pts:
        return np.zeros(0, dtype=np.int64)
    P = np.unique(np.vstack(pts), axis=0)
    Q = (P[:, None, :] + _disk(band)[None, :, :]).reshape(-1, 2)
    ok = (Q[:, 0] >= 0) & (Q[:, 0] < w) & (Q[:, 1] >= 0) & (Q[:, 1] < h)
    return np.unique(Q[ok, 1] * w + Q[ok, 0])


def score_proposal(p: LayoutProposal, edge_map: EdgeMap, band=BAND, dims=None):
    """Mean edge-map intensity over the band around the proposal boundary.

    The unnormalised band sum is stored on the proposal as ``raw_score``.
    """
    if dims is not None and tuple(dims) != (edge_map.width, edge_map.height):
        raise DimensionMismatch("proposal and edge map sizes differ")
    idx = boundary_band(p.edges, (edge_map.width, edge_map.height), band)
    if idx.size == 0:
        p.raw_score, p.score = 0.0, 0.0
        return 0.0
    vals = edge_map.intensity.ravel()[idx]
    p.raw_score = float(vals.sum())
    p.score = p.raw_score / idx.size
    return p.score


# ---------------------------------------------------------------- generation


def line_support(line, edge_map: EdgeMap, thresh=HIGH_INTENSITY):
    """Fraction of a segment's samples lying on high-intensity edge pixels."""
    n = max(int(np.ceil(line.length)), 1)
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    P = np.rint(line.p0 + t * (line.q0 - line.p0)).astype(int)
    ok = (P[:, 0] >= 0) & (P[:, 0] < edge_map.width) & (P[:, 1] >= 0) & (P[:, 1] < edge_map.height)
    if not ok.any():
        return 0.0
    vals = np.zeros(len(P))
    vals[ok] = edge_map.intensity[P[ok, 1], P[ok, 0]]
    return float(np.mean(vals >= thresh))


def rectify(line, vp):
    """The segment turned about its midpoint to pass exactly through ``vp``."""
    m = line.midpoint
    vp = np.asarray(vp, dtype=float)
    d = vp[:2] / vp[2] - m if is_finite_point(vp) else vp[:2].copy()
    n = np.hypot(d[0], d[1])
    if n < 1e-9:
        return line
    d /= n
    if d @ line.direction < 0:
        d = -d
    return line_through(m - 0.5 * line.length * d, m + 0.5 * line.length * d)


def corner_hypothesis(cam, qf, qc, room_height=ROOM_HEIGHT):
    """Camera height and far-corner position from the image floor and ceiling
    corners of the vertical wall-wall edge."""
    df, dc = cam.ray(qf), cam.ray(qc)
    if df[2] >= -1e-9 or dc[2] <= 1e-9:
        return None
    a = np.hypot(df[0], df[1]) / -df[2]
    b = np.hypot(dc[0], dc[1]) / dc[2]
    h = room_height * b / (a + b)
    xy = 0.5 * (h / -df[2] * df[:2] + (room_height - h) / dc[2] * dc[:2])
    return float(xy[0]), float(xy[1]), float(h)


def generate_proposals(clusters, edge_map: EdgeMap, cam: CameraModel, room_height=ROOM_HEIGHT,
                       near_offset=NEAR_OFFSET, p_max=P_MAX):
    """Enumerate cuboid layouts consistent with the clustered line segments.

    ``clusters`` are ordered (x, y, vertical). Segments off the edge map's
    high-intensity area are dropped, after each is turned about its midpoint
    onto its vanishing point. Candidate far corners come from
    intersections of x and y lines; rays from the vertical vanishing point
    through those corners and through vertical segments are intersected with
    every horizontal line to infer floor/ceiling corners hidden from view.
    """
    dims = (edge_map.width, edge_map.height)
    if edge_map.intensity.max() < HIGH_INTENSITY:
        raise NoProposal("edge map has no high-intensity pixels")
    kept = []
    for k, cl in enumerate(clusters):
        vp = cam.vanishing_point(k)
        snapped = [rectify(l, vp) for l in cl.members]
        kept.append([l for l in snapped if line_support(l, edge_map) >= HIGH_FRACTION])
    if sum(len(k) for k in kept) < 2:
        raise NoProposal("fewer than two usable line segments")
    xs, ys, vs = kept
    vpz = cam.vanishing_point(2)
    horiz = xs + ys
    anchors = [np.cross(a.line, b.line) for a in xs for b in ys]
    anchors += [np.append(l.midpoint, 1.0) for l in vs]
    rays, seen = [], set()
    for p in anchors:
        r = np.cross(vpz, p)
        n = np.hypot(r[0], r[1])
        if n < 1e-12:
            continue
        r = r / n
        if r[0] < 0 or (r[0] == 0 and r[1] < 0):
            r = -r
        k = tuple(np.round(r, 6))
        if k not in seen:
            seen.add(k)
            rays.append(r)

    hyps = {}
    for r in rays:
        pts = []
        for l in horiz:
            q = np.cross(r, l.line)
            if abs(q[2]) < 1e-12:
                continue
            pts.append(q[:2] / q[2])
        for qf, qc in itertools.permutations(pts, 2):
            hyp = corner_hypothesis(cam, qf, qc, room_height)
            if hyp is None or hyp[0] <= 0.05 or hyp[1] <= 0.05:
                continue
            key = (round(qf[0] * 2), round(qf[1] * 2), round(qc[0] * 2), round(qc[1] * 2))
            hyps.setdefault(key, hyp)
    if not hyps:
        raise NoProposal("no corner hypothesis could be formed")

    lines = [l for k in kept for l in k]
    proposals, seen = [], set()
    for hyp in hyps.values():
        X1, Y1, h = hyp
        c = cam.with_height(h)
        prop = proposal_from_box(c, room_from_hypothesis(X1, Y1, room_height, near_offset), dims, lines)
        prop.hypothesis = hyp
        if prop.key in seen or not prop.edges:
            continue
        seen.add(prop.key)
        score_proposal(prop, edge_map)
        proposals.append(prop)
    proposals.sort(key=lambda p: (-p.score, p.hypothesis))
    return proposals[:p_max]


# ---------------------------------------------------------------- fitting


def _edge_residuals(params, cam, edges, samples, room_height, near_offset):
    X1, Y1, h = params
    c = cam.with_height(max(h, 1e-6))
    room = room_from_hypothesis(X1, Y1, room_height, near_offset)
    C = box_corners(room.lo, room.hi)
    res = []
    for name, P in samples.items():
        i, j = _EDGES[name]
        a = c.K @ c.to_camera(C[i])
        b = c.K @ c.to_camera(C[j])
        l = np.cross(a, b)
        l = l / max(np.hypot(l[0], l[1]), 1e-300)
        res.append(P @ l[:2] + l[2])
    return np.concatenate(res)


def fit_cuboid(best: LayoutProposal, cam: CameraModel, room_height=ROOM_HEIGHT,
               near_offset=NEAR_OFFSET, dims=None):
    """Fit the room cuboid (far corner and camera height, room height fixed) so
    its projected edges lie on the proposal's boundary segments."""
    floor_edges = [k for k in best.edges if FLOOR in k and (WALL_XMAX in k or WALL_YMAX in k)]
    if not floor_edges:
        raise UnderConstrained("no floor-wall junction visible")
    samples = {}
    for name, (a, b) in best.edges.items():
        if name not in _EDGES:
            continue
        t = np.linspace(0.0, 1.0, 9)[:, None]
        samples[name] = a + t * (b - a)
    x0 = np.array(best.hypothesis, dtype=float)
    sol = least_squares(_edge_residuals, x0, args=(cam, best.edges, samples, room_height, near_offset),
                        bounds=([1e-3, 1e-3, 1e-3], [np.inf, np.inf, room_height - 1e-3]),
                        x_scale=np.maximum(np.abs(x0), 1.0), xtol=1e-12, ftol=1e-12, gtol=1e-12)
    X1, Y1, h = sol.x
    room = room_from_hypothesis(X1, Y1, room_height, near_offset)
    room.camera_height = float(h)
    room.residual = float(np.mean(np.abs(sol.fun)))
    faces = set(best.polygons)
    room.flags = {
        "width_lower_bound": WALL_XMAX not in faces,
        "depth_lower_bound": WALL_YMAX not in faces,
    }
    return room


def box_iou_aligned(lo1, hi1, lo2, hi2):
    inter = np.prod(np.clip(np.minimum(hi1, hi2) - np.maximum(lo1, lo2), 0, None))
    v1, v2 = np.prod(np.asarray(hi1) - lo1), np.prod(np.asarray(hi2) - lo2)
    return float(inter / (v1 + v2 - inter))
