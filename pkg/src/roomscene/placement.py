"""Object initialisation and contextual refinement.

Each object is a unit-height model transformed as
``R(yaw) @ diag(s1*s3, s2*s3, s3) * base_scale @ O + p``: ``base_scale`` is the
metrology height, ``p`` the bottom centre. Refinement searches the grid of
(model, orientation) candidates and, per cell, maximises the IoU between the
rasterised silhouette and the instance mask over (s1, s2, s3, p) with the
support constraints enforced by projection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from . import catalog
from .dfo import TrustRegionMaximizer
from .errors import BehindCamera, RayParallelToPlane
from .geom import CameraModel, TriMesh, ray_plane, rot_z
from .layout import CEILING, FLOOR, WALL_IDS, RoomLayout
from .support import BEHIND, BELOW, SupportGraph

N_ORIENTATIONS = 8
ITERS = 30
SCREEN_ITERS = 10
KEEP_CELLS = 3
TOL_BELOW = 1e-9
TOL_BEHIND = 1e-6


@dataclass
class PlacedObject:
    instance_id: int
    model_id: str
    yaw: float
    scale: np.ndarray
    position: np.ndarray
    mesh: TriMesh
    base_scale: float = 1.0
    category: int = -1
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        self.position = np.asarray(self.position, dtype=float)

    def with_(self, **kw):
        d = dict(self.__dict__)
        d["flags"] = dict(self.flags)
        d.update(kw)
        return PlacedObject(**d)

    @property
    def scale_vector(self):
        s1, s2, s3 = self.scale
        return self.base_scale * np.array([s1 * s3, s2 * s3, s3])

    def linear(self):
        return rot_z(self.yaw) * self.scale_vector[None, :]

    def world_vertices(self):
        return self.mesh.vertices @ self.linear().T + self.position

    def center(self):
        V = self.world_vertices()
        return 0.5 * (V.min(axis=0) + V.max(axis=0))

    def oriented_box(self):
        """(centre, half sizes, yaw) of the transformed local bounding box."""
        lo, hi = self.mesh.bounds
        s = self.scale_vector
        c_local = 0.5 * (lo + hi) * s
        return rot_z(self.yaw) @ c_local + self.position, 0.5 * (hi - lo) * s, self.yaw


def transform_mesh(obj: PlacedObject):
    return TriMesh(obj.world_vertices(), obj.mesh.triangles)


# ---------------------------------------------------------------- raster


@numba.njit(cache=True)
def _fill_triangles(uv, tris, x0, y0, w, h):
    out = np.zeros((h, w), dtype=np.bool_)
    for k in range(tris.shape[0]):
        ax, ay = uv[tris[k, 0], 0], uv[tris[k, 0], 1]
        bx, by = uv[tris[k, 1], 0], uv[tris[k, 1], 1]
        cx, cy = uv[tris[k, 2], 0], uv[tris[k, 2], 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            continue
        sgn = 1.0 if area > 0 else -1.0
        xmin = max(int(np.ceil(min(ax, bx, cx))), x0)
        xmax = min(int(np.floor(max(ax, bx, cx))), x0 + w - 1)
        ymin = max(int(np.ceil(min(ay, by, cy))), y0)
        ymax = min(int(np.floor(max(ay, by, cy))), y0 + h - 1)
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                e0 = ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) * sgn
                e1 = ((cx - bx) * (py - by) - (cy - by) * (px - bx)) * sgn
                e2 = ((ax - cx) * (py - cy) - (ay - cy) * (px - cx)) * sgn
                if e0 >= -1e-9 and e1 >= -1e-9 and e2 >= -1e-9:
                    out[py - y0, px - x0] = True
    return out


def _project_vertices(cam, V):
    Xc = (V - cam.position) @ cam.R.T
    if np.any(Xc[:, 2] <= 1e-9):
        raise BehindCamera("mesh crosses the camera plane")
    return cam.f * Xc[:, :2] / Xc[:, 2:3] + cam.c


def raster_crop(mesh: TriMesh, pose: PlacedObject, cam: CameraModel, dims):
    """Silhouette restricted to its image bounding box: (crop, x0, y0)."""
    w, h = dims
    uv = _project_vertices(cam, pose.mesh.vertices @ pose.linear().T + pose.position
                           if mesh is None else mesh.vertices @ pose.linear().T + pose.position)
    x0 = max(int(np.ceil(uv[:, 0].min())), 0)
    x1 = min(int(np.floor(uv[:, 0].max())), w - 1)
    y0 = max(int(np.ceil(uv[:, 1].min())), 0)
    y1 = min(int(np.floor(uv[:, 1].max())), h - 1)
    if x1 < x0 or y1 < y0:
        return np.zeros((0, 0), dtype=bool), 0, 0
    tris = (pose.mesh if mesh is None else mesh).triangles
    return _fill_triangles(uv, tris, x0, y0, x1 - x0 + 1, y1 - y0 + 1), x0, y0


def rasterize_silhouette(mesh: TriMesh, pose: PlacedObject, cam: CameraModel, dims):
    """Binary coverage of the transformed mesh at image resolution; a pixel is
    covered when its centre lies inside a projected triangle."""
    w, h = dims
    crop, x0, y0 = raster_crop(mesh, pose, cam, dims)
    out = np.zeros((h, w), dtype=bool)
    out[y0:y0 + crop.shape[0], x0:x0 + crop.shape[1]] = crop
    return out


class SilhouetteIoU:
    """IoU of a pose's silhouette against one mask, evaluated on the
    silhouette's bounding box only. Pixels in ``ignore`` (other instances
    that may occlude this one) are left out of the silhouette."""

    def __init__(self, mask, cam, dims, ignore=None):
        self.mask = np.asarray(mask, dtype=bool)
        self.area = int(self.mask.sum())
        self.cam = cam
        self.dims = dims
        self.ignore = None if ignore is None else np.asarray(ignore, dtype=bool)

    def __call__(self, pose):
        try:
            crop, x0, y0 = raster_crop(None, pose, self.cam, self.dims)
        except BehindCamera:
            return 0.0
        if crop.size == 0:
            return 0.0
        sl = (slice(y0, y0 + crop.shape[0]), slice(x0, x0 + crop.shape[1]))
        if self.ignore is not None:
            crop = crop & ~self.ignore[sl]
        inter = int(np.count_nonzero(crop & self.mask[sl]))
        union = int(np.count_nonzero(crop)) + self.area - inter
        return inter / union if union else 0.0


# ---------------------------------------------------------------- constraints


@dataclass
class SupportSurfaceFrame:
    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    k: int = 1

    @property
    def normal(self):
        n = np.cross(self.e1, self.e2)
        return n / np.linalg.norm(n)


@dataclass
class Footprint:
    """Supporting geometry for 'below' edges: horizontal extent and top height."""
    lo: np.ndarray
    hi: np.ndarray
    top: float


def footprint_of(parent):
    if isinstance(parent, RoomLayout):
        return Footprint(parent.lo[:2].copy(), parent.hi[:2].copy(), float(parent.lo[2]))
    V = parent.world_vertices()
    return Footprint(V[:, :2].min(axis=0), V[:, :2].max(axis=0), float(V[:, 2].max()))


def side_frames(parent: PlacedObject):
    """The four vertical faces of the parent's oriented bounding box, with
    outward normals."""
    lo, hi = parent.mesh.bounds
    s = parent.scale_vector
    lo, hi = lo * s, hi * s
    d = hi - lo
    local = [
        ((hi[0], lo[1], lo[2]), (0, d[1], 0)),
        ((hi[0], hi[1], lo[2]), (-d[0], 0, 0)),
        ((lo[0], hi[1], lo[2]), (0, -d[1], 0)),
        ((lo[0], lo[1], lo[2]), (d[0], 0, 0)),
    ]
    R = rot_z(parent.yaw)
    e2 = np.array([0.0, 0.0, d[2]])
    return [SupportSurfaceFrame(R @ np.array(o) + parent.position, R @ np.array(e1, float), e2, k + 1)
            for k, (o, e1) in enumerate(local)]


def wall_frame(layout: RoomLayout, wall):
    """Inner face of a wall, normal pointing into the room."""
    n, _ = layout.face_plane(wall)
    C = layout.face_corners(wall)
    floor_pts = C[np.isclose(C[:, 2], layout.lo[2])]
    e1_dir = np.cross([0.0, 0.0, 1.0], n)
    a, b = floor_pts[0], floor_pts[1]
    if np.dot(b - a, e1_dir) < 0:
        a, b = b, a
    return SupportSurfaceFrame(a, b - a, np.array([0.0, 0.0, layout.sizes[2]]), 1)


def check_below(child: PlacedObject, parent, tol=TOL_BELOW):
    fp = footprint_of(parent)
    V = child.world_vertices()
    c = 0.5 * (V.min(axis=0) + V.max(axis=0))
    inside = np.all(c[:2] >= fp.lo - tol) and np.all(c[:2] <= fp.hi + tol)
    return bool(inside and V[:, 2].min() >= fp.top - tol)


def check_behind(child: PlacedObject, frame: SupportSurfaceFrame, tol=TOL_BEHIND):
    V = child.world_vertices()
    c = 0.5 * (V.min(axis=0) + V.max(axis=0))
    rel = c - frame.origin
    for e in (frame.e1, frame.e2):
        a = float(rel @ e)
        if a < -tol * np.linalg.norm(e) or a > e @ e + tol * np.linalg.norm(e):
            return False
    n = frame.normal
    proj = (V - child.position) @ n
    return bool(abs(2 * rel @ n - (proj.max() - proj.min())) <= 2 * tol)


def yaw_for_frame(frame: SupportSurfaceFrame):
    """Yaw turning the model's +y axis onto the surface normal (back against it)."""
    n = frame.normal
    return float(np.arctan2(-n[0], n[1]))


def project_below(obj: PlacedObject, fp: Footprint):
    """Nearest position with the centre over the support and the bottom
    resting on its top surface."""
    V = obj.world_vertices()
    c = 0.5 * (V.min(axis=0) + V.max(axis=0))
    target = np.clip(c[:2], fp.lo, fp.hi)
    p = obj.position.copy()
    p[:2] += target - c[:2]
    p[2] += fp.top - V[:, 2].min()
    return p


def project_behind(obj: PlacedObject, frame: SupportSurfaceFrame):
    V = obj.world_vertices()
    c = 0.5 * (V.min(axis=0) + V.max(axis=0))
    rel = c - frame.origin
    n = frame.normal
    proj = (V - obj.position) @ n
    target = frame.origin.copy()
    for e in (frame.e1, frame.e2):
        target += np.clip(rel @ e / (e @ e), 0.0, 1.0) * e
    target += 0.5 * (proj.max() - proj.min()) * n
    # keep the in-plane placement, snap only along the normal, then clamp
    return obj.position + (target - c)


# ---------------------------------------------------------------- init


def _bottom_center_pixel(mask):
    """Mask centre column at the mask's lowest row. The lowest row is the
    nearest ground contact even when the centre column ends higher up (the
    underside of a table top, say)."""
    ys, xs = np.nonzero(mask)
    return np.array([xs.mean(), float(ys.max())])


def init_position(mask, H, A, cam: CameraModel, layout: RoomLayout, radius=0.0, wall=None,
                  flags=None):
    """Initial bottom-centre position of an object.

    Floor and stacked objects: the mask's bottom-centre pixel is cast onto the
    horizontal plane at the object's bottom altitude and pushed back by
    ``radius`` along the viewing direction. Wall objects: the mask centroid is
    cast onto the wall plane. The result is clamped into the room.
    """
    flags = {} if flags is None else flags
    zb = A - H
    if wall is not None:
        ys, xs = np.nonzero(mask)
        n, off = layout.face_plane(wall)
        q = ray_plane(cam, (xs.mean(), ys.mean()), n, off)
        if q is None:
            raise RayParallelToPlane(f"mask centroid ray misses wall {wall}")
        p = np.array([q[0], q[1], zb]) + radius * n
    else:
        q = ray_plane(cam, _bottom_center_pixel(mask), np.array([0, 0, 1.0]), zb)
        if q is None:
            raise RayParallelToPlane("bottom ray does not reach the support plane")
        d = q[:2] - cam.position[:2]
        nd = np.linalg.norm(d)
        p = np.array([q[0], q[1], zb])
        if nd > 1e-9:
            p[:2] += radius * d / nd
    lo, hi = layout.lo, layout.hi
    clamped = np.clip(p, lo, hi)
    if not np.allclose(clamped, p):
        flags["clamped"] = True
    return clamped


def _image_anchor(obj, cam, use_top):
    uv = _project_vertices(cam, obj.world_vertices())
    y = uv[:, 1].min() if use_top else uv[:, 1].max()
    return np.array([0.5 * (uv[:, 0].min() + uv[:, 0].max()), y])


def align_to_mask(obj: PlacedObject, mask, cam: CameraModel, use_top=False, steps=6):
    """Slide ``obj`` horizontally so its projection spans the mask's columns
    about the same centre and its lowest (or, with ``use_top``, highest)
    projected point sits on the mask's extreme row. Newton steps on a finite
    difference Jacobian; returns the new position, or the old one if the
    projection is degenerate."""
    ys, xs = np.nonzero(mask)
    target = np.array([0.5 * (xs.min() + xs.max()), ys.min() - 0.5 if use_top else ys.max() + 0.5])
    p = obj.position.copy()
    eps = 1e-3
    try:
        for _ in range(steps):
            f = _image_anchor(obj.with_(position=p), cam, use_top) - target
            if np.max(np.abs(f)) < 0.05:
                break
            J = np.empty((2, 2))
            for k in range(2):
                q = p.copy()
                q[k] += eps
                J[:, k] = (_image_anchor(obj.with_(position=q), cam, use_top) - target - f) / eps
            if abs(np.linalg.det(J)) < 1e-12:
                return obj.position.copy()
            dp = np.linalg.solve(J, -f)
            n = np.linalg.norm(dp)
            if n > 0.5:
                dp *= 0.5 / n
            p[:2] += dp
    except BehindCamera:
        return obj.position.copy()
    return p


# ---------------------------------------------------------------- refinement


@dataclass
class Cell:
    model_id: str
    mesh: TriMesh
    orientation: int
    yaw: float
    frame: SupportSurfaceFrame | None
    opt: TrustRegionMaximizer | None = None
    trace: list = field(default_factory=list)


def default_orientations(n=N_ORIENTATIONS):
    return [2 * np.pi * k / n for k in range(n)]


def _make_problem(base: PlacedObject, cell: Cell, parent_geom, stype, bounds):
    slo, shi = bounds

    def pose(x):
        return base.with_(model_id=cell.model_id, mesh=cell.mesh, yaw=cell.yaw,
                          scale=x[:3], position=x[3:])

    def project(x):
        obj = pose(x)
        if stype == BEHIND:
            p = project_behind(obj, cell.frame)
        else:
            p = project_below(obj, parent_geom)
        return np.concatenate([x[:3], p])

    return pose, project


def refine_object(base: PlacedObject, cells, parent, stype, mask, cam, dims, iters=ITERS,
                  ignore=None, layout=None, method="quadratic", screen_iters=SCREEN_ITERS,
                  keep=KEEP_CELLS):
    """Grid search over cells with local refinement of each; returns the best
    pose, its IoU and the best-so-far IoU trace (length iters + 1)."""
    objective = SilhouetteIoU(mask, cam, dims, ignore)
    slo, shi = catalog.scale_bounds(base.category)
    room_lo, room_hi = layout.lo, layout.hi
    lower = np.concatenate([slo, room_lo])
    upper = np.concatenate([shi, room_hi])
    fp = footprint_of(parent) if stype == BELOW else None
    live = []
    for cell in cells:
        pose, project = _make_problem(base, cell, fp, stype, (slo, shi))
        x0 = np.concatenate([np.clip(base.scale, slo, shi), base.position])
        if stype == BELOW:
            # start from the mask-aligned position only when it fits better
            x0 = project(x0)
            xa = x0.copy()
            xa[3:] = align_to_mask(pose(x0), mask, cam, bool(base.flags.get("bottom_occluded")))
            xa = project(np.clip(xa, lower, upper))
            if objective(pose(xa)) > objective(pose(x0)):
                x0 = xa
        cell.opt = TrustRegionMaximizer(lambda x, pose=pose: objective(pose(x)), x0, lower, upper,
                                        project, method=method)
        cell.pose = pose
        cell.trace = [cell.opt.state.f]
        live.append(cell)
    first = min(screen_iters, iters)
    for cell in live:
        cell.opt.run(first)
        cell.trace = list(cell.opt.state.trace)

    def rank(c):
        return (-c.opt.state.f, c.model_id, c.orientation)

    survivors = sorted(live, key=rank)[:keep]
    for cell in survivors:
        cell.opt.run(iters - first)
        cell.trace = list(cell.opt.state.trace)
    for cell in live:
        cell.trace += [cell.trace[-1]] * (iters + 1 - len(cell.trace))
    trace = np.maximum.accumulate(np.max([c.trace for c in live], axis=0))
    best = sorted(live, key=rank)[0]
    obj = best.pose(best.opt.state.x)
    obj.flags["iou"] = best.opt.state.f
    obj.flags["accepted_moves"] = best.opt.state.accepted
    obj.flags["orientation_index"] = best.orientation
    if best.frame is not None:
        obj.flags["surface_k"] = best.frame.k
    return obj, best.opt.state.f, trace


def build_cells(candidates, orientations, stype, parent, layout):
    """Grid cells for one object. 'behind' objects take their yaw from the
    supporting surface, so their grid runs over surfaces instead of yaws."""
    cells = []
    for model_id, mesh in candidates:
        if stype == BEHIND:
            if isinstance(parent, PlacedObject):
                frames = side_frames(parent)
            else:
                frames = [wall_frame(layout, parent)]
            for k, fr in enumerate(frames):
                cells.append(Cell(model_id, mesh, k, yaw_for_frame(fr), fr))
        else:
            for k, yaw in enumerate(orientations):
                cells.append(Cell(model_id, mesh, k, float(yaw), None))
    return cells


def parent_geometry(parent_id, placed, layout):
    if parent_id in placed:
        return placed[parent_id]
    if parent_id in WALL_IDS:
        return parent_id
    return layout


def refine_scene(init, candidates, orientations, graph: SupportGraph, masks, cam, layout, dims,
                 iters=ITERS, occlusion_aware=False, method="quadratic"):
    """Refine every object in support order (parents first).

    ``init`` maps instance id to the initial PlacedObject, ``candidates`` to a
    list of (model_id, mesh), ``orientations`` to a list of yaws. Returns the
    refined objects, per-object IoU traces and the unweighted mean trace.
    """
    placed, traces = {}, {}
    for i in graph.topological_order():
        if i not in init:
            continue
        base = init[i]
        pid, stype = graph.edges[i]
        if stype == BELOW and (pid in WALL_IDS or pid == CEILING):
            stype = BEHIND
        parent = parent_geometry(pid, placed, layout)
        if stype == BEHIND and pid not in WALL_IDS and not isinstance(parent, PlacedObject):
            stype = BELOW
            parent = layout
        if stype == BELOW and pid not in placed and pid != FLOOR:
            parent = layout
        ignore = None
        if occlusion_aware:
            ignore = np.zeros_like(masks[i], dtype=bool)
            for j, m in masks.items():
                if j != i:
                    ignore |= m
        cells = build_cells(candidates[i], orientations.get(i) or default_orientations(),
                            stype, parent if stype == BEHIND else None, layout)
        try:
            obj, iou, trace = refine_object(base, cells, parent, stype, masks[i], cam, dims, iters,
                                            ignore, layout, method)
        except BehindCamera:
            obj = base.with_()
            obj.flags["infeasible_start"] = True
            obj.flags["iou"] = 0.0
            trace = np.zeros(iters + 1)
        obj.flags["support"] = (int(pid), int(stype))
        placed[i] = obj
        traces[i] = np.asarray(trace)
    mean = np.mean(list(traces.values()), axis=0) if traces else np.zeros(iters + 1)
    return placed, traces, mean
