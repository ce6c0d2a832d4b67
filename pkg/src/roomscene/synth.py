"""Synthetic rooms with exact ground truth.

Scenes are drawn from a seed: a Manhattan room, a camera in one corner
looking diagonally across it, and furniture from the built-in library
standing on the floor, resting on other furniture or hanging on the far
walls. Rendering uses its own projection and a per-pixel ray caster over
the models' box parts, independent of the triangle rasteriser used by
placement, so the two can check each other.
"""
from __future__ import annotations

import functools
import json
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon

from . import catalog
from .errors import IdMismatch, PlacementRejection
from .geom import CameraModel, box_corners
from .layout import (CEILING, FLOOR, WALL_XMAX, WALL_XMIN, WALL_YMAX, WALL_YMIN, RoomLayout,
                     box_iou_aligned)
from .placement import PlacedObject
from .retrieval import DESCRIPTOR_DIM, N_VIEWS
from .scene_io import Instance, ModelEntry, SceneBundle
from .support import BEHIND, BELOW, YES, NO, PriorTables, encode_answer, LAYOUT_CATEGORY
from .vanishing import vp_angle_error

WIDTH, HEIGHT = 640, 480
ROOM_HEIGHT = 3.0
MAX_ATTEMPTS = 1000
MIN_VISIBLE = 0.75
MIN_AREA = 150
DESCRIPTOR_NOISE = 0.3
EDGE_BLUR = 1.5
PRIOR_COUNT = 50.0
PRIOR_BASE = 0.5
MAP_THRESHOLD = 0.15


@dataclass
class Noise:
    """Independently switchable corruptions of the rendered inputs."""
    line_sigma: float = 0.0      # px, Gaussian on every segment endpoint
    clutter: float = 0.0         # spurious segments, as a fraction of the real ones
    mask_morph: int = 0          # max px of random erosion / dilation per mask


@dataclass
class TruthObject:
    id: int
    category: int
    model_id: str
    yaw: float
    scale: np.ndarray
    base_scale: float
    position: np.ndarray
    parent: int
    stype: int
    bottom_occluded: bool = False

    def pose(self):
        mesh = catalog.LIBRARY[self.model_id][1]
        return PlacedObject(self.id, self.model_id, self.yaw, np.array(self.scale, float),
                            np.array(self.position, float), mesh, self.base_scale, self.category)

    @property
    def height(self):
        return float(self.base_scale * self.scale[2])

    @property
    def altitude(self):
        return float(self.position[2] + self.height)


@dataclass
class GroundTruthScene:
    layout: RoomLayout
    camera: CameraModel
    objects: list = field(default_factory=list)
    dims: tuple = (WIDTH, HEIGHT)
    seed: int = 0

    def object(self, i):
        for o in self.objects:
            if o.id == i:
                return o
        raise KeyError(i)

    def to_dict(self):
        cam, lay = self.camera, self.layout
        return {
            "seed": self.seed,
            "dims": list(self.dims),
            "camera": {"f": cam.f, "c": cam.c.tolist(), "R": cam.R.tolist(), "h_cam": cam.h_cam},
            "layout": {"corner": lay.corner.tolist(), "sizes": lay.sizes.tolist()},
            "objects": [{"id": o.id, "category": o.category, "model_id": o.model_id, "yaw": o.yaw,
                         "scale": list(map(float, o.scale)), "base_scale": o.base_scale,
                         "position": list(map(float, o.position)), "parent": o.parent, "type": o.stype,
                         "height": o.height, "altitude": o.altitude,
                         "bottom_occluded": o.bottom_occluded} for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d):
        c = d["camera"]
        cam = CameraModel(c["f"], np.array(c["c"]), np.array(c["R"]), c["h_cam"])
        lay = RoomLayout(np.array(d["layout"]["corner"]), np.array(d["layout"]["sizes"]))
        objs = [TruthObject(o["id"], o["category"], o["model_id"], o["yaw"], np.array(o["scale"]),
                            o["base_scale"], np.array(o["position"]), o["parent"], o["type"],
                            o["bottom_occluded"]) for o in d["objects"]]
        return cls(lay, cam, objs, tuple(d["dims"]), d.get("seed", 0))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def as_result(self):
        """The truth dressed as a pipeline result (for fixed-point checks)."""
        from .metrology import HeightSolution, ObjectHeight
        from .scene_io import SceneResult
        from .support import SupportGraph
        g = SupportGraph({o.id: (o.parent, o.stype) for o in self.objects})
        hs = HeightSolution({o.id: ObjectHeight(o.height, o.altitude) for o in self.objects})
        objs = {o.id: o.pose() for o in self.objects}
        return SceneResult(self.camera, self.layout, g, hs, objs)


# ---------------------------------------------------------------- camera & room


def _camera_matrix(psi, pitch, roll):
    fwd = np.array([np.cos(pitch) * np.cos(psi), np.cos(pitch) * np.sin(psi), -np.sin(pitch)])
    right = np.array([np.sin(psi), -np.cos(psi), 0.0])
    down = np.cross(fwd, right)
    c, s = np.cos(roll), np.sin(roll)
    right, down = c * right + s * down, -s * right + c * down
    return np.vstack([right, down, fwd])


class _Projector:
    """Pinhole projection written out directly from f, c, R and the centre."""

    def __init__(self, cam):
        self.f, self.c, self.R = cam.f, np.asarray(cam.c), np.asarray(cam.R)
        self.C = np.array([0.0, 0.0, cam.h_cam])

    def depth(self, X):
        return (np.atleast_2d(X) - self.C) @ self.R[2]

    def __call__(self, X):
        Y = (np.atleast_2d(X) - self.C) @ self.R.T
        return np.column_stack([self.f * Y[:, 0] / Y[:, 2] + self.c[0],
                                self.f * Y[:, 1] / Y[:, 2] + self.c[1]])


def _draw_camera_and_room(rng, dims):
    w, h = dims
    for _ in range(MAX_ATTEMPTS):
        f = rng.uniform(400, 480)
        h_cam = rng.uniform(1.2, 1.6)
        R = _camera_matrix(np.radians(rng.uniform(35, 55)), np.radians(rng.uniform(0, 8)),
                           np.radians(rng.uniform(-2, 2)))
        X1, Y1 = rng.uniform(3.5, 5.0, size=2)
        near = rng.uniform(0.4, 0.6, size=2)
        lay = RoomLayout(np.array([-near[0], -near[1], 0.0]),
                         np.array([X1 + near[0], Y1 + near[1], ROOM_HEIGHT]))
        cam = CameraModel(float(f), np.array([(w - 1) / 2, (h - 1) / 2]), R, float(h_cam))
        P = _Projector(cam)
        far = P(np.array([[X1, Y1, 0.0], [X1, Y1, ROOM_HEIGHT]]))
        if np.all((far[:, 0] > 40) & (far[:, 0] < w - 40) & (far[:, 1] > 20) & (far[:, 1] < h - 20)):
            return cam, lay
    raise PlacementRejection("could not frame the room")


# ---------------------------------------------------------------- ray casting


def _pixel_rays(cam, dims):
    w, h = dims
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dc = np.stack([(u - cam.c[0]) / cam.f, (v - cam.c[1]) / cam.f, np.ones_like(u)], axis=-1)
    d = dc @ np.asarray(cam.R)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _parts_world(obj: TruthObject):
    """Oriented boxes (centre, half extents, yaw) making up the placed model."""
    mesh = catalog.LIBRARY[obj.model_id][1]
    s1, s2, s3 = obj.scale
    sv = obj.base_scale * np.array([s1 * s3, s2 * s3, s3])
    c, s = np.cos(obj.yaw), np.sin(obj.yaw)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    out = []
    for lo, hi in mesh.parts:
        lo, hi = np.asarray(lo) * sv, np.asarray(hi) * sv
        out.append((Rz @ (0.5 * (lo + hi)) + obj.position, 0.5 * (hi - lo), Rz))
    return out


def _part_corners(center, half, Rz):
    return box_corners(-half, half) @ Rz.T + center


def _cast(rays, origin, parts):
    """Nearest hit distance per ray over oriented boxes (inf when missed)."""
    best = np.full(rays.shape[:-1], np.inf)
    for center, half, Rz in parts:
        o = Rz.T @ (origin - center)
        d = rays @ Rz
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        inside = np.abs(o) <= half
        # rays parallel to a slab: inside it for all t or never
        par = d == 0
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tn = np.minimum(t1, t2).max(axis=-1)
        tf = np.maximum(t1, t2).min(axis=-1)
        hit = (tn <= tf) & (tf > 0)
        best = np.where(hit & (tn < best), np.maximum(tn, 0.0), best)
    return best


@dataclass
class Render:
    ids: np.ndarray
    depth: np.ndarray
    full: dict


def _render_one(cam, obj, dims, rays):
    """(crop slices, hit distances) of one object's unoccluded silhouette."""
    w, h = dims
    parts = _parts_world(obj)
    uv = _Projector(cam)(np.vstack([_part_corners(*p) for p in parts]))
    x0, y0 = max(int(np.floor(uv[:, 0].min())), 0), max(int(np.floor(uv[:, 1].min())), 0)
    x1, y1 = min(int(np.ceil(uv[:, 0].max())), w - 1), min(int(np.ceil(uv[:, 1].max())), h - 1)
    if x1 < x0 or y1 < y0:
        return None, None
    sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
    return sl, _cast(rays[sl], np.array([0.0, 0.0, cam.h_cam]), parts)


def _add(render, obj, cam, dims, rays):
    ids, depth, full = render.ids.copy(), render.depth.copy(), dict(render.full)
    sl, t = _render_one(cam, obj, dims, rays)
    sil = np.zeros(ids.shape, dtype=bool)
    if sl is not None:
        sil[sl] = np.isfinite(t)
        closer = t < depth[sl]
        depth[sl] = np.where(closer, t, depth[sl])
        ids[sl] = np.where(closer, obj.id, ids[sl])
    full[obj.id] = sil
    return Render(ids, depth, full)


def render_objects(cam, objects, dims, rays=None):
    """Instance-id buffer (-1 background), distance buffer and each object's
    unoccluded silhouette."""
    w, h = dims
    rays = _pixel_rays(cam, dims) if rays is None else rays
    render = Render(np.full((h, w), -1, dtype=int), np.full((h, w), np.inf), {})
    for obj in objects:
        render = _add(render, obj, cam, dims, rays)
    return render


def layout_labels(cam, layout, dims, rays=None):
    """Layout face id per pixel, by intersecting pixel rays with the room box."""
    rays = _pixel_rays(cam, dims) if rays is None else rays
    C = np.array([0.0, 0.0, cam.h_cam])
    faces = ((0, WALL_XMIN, WALL_XMAX), (1, WALL_YMIN, WALL_YMAX), (2, FLOOR, CEILING))
    best_t = np.full(rays.shape[:-1], np.inf)
    out = np.zeros(rays.shape[:-1], dtype=np.uint8)
    for a, neg, pos in faces:
        d = rays[..., a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(d > 0, (layout.hi[a] - C[a]) / d, (layout.lo[a] - C[a]) / d)
        t = np.where(d == 0, np.inf, t)
        better = t < best_t
        best_t = np.where(better, t, best_t)
        out = np.where(better, np.where(d > 0, pos, neg), out).astype(np.uint8)
    return out


# ---------------------------------------------------------------- lines and edges


def _room_edges(layout):
    C = box_corners(layout.lo, layout.hi)
    pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
             (0, 4), (1, 5), (2, 6), (3, 7)]
    return [(C[i], C[j]) for i, j in pairs]


def _door_edges(layout, width=0.9, height=2.1):
    """Frame of a door on the +x wall next to the far corner: two jambs and a lintel."""
    x = layout.hi[0]
    y1 = layout.hi[1] - 0.4
    y0 = y1 - width
    J = np.array([[x, y0, 0.0], [x, y0, height], [x, y1, height], [x, y1, 0.0]])
    return [(J[0], J[1]), (J[1], J[2]), (J[2], J[3])]


def _box_edges(center, half, Rz):
    C = _part_corners(center, half, Rz)
    pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
             (0, 4), (1, 5), (2, 6), (3, 7)]
    return [(C[i], C[j]) for i, j in pairs]


def _clip_depth(P, A, B, near=0.05):
    da, db = P.depth(A)[0], P.depth(B)[0]
    if da < near and db < near:
        return None
    if da < near:
        A = A + (near - da) / (db - da) * (B - A)
    elif db < near:
        B = B + (near - db) / (da - db) * (A - B)
    return A, B


def _visible_runs(P, A, B, render, dims, min_len=10.0):
    """Image segments of the parts of 3D edge AB that nothing hides."""
    w, h = dims
    clipped = _clip_depth(P, A, B)
    if clipped is None:
        return []
    A, B = clipped
    uv = P(np.vstack([A, B]))
    n = int(np.ceil(np.hypot(*(uv[1] - uv[0])))) + 1
    t = np.linspace(0.0, 1.0, max(n, 2))[:, None]
    X = A + t * (B - A)
    q = P(X)
    dist = np.linalg.norm(X - P.C, axis=1)
    px = np.round(q).astype(int)
    inside = (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
    vis = np.zeros(len(X), dtype=bool)
    k = np.flatnonzero(inside)
    zb = render.depth[px[k, 1], px[k, 0]]
    vis[k] = zb >= dist[k] - 0.01 - 1e-3 * dist[k]
    segs = []
    edges = np.flatnonzero(np.diff(np.concatenate([[0], vis.astype(int), [0]])))
    for s, e in zip(edges[::2], edges[1::2]):
        a, b = q[s], q[e - 1]
        if np.hypot(*(b - a)) >= min_len:
            segs.append([a[0], a[1], b[0], b[1]])
    return segs


def scene_lines(cam, layout, objects, render, dims):
    P = _Projector(cam)
    segs = []
    # an unfurnished room shows too few edges to calibrate from, so it gets a door
    edges = _room_edges(layout) + (_door_edges(layout) if not objects else [])
    for A, B in edges:
        segs += _visible_runs(P, A, B, render, dims)
    for obj in objects:
        for part in _parts_world(obj):
            for A, B in _box_edges(*part):
                segs += _visible_runs(P, A, B, render, dims)
    return np.array(segs, dtype=float).reshape(-1, 4)


def edge_map(cam, layout, dims, blur=EDGE_BLUR):
    """Blurred drawing of every room edge, normalised to a peak of 255."""
    w, h = dims
    P = _Projector(cam)
    img = np.zeros((h, w))
    for A, B in _room_edges(layout):
        clipped = _clip_depth(P, A, B)
        if clipped is None:
            continue
        A, B = clipped
        uv = P(np.vstack([A, B]))
        n = int(np.ceil(2 * np.hypot(*(uv[1] - uv[0])))) + 1
        t = np.linspace(0.0, 1.0, min(max(n, 2), 200000))[:, None]
        q = np.round(P(A + t * (B - A))).astype(int)
        ok = (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h)
        img[q[ok, 1], q[ok, 0]] = 1.0
    img = ndimage.gaussian_filter(img, blur)
    if img.max() > 0:
        img /= img.max()
    return np.round(255 * img).astype(np.uint8)


# ---------------------------------------------------------------- priors and descriptors


def make_priors():
    counts = np.full((40, 40, 2), PRIOR_BASE)
    for name in catalog.FLOOR_CATS:
        counts[catalog.CAT[name], catalog.FLOOR, BELOW] = PRIOR_COUNT
    for name in catalog.WALL_CATS:
        counts[catalog.CAT[name], catalog.WALL, BEHIND] = PRIOR_COUNT
    for child, parents in catalog.SUPPORT_RULES.items():
        for rank, p in enumerate(parents):
            counts[catalog.CAT[child], catalog.CAT[p], BELOW] = PRIOR_COUNT - 10 * rank
    mu = np.zeros(40)
    sigma = np.zeros(40)
    for name, (hr, _, _) in catalog.SIZES.items():
        mu[catalog.CAT[name]] = np.mean(hr) / ROOM_HEIGHT
        sigma[catalog.CAT[name]] = (hr[1] - hr[0]) / np.sqrt(12) / ROOM_HEIGHT
    return PriorTables(counts, mu, sigma)


def model_views(model_id):
    rng = np.random.default_rng(zlib.crc32(model_id.encode()))
    return rng.standard_normal((N_VIEWS, DESCRIPTOR_DIM)).astype(np.float32)


@functools.lru_cache(maxsize=1)
def _shared_views():
    out = {}
    for m in catalog.MODEL_IDS:
        v = model_views(m)
        v.flags.writeable = False
        out[m] = v
    return out


def model_library():
    """Library entries; every bundle shares one read-only copy of the views."""
    views = _shared_views()
    return [ModelEntry(m, catalog.LIBRARY[m][0], catalog.LIBRARY[m][1], views[m]) for m in catalog.MODEL_IDS]


# ---------------------------------------------------------------- object sampling


def _world_bounds(obj):
    V = obj.pose().world_vertices()
    return V.min(axis=0), V.max(axis=0)


def _overlap(a, b, eps=1e-6):
    (alo, ahi), (blo, bhi) = a, b
    return bool(np.all(np.minimum(ahi, bhi) - np.maximum(alo, blo) > eps))


def _in_view(P, obj, dims, margin=2.0):
    w, h = dims
    V = obj.pose().world_vertices()
    if np.any(P.depth(V) < 0.3):
        return False
    uv = P(V)
    return bool(np.all((uv[:, 0] >= margin) & (uv[:, 0] <= w - 1 - margin) &
                       (uv[:, 1] >= margin) & (uv[:, 1] <= h - 1 - margin)))


def _size(rng, cat):
    hr = catalog.SIZES[catalog.NYU40[cat]][0]
    H = rng.uniform(*hr)
    s = np.array([rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1), rng.uniform(0.95, 1.05)])
    return H, s


def _draw_floor(rng, P, layout, k, dims):
    cat = catalog.CAT[catalog.FLOOR_CATS[rng.integers(len(catalog.FLOOR_CATS))]]
    model = rng.choice(catalog.models_for(cat))
    H, s = _size(rng, cat)
    yaw = float(rng.integers(4)) * np.pi / 2
    # aim at a random pixel of the lower half of the image and drop onto the floor
    w, h = dims
    u, v = rng.uniform([0.05 * w, 0.5 * h], [0.95 * w, 0.98 * h])
    d = np.linalg.solve(np.diag([P.f, P.f, 1.0]), np.array([u - P.c[0], v - P.c[1], 1.0])) @ P.R
    if d[2] >= -1e-6:
        return None
    xy = P.C[:2] - P.C[2] / d[2] * d[:2]
    return TruthObject(k, cat, str(model), yaw, s, H / s[2], np.array([xy[0], xy[1], 0.0]), FLOOR, BELOW)


def _draw_wall(rng, layout, k):
    cat = catalog.CAT[catalog.WALL_CATS[rng.integers(len(catalog.WALL_CATS))]]
    model = rng.choice(catalog.models_for(cat))
    H, s = _size(rng, cat)
    wall = (WALL_XMAX, WALL_YMAX)[rng.integers(2)]
    z = rng.uniform(0.9, min(1.7, ROOM_HEIGHT - 0.2 - H))
    if wall == WALL_XMAX:
        yaw, pos = np.pi / 2, np.array([layout.hi[0], rng.uniform(0.4, layout.hi[1] - 0.4), z])
    else:
        yaw, pos = np.pi, np.array([rng.uniform(0.4, layout.hi[0] - 0.4), layout.hi[1], z])
    obj = TruthObject(k, cat, str(model), yaw, s, H / s[2], pos, wall, BEHIND)
    # slide along the inward normal until the back face touches the wall
    n, off = layout.face_plane(wall)
    V = obj.pose().world_vertices()
    obj.position = obj.position + (off - (V @ n).min()) * n
    return obj


def _draw_top(rng, objects, k):
    options = []
    for child, parents in sorted(catalog.SUPPORT_RULES.items()):
        ids = [o for o in objects if o.parent == FLOOR and catalog.NYU40[o.category] in parents]
        if ids:
            options.append((child, ids))
    if not options:
        return None
    child, ids = options[rng.integers(len(options))]
    parent = ids[rng.integers(len(ids))]
    cat = catalog.CAT[child]
    model = rng.choice(catalog.models_for(cat))
    H, s = _size(rng, cat)
    lo, hi = _world_bounds(parent)
    yaw = parent.yaw + float(rng.integers(4)) * np.pi / 2
    obj = TruthObject(k, cat, str(model), yaw, s, H / s[2], np.array([0.0, 0.0, hi[2]]), parent.id, BELOW)
    clo, chi = _world_bounds(obj)
    half = 0.5 * (chi - clo)[:2]
    room = (hi[:2] - lo[:2]) / 2 - half - 0.02
    if np.any(room < 0):
        return None
    xy = 0.5 * (lo[:2] + hi[:2]) + rng.uniform(-room, room)
    obj.position = np.array([xy[0], xy[1], hi[2]])
    return obj


def _bottom_hidden(P, obj, render, dims):
    """True when the front-most bottom corner of the object is covered by
    something else in the image."""
    w, h = dims
    V = obj.pose().world_vertices()
    bottom = V[np.isclose(V[:, 2], V[:, 2].min())]
    uv = P(bottom)
    j = int(np.argmax(uv[:, 1]))
    x, y = np.round(uv[j]).astype(int)
    win = render.ids[max(y - 3, 0):min(y + 1, h), max(x - 2, 0):min(x + 3, w)]
    return not np.any(win == obj.id)


def _acceptable(P, objects, render, dims):
    for o in objects:
        vis = np.count_nonzero(render.ids == o.id)
        full = np.count_nonzero(render.full[o.id])
        if vis < MIN_AREA or vis < MIN_VISIBLE * full:
            return False
        if o.parent == FLOOR and _bottom_hidden(P, o, render, dims):
            return False
    return True


def _compose(n):
    n_wall = int(round(0.2 * n))
    n_top = int(round(0.35 * n))
    return n - n_wall - n_top, n_top, n_wall


def _draw_objects(rng, cam, layout, n, dims, rays):
    P = _Projector(cam)
    n_floor, n_top, n_wall = _compose(n)
    plan = ["floor"] * n_floor + ["top"] * n_top + ["wall"] * n_wall
    w, h = dims
    objects = []
    render = Render(np.full((h, w), -1, dtype=int), np.full((h, w), np.inf), {})
    k = attempts = 0
    while k < len(plan):
        if attempts >= MAX_ATTEMPTS:
            raise PlacementRejection(f"could not place object {k} of {n} after {MAX_ATTEMPTS} attempts")
        attempts += 1
        kind = plan[k]
        # when one kind keeps failing, cycle through the other kinds
        kinds = ("floor", "top", "wall")
        kind = kinds[(kinds.index(kind) + attempts // 100) % 3]
        cand = None
        if kind == "top":
            cand = _draw_top(rng, objects, k)
        if cand is None:
            cand = _draw_wall(rng, layout, k) if kind == "wall" else _draw_floor(rng, P, layout, k, dims)
        if cand is None:
            continue
        b = _world_bounds(cand)
        if np.any(b[0] < layout.lo - 1e-9) or np.any(b[1] > layout.hi + 1e-9):
            continue
        if any(_overlap(b, _world_bounds(o)) for o in objects) or not _in_view(P, cand, dims):
            continue
        trial = _add(render, cand, cam, dims, rays)
        if not _acceptable(P, objects + [cand], trial, dims):
            continue
        objects.append(cand)
        render = trial
        k += 1
        attempts = 0
    return objects


def _relabel(rng, objects):
    """Shuffle instance ids so parents do not always precede children."""
    perm = rng.permutation(len(objects))
    new = {o.id: int(perm[k]) for k, o in enumerate(objects)}
    for o in objects:
        o.id = new[o.id]
        if o.parent in new and o.parent < 60:
            o.parent = new[o.parent]
    return sorted(objects, key=lambda o: o.id)


# ---------------------------------------------------------------- bundle assembly


def _answers(o, objects, priors):
    by_id = {x.id: x for x in objects}
    if o.parent in by_id:
        pcat = by_id[o.parent].category
        first = encode_answer("instance", o.parent)
        layout = NO
    else:
        pcat = LAYOUT_CATEGORY[o.parent]
        first = encode_answer("category", pcat)
        layout = YES
    cands = [pcat] + [c for c in priors.parent_ranking(o.category) if c != pcat][:4]
    return [first, encode_answer("category", pcat), encode_answer("type", o.stype), layout], cands


def _noisy_masks(rng, ids, objects, k):
    if k <= 0:
        return {o.id: ids == o.id for o in objects}
    out = np.full_like(ids, -1)
    st = ndimage.generate_binary_structure(2, 1)
    for o in objects:
        m = ids == o.id
        r = int(rng.integers(-k, k + 1))
        if r > 0:
            m = ndimage.binary_dilation(m, st, iterations=r) & ((ids == -1) | (ids == o.id))
        elif r < 0:
            er = ndimage.binary_erosion(m, st, iterations=-r)
            m = er if er.any() else m
        out[m & (out == -1)] = o.id
    return {o.id: out == o.id for o in objects}


def _noisy_lines(rng, lines, noise: Noise, dims):
    w, h = dims
    if noise.line_sigma > 0 and len(lines):
        lines = lines + rng.normal(0.0, noise.line_sigma, size=lines.shape)
    n_clutter = int(round(noise.clutter * len(lines)))
    if n_clutter:
        c = rng.uniform([0, 0], [w - 1, h - 1], size=(n_clutter, 2))
        ang = rng.uniform(0, np.pi, n_clutter)
        L = rng.uniform(20, 120, n_clutter)
        d = np.column_stack([np.cos(ang), np.sin(ang)]) * L[:, None] / 2
        clutter = np.column_stack([c - d, c + d])
        clutter[:, [0, 2]] = np.clip(clutter[:, [0, 2]], 0, w - 1)
        clutter[:, [1, 3]] = np.clip(clutter[:, [1, 3]], 0, h - 1)
        lines = np.vstack([lines, clutter])
    return lines


def make_scene(seed=0, n_objects=8, noise: Noise | None = None, inject_answers=True, dims=(WIDTH, HEIGHT)):
    """Draw a ground-truth room and render it into a SceneBundle."""
    if n_objects > 60:
        raise ValueError("at most 60 objects")
    noise = noise or Noise()
    rng = np.random.default_rng(seed)
    cam, layout = _draw_camera_and_room(rng, dims)
    rays = _pixel_rays(cam, dims)
    objects = _draw_objects(rng, cam, layout, n_objects, dims, rays)
    objects = _relabel(rng, objects)
    render = render_objects(cam, objects, dims, rays)
    P = _Projector(cam)
    for o in objects:
        o.bottom_occluded = o.parent < 60 and _bottom_hidden(P, o, render, dims)
    truth = GroundTruthScene(layout, cam, objects, tuple(dims), seed)

    lines = _noisy_lines(rng, scene_lines(cam, layout, objects, render, dims), noise, dims)
    masks = _noisy_masks(rng, render.ids, objects, noise.mask_morph)
    priors = make_priors()
    instances = []
    for o in objects:
        views = model_views(o.model_id)
        desc = views[rng.integers(N_VIEWS)] + DESCRIPTOR_NOISE * rng.standard_normal(DESCRIPTOR_DIM)
        grid = [2 * np.pi * j / 8 for j in range(8)]
        truth_k = int(np.round(o.yaw / (np.pi / 4))) % 8
        others = [j for j in rng.permutation(8) if j != truth_k][:2]
        orient = [grid[j] for j in sorted([truth_k] + [int(j) for j in others])]
        answers, cands = _answers(o, objects, priors) if inject_answers else (None, None)
        instances.append(Instance(o.id, o.category, masks[o.id], desc.astype(np.float32), answers, cands,
                                  orient, bool(o.bottom_occluded)))
    bundle = SceneBundle(dims[0], dims[1], instances, edge_map(cam, layout, dims), lines, model_library(),
                         priors, layout_labels(cam, layout, dims, rays), {"seed": int(seed), "source": "synth"})
    return truth, bundle


# ---------------------------------------------------------------- evaluation


def oriented_box(obj: PlacedObject):
    """Footprint polygon and z range of the object's oriented bounding box."""
    lo, hi = obj.mesh.bounds
    sv = obj.scale_vector
    lo, hi = lo * sv, hi * sv
    c = box_corners(lo, hi)[:4]
    R = obj.linear() / sv[None, :]
    xy = (c @ R.T)[:, :2] + obj.position[:2]
    return Polygon(xy), lo[2] + obj.position[2], hi[2] + obj.position[2]


def box_iou_3d(a: PlacedObject, b: PlacedObject):
    pa, za0, za1 = oriented_box(a)
    pb, zb0, zb1 = oriented_box(b)
    inter = pa.intersection(pb).area * max(0.0, min(za1, zb1) - max(za0, zb0))
    va = pa.area * (za1 - za0)
    vb = pb.area * (zb1 - zb0)
    union = va + vb - inter
    return float(inter / union) if union > 0 else 0.0


def _matched(dets, truths, iou_fn, thresh):
    """Greedy matching in score order; ``dets`` are (score, key, object) and
    ``truths`` maps key to a list of objects. Returns the tp flags."""
    dets = sorted(dets, key=lambda d: -d[0])
    used = set()
    tp = np.zeros(len(dets))
    for k, (_, key, d) in enumerate(dets):
        best, best_j = thresh, None
        for j, t in enumerate(truths.get(key, ())):
            if (key, j) in used:
                continue
            v = iou_fn(d, t)
            if v >= best:
                best, best_j = v, j
        if best_j is not None:
            used.add((key, best_j))
            tp[k] = 1
    return tp


def _ap(tp, n_truth):
    if not len(tp):
        return 0.0
    ctp = np.cumsum(tp)
    rec = ctp / n_truth
    prec = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(detections, truths, iou_fn, thresh=MAP_THRESHOLD):
    """VOC-style AP (all-point interpolation) for one category. ``detections``
    are (score, object) pairs."""
    if not truths:
        return None
    tp = _matched([(sc, 0, d) for sc, d in detections], {0: list(truths)}, iou_fn, thresh)
    return _ap(tp, len(truths))


def _detections(result, truth):
    return [(float(p.flags.get("iou", 1.0)), p) for p in result.objects.values()]


def pooled_map(pairs, thresh=MAP_THRESHOLD):
    """mAP over many scenes: per category, detections from all (result,
    truth) pairs are ranked together and matched within their own scene."""
    cats = sorted({o.category for _, t in pairs for o in t.objects})
    aps = []
    for cat in cats:
        dets, gts = [], {}
        for k, (res, tr) in enumerate(pairs):
            gts[k] = [o.pose() for o in tr.objects if o.category == cat]
            dets += [(sc, k, p) for sc, p in _detections(res, tr) if p.category == cat]
        n = sum(len(v) for v in gts.values())
        if n:
            aps.append(_ap(_matched(dets, gts, box_iou_3d, thresh), n))
    return float(np.mean(aps)) if aps else float("nan")


def evaluate(result, truth: GroundTruthScene):
    """Layout IoU, per-object 3D IoU and mAP@0.15, support accuracy, VP
    angular error and relative height error."""
    truth_ids = {o.id for o in truth.objects}
    res_ids = set(result.objects)
    if res_ids != truth_ids:
        raise IdMismatch(f"result ids {sorted(res_ids)} differ from truth ids {sorted(truth_ids)}")
    lay = result.layout
    out = {"layout_iou": box_iou_aligned(lay.lo, lay.hi, truth.layout.lo, truth.layout.hi),
           "vp_error_deg": vp_angle_error(result.camera, truth.camera)}
    ious, correct, herr = {}, [], []
    heights = getattr(result.heights, "objects", result.heights) or {}
    for o in truth.objects:
        t = o.pose()
        ious[o.id] = box_iou_3d(result.objects[o.id], t)
        pe = result.graph.edges.get(o.id)
        correct.append(pe is not None and tuple(pe) == (o.parent, o.stype))
        if o.id in heights:
            herr.append(abs(heights[o.id].H - o.height) / o.height)
    out["object_iou"] = ious
    out["mean_object_iou"] = float(np.mean(list(ious.values()))) if ious else float("nan")
    out["support_accuracy"] = float(np.mean(correct)) if correct else float("nan")
    out["height_rel_error"] = float(np.mean(herr)) if herr else float("nan")
    aps = []
    for cat in sorted({o.category for o in truth.objects}):
        gts = [o.pose() for o in truth.objects if o.category == cat]
        dets = [(sc, p) for sc, p in _detections(result, truth) if p.category == cat]
        ap = average_precision(dets, gts, box_iou_3d)
        if ap is not None:
            aps.append(ap)
    out["map"] = float(np.mean(aps)) if aps else float("nan")
    return out
