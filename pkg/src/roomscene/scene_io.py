"""Scene bundles, results and OBJ export.

A bundle is one directory::

    scene.json              manifest (schema version, image size, instances)
    masks.png               16-bit instance map, pixel = instance id + 1, 0 = background
    edge_map.png            8-bit layout edge map
    label_map.png           optional 8-bit layout face ids
    lines.json              [[x0, y0, x1, y1], ...]
    object_descriptors.bin  little-endian float32, one 2048-vector per instance
    models.json             model manifest (id, category, mesh path, descriptor offset)
    model_descriptors.bin   little-endian float32, 32 x 2048 per model
    models/<id>.obj         candidate meshes
    priors.json             40x40x2 support counts and per-category height mean/sigma

Every file is written through a temporary name and renamed into place.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvariantViolation, MissingFile, SchemaViolation
from .geom import CameraModel, TriMesh, box_corners
from .layout import RoomLayout
from .retrieval import DESCRIPTOR_DIM, N_VIEWS
from .support import N_ANSWERS, N_CATEGORIES, N_INSTANCES, PriorTables, SupportGraph

SCHEMA_VERSION = 1
FILES = {
    "masks": "masks.png",
    "edge_map": "edge_map.png",
    "label_map": "label_map.png",
    "lines": "lines.json",
    "object_descriptors": "object_descriptors.bin",
    "models": "models.json",
    "model_descriptors": "model_descriptors.bin",
    "priors": "priors.json",
}


@dataclass
class Instance:
    id: int
    category: int
    mask: np.ndarray
    descriptor: np.ndarray | None = None
    answers: list | None = None
    support_candidates: list | None = None
    orientation_candidates: list | None = None
    bottom_occluded: bool = False


@dataclass
class ModelEntry:
    model_id: str
    category: int
    mesh: TriMesh
    views: np.ndarray


@dataclass
class SceneBundle:
    width: int
    height: int
    instances: list
    edge_map: np.ndarray
    lines: np.ndarray
    models: list
    priors: PriorTables
    label_map: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dims(self):
        return (self.width, self.height)

    def instance(self, i):
        for ins in self.instances:
            if ins.id == i:
                return ins
        raise KeyError(i)

    def model(self, model_id):
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise KeyError(model_id)

    def validate(self, where="bundle"):
        shape = (self.height, self.width)
        if len(self.instances) > N_INSTANCES:
            raise InvariantViolation(f"{len(self.instances)} instances, at most {N_INSTANCES} allowed", where)
        seen = set()
        for ins in self.instances:
            tag = f"{where}: instance {ins.id}"
            if not 0 <= ins.id < N_INSTANCES or ins.id in seen:
                raise InvariantViolation("instance id out of range or duplicated", tag)
            seen.add(ins.id)
            if not 0 <= ins.category < N_CATEGORIES:
                raise InvariantViolation(f"category {ins.category} out of range", tag)
            if np.shape(ins.mask) != shape:
                raise InvariantViolation(f"mask shape {np.shape(ins.mask)} differs from image {shape}", tag)
            if not np.any(ins.mask):
                raise InvariantViolation("empty mask", tag)
            if ins.answers is not None and (len(ins.answers) != 4 or
                                            any(not 0 <= a < N_ANSWERS for a in ins.answers)):
                raise InvariantViolation("answers must be four codes in 0..103", tag)
            if ins.support_candidates is not None and any(
                    not 0 <= c < N_CATEGORIES for c in ins.support_candidates):
                raise InvariantViolation("support candidate category out of range", tag)
            if ins.descriptor is not None and np.shape(ins.descriptor) != (DESCRIPTOR_DIM,):
                raise InvariantViolation("descriptor must have 2048 entries", tag)
        stack = np.zeros(shape, dtype=int)
        for ins in self.instances:
            stack += np.asarray(ins.mask, dtype=bool)
        if np.any(stack > 1):
            raise InvariantViolation("instance masks overlap", f"{where}: masks")
        if np.shape(self.edge_map) != shape:
            raise InvariantViolation("edge map size differs from image", f"{where}: edge_map")
        if self.label_map is not None and np.shape(self.label_map) != shape:
            raise InvariantViolation("label map size differs from image", f"{where}: label_map")
        if np.ndim(self.lines) != 2 or np.shape(self.lines)[1] != 4:
            raise InvariantViolation("lines must be an (N, 4) array", f"{where}: lines")
        ids = set()
        for m in self.models:
            if m.model_id in ids:
                raise InvariantViolation(f"duplicate model {m.model_id}", f"{where}: models")
            ids.add(m.model_id)
            if np.shape(m.views) != (N_VIEWS, DESCRIPTOR_DIM):
                raise InvariantViolation(f"model {m.model_id} needs 32x2048 view descriptors",
                                         f"{where}: models")


# ---------------------------------------------------------------- atomic files


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_bytes(obj):
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode("utf-8")


def _png_bytes(arr):
    buf = io.BytesIO()
    if arr.dtype == np.uint16:
        img = Image.fromarray(arr)   # uint16 maps to I;16
    else:
        img = Image.fromarray(arr.astype(np.uint8), mode="L")
    img.save(buf, format="PNG")
    return buf.getvalue()


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def mesh_to_obj(mesh: TriMesh):
    out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(out) + "\n"


def obj_to_mesh(text, where="obj"):
    V, F = [], []
    for n, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0] in ("#", "g", "o", "s"):
            continue
        try:
            if parts[0] == "v":
                V.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                F.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
        except ValueError as e:
            raise SchemaViolation(f"line {n}: {e}", where) from None
    if not V or not F:
        raise SchemaViolation("mesh has no vertices or faces", where)
    return TriMesh(np.array(V), np.array(F))


# ---------------------------------------------------------------- save / load


def _mask_map(bundle):
    m = np.zeros((bundle.height, bundle.width), dtype=np.uint16)
    for ins in bundle.instances:
        m[np.asarray(ins.mask, dtype=bool)] = ins.id + 1
    return m


def bundle_files(bundle: SceneBundle):
    """All bundle files as {relative path: bytes}."""
    files = {}
    desc_rows = []
    instances = []
    for ins in sorted(bundle.instances, key=lambda s: s.id):
        rec = {"id": int(ins.id), "category": int(ins.category), "mask_value": int(ins.id) + 1,
               "bottom_occluded": bool(ins.bottom_occluded)}
        if ins.descriptor is not None:
            rec["descriptor_index"] = len(desc_rows)
            desc_rows.append(np.asarray(ins.descriptor, dtype=np.float32))
        if ins.answers is not None:
            rec["answers"] = [int(a) for a in ins.answers]
        if ins.support_candidates is not None:
            rec["support_candidates"] = [int(c) for c in ins.support_candidates]
        if ins.orientation_candidates is not None:
            rec["orientation_candidates"] = [float(y) for y in ins.orientation_candidates]
        instances.append(rec)
    refs = dict(FILES)
    if bundle.label_map is None:
        del refs["label_map"]
    else:
        files[refs["label_map"]] = _png_bytes(np.asarray(bundle.label_map, dtype=np.uint8))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "image": {"width": int(bundle.width), "height": int(bundle.height)},
        "instances": instances,
        "files": refs,
        "meta": bundle.meta,
    }
    files["scene.json"] = _json_bytes(manifest)
    files[refs["masks"]] = _png_bytes(_mask_map(bundle))
    files[refs["edge_map"]] = _png_bytes(np.asarray(bundle.edge_map, dtype=np.uint8))
    files[refs["lines"]] = _json_bytes([[float(v) for v in row] for row in np.asarray(bundle.lines)])
    files[refs["object_descriptors"]] = b"".join(_f32(d) for d in desc_rows)
    models, blobs = [], []
    for k, m in enumerate(bundle.models):
        path = f"models/{m.model_id}.obj"
        models.append({"model_id": m.model_id, "category": int(m.category), "mesh": path,
                       "descriptor_offset": k * N_VIEWS})
        files[path] = mesh_to_obj(m.mesh).encode("utf-8")
        blobs.append(_f32(m.views))
    files[refs["models"]] = _json_bytes(models)
    files[refs["model_descriptors"]] = b"".join(blobs)
    p = bundle.priors
    files[refs["priors"]] = _json_bytes({
        "support_count": p.support_count.tolist(),
        "height_mu": p.height_mu.tolist(),
        "height_sigma": p.height_sigma.tolist(),
    })
    return files


def save_bundle(bundle: SceneBundle, path):
    bundle.validate()
    path = Path(path)
    for rel, data in sorted(bundle_files(bundle).items()):
        _atomic_write(path / rel, data)
    return path


def _read(path, rel, binary=True):
    f = Path(path) / rel
    if not f.is_file():
        raise MissingFile("file not found", str(f))
    return f.read_bytes() if binary else f.read_text(encoding="utf-8")


def _read_json(path, rel):
    try:
        return json.loads(_read(path, rel, binary=False))
    except json.JSONDecodeError as e:
        raise SchemaViolation(f"invalid JSON: {e}", str(Path(path) / rel)) from None


def _read_png(path, rel):
    data = _read(path, rel)
    try:
        return np.array(Image.open(io.BytesIO(data)))
    except Exception as e:  # PIL raises a variety of types
        raise SchemaViolation(f"unreadable PNG: {e}", str(Path(path) / rel)) from None


def _field(d, key, kind, where):
    if not isinstance(d, dict) or key not in d:
        raise SchemaViolation(f"missing field '{key}'", where)
    v = d[key]
    if kind is int and isinstance(v, bool) or not isinstance(v, kind):
        raise SchemaViolation(f"field '{key}' has wrong type {type(v).__name__}", where)
    return v


def _f32_rows(data, n_cols, where):
    if len(data) % (4 * n_cols):
        raise SchemaViolation(f"size {len(data)} is not a multiple of {4 * n_cols}", where)
    return np.frombuffer(data, dtype="<f4").reshape(-1, n_cols).astype(np.float32)


def load_bundle(path) -> SceneBundle:
    path = Path(path)
    if not path.is_dir():
        raise MissingFile("bundle directory not found", str(path))
    where = str(path / "scene.json")
    man = _read_json(path, "scene.json")
    if _field(man, "schema_version", int, where) != SCHEMA_VERSION:
        raise SchemaViolation(f"unsupported schema version {man['schema_version']}", where)
    image = _field(man, "image", dict, where)
    w, h = _field(image, "width", int, where), _field(image, "height", int, where)
    refs = _field(man, "files", dict, where)
    for key in FILES:
        if key != "label_map" and key not in refs:
            raise SchemaViolation(f"files.{key} missing", where)
    recs = _field(man, "instances", list, where)
    if len(recs) > N_INSTANCES:
        raise InvariantViolation(f"{len(recs)} instances, at most {N_INSTANCES} allowed", where)

    mask_map = _read_png(path, refs["masks"]).astype(np.int64)
    if mask_map.shape != (h, w):
        raise InvariantViolation(f"instance map is {mask_map.shape[::-1]}, image is {(w, h)}",
                                 str(path / refs["masks"]))
    desc = _f32_rows(_read(path, refs["object_descriptors"]), DESCRIPTOR_DIM,
                     str(path / refs["object_descriptors"]))
    instances = []
    for k, r in enumerate(recs):
        tag = f"{where}: instances[{k}]"
        i = _field(r, "id", int, tag)
        d = None
        if "descriptor_index" in r:
            di = _field(r, "descriptor_index", int, tag)
            if not 0 <= di < len(desc):
                raise InvariantViolation(f"descriptor index {di} out of range", tag)
            d = desc[di].copy()
        mv = _field(r, "mask_value", int, tag)
        instances.append(Instance(
            id=i, category=_field(r, "category", int, tag), mask=mask_map == mv, descriptor=d,
            answers=list(r["answers"]) if "answers" in r else None,
            support_candidates=list(r["support_candidates"]) if "support_candidates" in r else None,
            orientation_candidates=[float(y) for y in r["orientation_candidates"]]
            if "orientation_candidates" in r else None,
            bottom_occluded=bool(r.get("bottom_occluded", False))))

    edge = _read_png(path, refs["edge_map"])
    label = _read_png(path, refs["label_map"]) if "label_map" in refs else None
    for name, img in (("edge_map", edge), ("label_map", label)):
        if img is not None and img.shape != (h, w):
            raise InvariantViolation(f"{name} is {img.shape[::-1]}, image is {(w, h)}",
                                     str(path / refs[name]))
    raw_lines = _read_json(path, refs["lines"])
    try:
        lines = np.array(raw_lines, dtype=float).reshape(-1, 4)
    except (ValueError, TypeError):
        raise SchemaViolation("lines must be a list of [x0, y0, x1, y1]", str(path / refs["lines"])) from None

    mwhere = str(path / refs["models"])
    views = _f32_rows(_read(path, refs["model_descriptors"]), DESCRIPTOR_DIM,
                      str(path / refs["model_descriptors"]))
    models = []
    for r in _read_json(path, refs["models"]):
        off = _field(r, "descriptor_offset", int, mwhere)
        if off < 0 or off + N_VIEWS > len(views):
            raise InvariantViolation(f"descriptor offset {off} out of range", mwhere)
        mp = _field(r, "mesh", str, mwhere)
        mesh = obj_to_mesh(_read(path, mp, binary=False), str(path / mp))
        models.append(ModelEntry(_field(r, "model_id", str, mwhere), _field(r, "category", int, mwhere),
                                 mesh, views[off:off + N_VIEWS].copy()))

    pj = _read_json(path, refs["priors"])
    pwhere = str(path / refs["priors"])
    try:
        priors = PriorTables(_field(pj, "support_count", list, pwhere), _field(pj, "height_mu", list, pwhere),
                             _field(pj, "height_sigma", list, pwhere))
    except ValueError as e:
        raise SchemaViolation(str(e), pwhere) from None
    bundle = SceneBundle(w, h, instances, edge.astype(np.uint8), lines, models, priors,
                         None if label is None else label.astype(np.uint8), man.get("meta", {}))
    bundle.validate(str(path))
    return bundle


# ---------------------------------------------------------------- results


@dataclass
class SceneResult:
    camera: CameraModel
    layout: RoomLayout
    graph: SupportGraph
    heights: object
    objects: dict
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    seed: int = 0


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


def result_dict(res: SceneResult):
    """JSON-ready view of a result; timings are kept out so reruns compare equal.
    Parts a partial run did not reach are omitted."""
    out = {"seed": res.seed, "metrics": res.metrics}
    cam, lay = res.camera, res.layout
    if cam is not None:
        out["camera"] = {"f": cam.f, "c": cam.c, "R": cam.R, "h_cam": cam.h_cam}
    if lay is not None:
        out["layout"] = {"corner": lay.corner, "sizes": lay.sizes, "residual": lay.residual,
                         "camera_height": lay.camera_height, "flags": lay.flags}
    if res.graph is not None and res.graph.edges:
        out["support"] = [{"id": i, "parent": p, "type": t, "prior": res.graph.prior.get(i, 0.0)}
                          for i, (p, t) in sorted(res.graph.edges.items())]
        out["repaired"] = res.graph.repaired
    heights = getattr(res.heights, "objects", res.heights) or {}
    if heights:
        out["heights"] = [{"id": i, "H": o.H, "A": o.A, "clamped": o.clamped, "flags": o.flags}
                          for i, o in sorted(heights.items())]
    if res.objects:
        out["objects"] = [{"id": i, "model_id": o.model_id, "category": o.category, "yaw": o.yaw,
                           "scale": o.scale, "base_scale": o.base_scale, "position": o.position,
                           "flags": o.flags} for i, o in sorted(res.objects.items())]
    return _plain(out)


def save_result(res: SceneResult, path):
    path = Path(path)
    _atomic_write(path / "result.json", _json_bytes(result_dict(res)))
    _atomic_write(path / "timings.json", _json_bytes(_plain(res.timings)))
    return path / "result.json"


def load_result(path, bundle: SceneBundle | None = None) -> SceneResult:
    """Rebuild a result from result.json. Object meshes come from the bundle's
    models when given, else from the built-in library."""
    from . import catalog
    from .metrology import HeightSolution, ObjectHeight
    from .placement import PlacedObject
    path = Path(path)
    if not path.is_file():
        raise MissingFile("file not found", str(path))
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaViolation(f"invalid JSON: {e}", str(path)) from None
    cam = lay = None
    if "camera" in d:
        c = d["camera"]
        cam = CameraModel(c["f"], np.array(c["c"]), np.array(c["R"]), c["h_cam"])
    if "layout" in d:
        l = d["layout"]
        lay = RoomLayout(np.array(l["corner"]), np.array(l["sizes"]), camera_height=l.get("camera_height"),
                         residual=l.get("residual", 0.0), flags=l.get("flags", {}))
    g = SupportGraph({e["id"]: (e["parent"], e["type"]) for e in d.get("support", [])},
                     {e["id"]: e["prior"] for e in d.get("support", [])}, list(d.get("repaired", [])))
    hs = HeightSolution({h["id"]: ObjectHeight(h["H"], h["A"], h["clamped"], h["flags"])
                         for h in d.get("heights", [])})
    meshes = {m.model_id: m.mesh for m in bundle.models} if bundle is not None else {}
    objs = {}
    for o in d.get("objects", []):
        mid = o["model_id"]
        mesh = meshes.get(mid) or catalog.LIBRARY[mid][1]
        objs[o["id"]] = PlacedObject(o["id"], mid, o["yaw"], np.array(o["scale"]), np.array(o["position"]),
                                     mesh, o["base_scale"], o["category"], o["flags"])
    return SceneResult(cam, lay, g, hs, objs, d.get("metrics", {}), {}, d.get("seed", 0))


def export_obj(res: SceneResult, path):
    """Room shell (floor and four walls) plus every placed object, one group
    per instance, objects in increasing id order."""
    lay = res.layout
    C = box_corners(lay.lo, lay.hi)
    lines = ["g room"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in C.tolist()]
    # floor and the four walls, facing into the room
    for f in ((0, 1, 2, 3), (1, 5, 6, 2), (2, 6, 7, 3), (3, 7, 4, 0), (0, 4, 5, 1)):
        lines.append("f " + " ".join(str(k + 1) for k in f))
    base = len(C)
    for i, obj in sorted(res.objects.items()):
        V = obj.world_vertices()
        lines.append(f"g obj_{i}")
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in V.tolist()]
        lines += [f"f {a + base + 1} {b + base + 1} {c + base + 1}" for a, b, c in obj.mesh.triangles.tolist()]
        base += len(V)
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
    return Path(path)
