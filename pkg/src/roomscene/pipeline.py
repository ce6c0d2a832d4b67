"""End-to-end run over a scene bundle:
calibrate -> layout -> support -> heights -> retrieval -> init -> refine.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import layout as lay
from .errors import RoomSceneError, StageError
from .geom import line_through
from .metrology import HeightSolution, extract_height_line, solve_heights
from .placement import (ITERS, N_ORIENTATIONS, PlacedObject, default_orientations, init_position,
                        refine_scene)
from .retrieval import TOP_K, ViewDescriptorSet, top_k
from .scene_io import SceneBundle, SceneResult
from .support import BEHIND, SupportGraph, infer_support, wall_affinity
from .vanishing import DEFAULT_ANGLE_THRESH, joint_calibrate

STAGES = ("calibrate", "layout", "support", "heights", "retrieve", "init", "refine")


@dataclass
class Config:
    iters: int = ITERS
    top_models: int = TOP_K
    orientations: int = N_ORIENTATIONS
    seed: int = 0
    room_height: float = lay.ROOM_HEIGHT
    near_offset: float = lay.NEAR_OFFSET
    angle_thresh: float = DEFAULT_ANGLE_THRESH
    dilation: int = 5
    occlusion_aware: bool = True
    method: str = "quadratic"
    stop_after: str | None = None


def bundle_lines(bundle: SceneBundle):
    out = []
    for x0, y0, x1, y1 in np.asarray(bundle.lines, dtype=float):
        if np.hypot(x1 - x0, y1 - y0) > 1e-9:
            out.append(line_through((x0, y0), (x1, y1)))
    return out


class _Run:
    def __init__(self, bundle, config):
        self.b = bundle
        self.cfg = config
        self.timings = {}
        self.state = {}

    def stage(self, name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except RoomSceneError as e:
            raise StageError(name, e) from e
        self.timings[name] = time.perf_counter() - t0
        self.state[name] = out
        return out


def _calibrate(b, cfg):
    return joint_calibrate(bundle_lines(b), b.dims, angle_thresh=cfg.angle_thresh)


def _layout(b, cfg, cal):
    em = lay.EdgeMap(np.asarray(b.edge_map, dtype=float) / 255.0)
    props = lay.generate_proposals(cal.clusters, em, cal.camera, cfg.room_height, cfg.near_offset)
    room = lay.fit_cuboid(props[0], cal.camera, cfg.room_height, cfg.near_offset)
    return room, cal.camera.with_height(room.camera_height), props


def _support(b, cfg, cam, room):
    labels = b.label_map if b.label_map is not None else lay.label_map(cam, room, b.dims)
    aff = {ins.id: wall_affinity(ins.mask, labels) for ins in b.instances}
    return infer_support(b.instances, b.priors, cfg.dilation, aff)


def _heights(b, cam, room, graph):
    vp = cam.vanishing_point(2)
    lines = {ins.id: extract_height_line(ins.mask, vp, ins.id) for ins in b.instances}
    cats = {ins.id: ins.category for ins in b.instances}
    occ = [ins.id for ins in b.instances if ins.bottom_occluded]
    return solve_heights(graph, lines, cam, room, b.priors, cats, b.dims, occ), lines


def _retrieve(b, cfg):
    """Per instance, up to ``top_models`` (model id, mesh) pairs. The search
    is restricted to models of the instance's category when there are any."""
    out = {}
    for ins in b.instances:
        pool = [m for m in b.models if m.category == ins.category] or list(b.models)
        if ins.descriptor is not None:
            lib = [ViewDescriptorSet(m.model_id, m.views) for m in pool]
            ids = top_k(ins.descriptor, lib, cfg.top_models)
        else:
            ids = sorted(m.model_id for m in pool)[:cfg.top_models]
        by_id = {m.model_id: m for m in pool}
        out[ins.id] = [(i, by_id[i].mesh) for i in ids]
    return out


def _orientations(b, cfg):
    out = {}
    for ins in b.instances:
        if ins.orientation_candidates:
            out[ins.id] = list(ins.orientation_candidates)[:3]
        else:
            out[ins.id] = default_orientations(cfg.orientations)
    return out


def _init(b, cam, room, graph, heights, cands, orients):
    init = {}
    for ins in b.instances:
        mid, mesh = cands[ins.id][0]
        h = heights[ins.id]
        lo, hi = mesh.bounds
        radius = 0.25 * h.H * float((hi - lo)[0] + (hi - lo)[1])
        parent, stype = graph.edges[ins.id]
        flags = {"bottom_occluded": True} if ins.bottom_occluded else {}
        wall = parent if (stype == BEHIND and parent in lay.WALL_IDS) else None
        if wall is not None:
            radius = 0.0
        p = init_position(ins.mask, h.H, h.A, cam, room, radius, wall, flags)
        init[ins.id] = PlacedObject(ins.id, mid, float(orients[ins.id][0]), np.ones(3), p, mesh,
                                    float(h.H), ins.category, flags)
    return init


def run_pipeline(bundle: SceneBundle, config: Config | None = None) -> SceneResult:
    """Run every stage; the first fatal error is re-raised as StageError
    tagged with its stage. Per-stage wall-clock seconds land in ``timings``.
    ``config.stop_after`` ends the run early after the named stage; fields of
    the result belonging to later stages stay empty."""
    cfg = config or Config()
    if cfg.stop_after is not None and cfg.stop_after not in STAGES:
        raise ValueError(f"unknown stage {cfg.stop_after!r}")
    b = bundle
    r = _Run(b, cfg)
    stop = cfg.stop_after
    result = SceneResult(None, None, SupportGraph(), HeightSolution(), {}, seed=cfg.seed, timings=r.timings)

    cal = r.stage("calibrate", lambda: _calibrate(b, cfg))
    result.camera = cal.camera
    result.metrics["calibration_residual"] = cal.residual
    result.metrics["vanishing_points"] = [v.tolist() for v in cal.vps]
    if stop == "calibrate":
        return result
    room, cam, props = r.stage("layout", lambda: _layout(b, cfg, cal))
    result.camera, result.layout = cam, room
    result.metrics["layout_score"] = props[0].score
    if stop == "layout":
        return result
    result.graph = r.stage("support", lambda: _support(b, cfg, cam, room))
    if stop == "support":
        return result
    result.heights, _ = r.stage("heights", lambda: _heights(b, cam, room, result.graph))
    if stop == "heights" or not b.instances:
        return result
    cands = r.stage("retrieve", lambda: _retrieve(b, cfg))
    result.metrics["candidates"] = {i: [m for m, _ in c] for i, c in cands.items()}
    if stop == "retrieve":
        return result
    orients = _orientations(b, cfg)
    init = r.stage("init", lambda: _init(b, cam, room, result.graph, result.heights, cands, orients))
    result.objects = init
    if stop == "init":
        return result
    masks = {ins.id: np.asarray(ins.mask, dtype=bool) for ins in b.instances}
    placed, traces, mean = r.stage("refine", lambda: refine_scene(
        init, cands, orients, result.graph, masks, cam, room, b.dims, cfg.iters, cfg.occlusion_aware,
        cfg.method))
    result.objects = placed
    result.metrics["iou"] = {i: o.flags.get("iou", 0.0) for i, o in placed.items()}
    result.metrics["trace"] = {i: t.tolist() for i, t in traces.items()}
    result.metrics["mean_trace"] = mean.tolist()
    return result
