"""End-to-end acceptance criteria, one test per criterion. Each prints a
single PASS/FAIL line with the measured numbers."""
import json
import time

import numpy as np
import pytest

from roomscene import layout as lay
from roomscene import metrology as mt
from roomscene import placement as pl
from roomscene import support as sp
from roomscene.errors import PlacementRejection, StageError
from roomscene.geom import line_through
from roomscene.pipeline import Config, bundle_lines, run_pipeline
from roomscene.retrieval import ViewDescriptorSet, similarity, top_k
from roomscene.scene_io import result_dict
from roomscene.synth import Noise, evaluate, make_scene, pooled_map
from roomscene.vanishing import VpCluster, joint_calibrate, refit_vp, vp_angle_error

from .cases import DIMS, loose_priors, metrology_case
from .conftest import harness_scene, harness_scenes
from .test_layout import agrees_with_truth
from .test_retrieval import oracle_ranking, random_library
from .test_support import brute_force, random_priors
from .test_vanishing import pairwise_median

NOISY = Noise(line_sigma=1.0, clutter=0.2)


def report(capsys, n, ok, text):
    with capsys.disabled():
        print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {text}")
    assert ok, text


@pytest.fixture(scope="module")
def room_stats():
    """Calibration and layout numbers on 100 noiseless and 100 noisy scenes.
    Scenes are generated on the fly and dropped, only numbers are kept."""
    out = {"vp": [], "f": [], "t": [], "vp_noisy": [], "first": [], "iou": [], "iou_noisy": []}
    s = 0
    while len(out["vp"]) < 100:
        n = 8 + s % 9
        try:
            truth, bundle = make_scene(s, n)
        except PlacementRejection:
            s += 1
            continue
        t0 = time.perf_counter()
        cal = joint_calibrate(bundle_lines(bundle), DIMS)
        out["t"].append(time.perf_counter() - t0)
        out["vp"].append(vp_angle_error(cal.camera, truth.camera))
        out["f"].append(abs(cal.camera.f / truth.camera.f - 1))
        em = lay.EdgeMap(np.asarray(bundle.edge_map, float) / 255.0)
        props = lay.generate_proposals(cal.clusters, em, cal.camera)
        out["first"].append(agrees_with_truth(props[0], cal.camera, bundle.label_map))
        room = lay.fit_cuboid(props[0], cal.camera)
        out["iou"].append(lay.box_iou_aligned(room.lo, room.hi, truth.layout.lo, truth.layout.hi))

        truth, bundle = make_scene(s, n, NOISY)
        t0 = time.perf_counter()
        cal = joint_calibrate(bundle_lines(bundle), DIMS)
        out["t"].append(time.perf_counter() - t0)
        out["vp_noisy"].append(vp_angle_error(cal.camera, truth.camera))
        try:
            res = run_pipeline(bundle, Config(stop_after="layout"))
            iou = lay.box_iou_aligned(res.layout.lo, res.layout.hi, truth.layout.lo, truth.layout.hi)
        except StageError:
            iou = 0.0   # a scene without a layout counts as a total miss
        out["iou_noisy"].append(iou)
        s += 1
    return {k: np.array(v) for k, v in out.items()}


def test_criterion_1_calibration(room_stats, capsys):
    r = room_stats
    ok_clean = np.all(r["vp"] < 0.05) and np.all(r["f"] < 0.005)
    n_noisy = int(np.sum(r["vp_noisy"] < 1.5))
    ok = ok_clean and n_noisy >= 95 and r["t"].max() < 1.0
    report(capsys, 1, ok,
           f"noiseless max VP err {r['vp'].max():.2e} deg, max focal err {100 * r['f'].max():.3f}%; "
           f"noisy VP err < 1.5 deg on {n_noisy}/100; slowest calibration {r['t'].max():.3f} s")


def _spread_cluster(rng):
    """Concurrent segments arriving at a VP inside the image from all sides."""
    vp = rng.uniform([0, 0], DIMS)
    lines = []
    for _ in range(int(rng.integers(20, 51))):
        th, r = rng.uniform(0, 2 * np.pi), rng.uniform(100, 400)
        a = vp + r * np.array([np.cos(th), np.sin(th)])
        b = a + (vp - a) * rng.uniform(0.3, 0.6)
        sigma = rng.uniform(0.25, 1.0)
        lines.append(line_through(a + rng.normal(0, sigma, 2), b + rng.normal(0, sigma, 2)))
    return vp, lines


def test_criterion_2_refit_oracle(capsys):
    err = []
    for k in range(1000):
        vp, lines = _spread_cluster(np.random.default_rng(k))
        v = refit_vp(VpCluster(np.append(vp, 1.0), lines))
        err.append(np.linalg.norm(v[:2] / v[2] - pairwise_median(lines)))
    err = np.array(err)
    report(capsys, 2, err.max() < 2.0,
           f"refit vs all-pairs median on 1000 clusters: median {np.median(err):.3f} px, max {err.max():.3f} px")


def test_criterion_3_layout(room_stats, capsys):
    r = room_stats
    first = int(r["first"].sum())
    ok = first >= 98 and r["iou_noisy"].mean() >= 0.9 and r["iou"].mean() >= 0.95
    report(capsys, 3, ok,
           f"truth proposal first on {first}/100; cuboid IoU noiseless mean {r['iou'].mean():.4f} "
           f"(min {r['iou'].min():.4f}), noisy mean {r['iou_noisy'].mean():.4f} "
           f"({int(np.sum(r['iou_noisy'] == 0))} noisy scenes without a layout)")


def test_criterion_4_metrology(capsys):
    worst, sub_worst, clean_clamps, outliers, fired = 0.0, 0.0, 0, 0, 0
    for k in range(1000):
        rng = np.random.default_rng(k)
        case = metrology_case(rng)
        cam, room, graph, lines, H, A, cats = case
        priors = loose_priors(H, cats)
        sol = mt.solve_heights(graph, lines, cam, room, priors, cats, DIMS)
        for i in H:
            worst = max(worst, abs(sol[i].H / H[i] - 1), abs(sol[i].A / A[i] - 1))
            clean_clamps += bool(sol[i].clamped)
        # the lamp's bottom hidden: its line stops partway down
        hidden = dict(lines)
        hl = lines[1]
        hidden[1] = mt.HeightLine(hl.top, hl.top + rng.uniform(0.2, 0.8) * (hl.bottom - hl.top), 1)
        occ = mt.solve_heights(graph, hidden, cam, room, priors, cats, DIMS, [1])
        assert occ[1].flags.get("bottom_substituted")
        sub_worst = max(sub_worst, abs(occ[1].H / H[1] - 1), abs(occ[1].A / A[1] - 1))
        # one object's prior moved so the true height sits well outside 3 sigma
        i = int(rng.integers(3))
        bad = loose_priors(H, cats)
        sigma = 0.01
        bad.height_sigma[cats[i]] = sigma
        bad.height_mu[cats[i]] = H[i] / 3.0 + rng.choice([-1, 1]) * rng.uniform(3.5, 10) * sigma
        out = mt.solve_heights(graph, lines, cam, room, bad, cats, DIMS)
        outliers += 1
        fired += bool(out[i].clamped and out[i].H == pytest.approx(bad.height_mu[cats[i]] * 3.0))
    ok = worst < 1e-6 and sub_worst < 1e-6 and clean_clamps == 0 and fired == outliers
    report(capsys, 4, ok,
           f"max rel error {worst:.1e} (occluded path {sub_worst:.1e}); clamp on clean data {clean_clamps}, "
           f"on outliers {fired}/{outliers}")


def test_criterion_5_support(capsys):
    n_q = 0
    for i in range(sp.N_INSTANCES):
        for c in range(sp.N_CATEGORIES):
            for q in range(sp.N_QUESTIONS):
                for g in range(sp.N_GROUPS):
                    code = sp.encode_question(i, c, q, g)
                    assert sp.decode_question(code.vector) == code
                    n_q += 1
    n_a = sum(sp.encode_answer(*sp.decode_answer(a)) == a for a in range(sp.N_ANSWERS))
    agree = 0
    for k in range(1000):
        rng = np.random.default_rng(k)
        priors = random_priors(rng)
        n = int(rng.integers(2, 8))
        cats = {i: int(rng.integers(0, 40)) for i in range(n)}
        nbrs = {0: {int(j) for j in rng.choice(np.arange(1, n), int(rng.integers(0, n)), replace=False)}
                | set(rng.choice(list(lay.LAYOUT_IDS), 2, replace=False).tolist())}
        cands = [int(c) for c in rng.choice(40, 5, replace=False)]
        stype = [None, sp.BELOW, sp.BEHIND][k % 3]
        got = sp.resolve_support(0, cands, stype, priors, nbrs, cats)[:2]
        agree += got == brute_force(0, cands, stype, priors.support_count, nbrs, cats)
    ok_edges = total = 0
    for _, truth, bundle in harness_scenes(20):
        for ins in bundle.instances:
            o = truth.object(ins.id)
            assert sp.category_of(o.parent, {x.id: x.category for x in truth.objects}) in ins.support_candidates
        g = run_pipeline(bundle, Config(stop_after="support")).graph
        for o in truth.objects:
            ok_edges += g.edges[o.id] == (o.parent, o.stype)
            total += 1
    acc = ok_edges / total
    ok = n_q == 19200 and n_a == 104 and agree == 1000 and acc >= 0.95
    report(capsys, 5, ok,
           f"{n_q} question codes and {n_a} answers round-trip; brute force agrees on {agree}/1000; "
           f"harness support accuracy {acc:.4f} over {total} objects")


def test_criterion_6_retrieval(capsys):
    agree, worst = 0, 0.0
    for k in range(100):
        rng = np.random.default_rng(k)
        lib = random_library(rng, 200)
        f = rng.standard_normal(2048)
        full = oracle_ranking(f, lib)
        agree += top_k(f, lib, k=len(lib)) == full and top_k(f, lib) == full[:5]
        m = lib[int(rng.integers(200))]
        a, b = 10.0 ** rng.uniform(-6, 6, 2)
        worst = max(worst, abs(similarity(a * f, ViewDescriptorSet("s", b * m.views)) - similarity(f, m)))
    report(capsys, 6, agree == 100 and worst <= 1e-12,
           f"top_k equals the exhaustive ranking on {agree}/100 libraries; scale invariance error {worst:.1e}")


def _constraint_holds(obj, placed, room):
    if obj.flags.get("infeasible_start"):
        return False
    pid, stype = obj.flags["support"]
    if stype == sp.BEHIND or pid in lay.WALL_IDS:
        if pid in lay.WALL_IDS:
            frame = pl.wall_frame(room, pid)
        else:
            frame = pl.side_frames(placed[pid])[obj.flags["surface_k"] - 1]
        return pl.check_behind(obj, frame)
    return pl.check_below(obj, placed.get(pid, room))


def test_criterion_7_placement(capsys):
    pairs, iou2d, iou3d, monotone, holds, has_truth, total = [], [], [], True, 0, 0, 0
    traces = []
    for _, truth, bundle in harness_scenes(50):
        res = run_pipeline(bundle)
        m = evaluate(res, truth)
        pairs.append((res, truth))
        for o in truth.objects:
            p = res.objects[o.id]
            tr = np.array(res.metrics["trace"][o.id])
            monotone &= bool(np.all(np.diff(tr) >= 0)) and len(tr) == pl.ITERS + 1
            traces.append(tr)
            holds += _constraint_holds(p, res.objects, res.layout)
            has_truth += o.model_id in res.metrics["candidates"][o.id]
            iou2d.append(p.flags["iou"])
            iou3d.append(m["object_iou"][o.id])
            total += 1
    mean_trace = np.mean(traces, axis=0)
    mAP = pooled_map(pairs)
    ok = (monotone and holds == total and has_truth == total and np.mean(iou2d) >= 0.8
          and np.mean(iou3d) >= 0.5 and mAP >= 0.9)
    report(capsys, 7, ok,
           f"{total} objects in 50 scenes: traces monotone {monotone}, constraints hold {holds}/{total}, "
           f"truth model retrieved {has_truth}/{total}; 2D IoU {np.mean(iou2d):.4f}, 3D IoU {np.mean(iou3d):.4f}, "
           f"mAP@0.15 {mAP:.4f}; mean trace at 0/10/20/30: "
           f"{mean_trace[0]:.3f}/{mean_trace[10]:.3f}/{mean_trace[20]:.3f}/{mean_trace[30]:.3f}")


def test_criterion_8_pipeline(capsys):
    truth, bundle = harness_scene(0, 16)
    t0 = time.perf_counter()
    a = run_pipeline(bundle)
    elapsed = time.perf_counter() - t0
    b = run_pipeline(bundle)
    same = json.dumps(result_dict(a), sort_keys=True) == json.dumps(result_dict(b), sort_keys=True)
    same &= all(np.array_equal(a.objects[i].world_vertices(), b.objects[i].world_vertices()) for i in a.objects)
    report(capsys, 8, len(a.objects) == 16 and elapsed < 120 and same,
           f"16-object scene in {elapsed:.1f} s; rerun bit-identical {same}")
