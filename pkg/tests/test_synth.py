import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roomscene import placement as pl
from roomscene.errors import IdMismatch
from roomscene.geom import box_mesh
from roomscene.pipeline import run_pipeline
from roomscene.scene_io import bundle_files
from roomscene.synth import Noise, box_iou_3d, evaluate, make_scene, render_objects

from .conftest import harness_scene


def cube(pos, size=(1, 1, 1), yaw=0.0):
    return pl.PlacedObject(0, "c", yaw, np.ones(3), np.array(pos, float), box_mesh(size), 1.0)


def test_same_seed_same_bytes():
    _, a = make_scene(11, 6, Noise(1.0, 0.2, 1))
    _, b = make_scene(11, 6, Noise(1.0, 0.2, 1))
    assert bundle_files(a) == bundle_files(b)


def test_empty_room_gives_layout_only_result():
    truth, bundle = make_scene(2, 0)
    assert not truth.objects and not bundle.instances
    res = run_pipeline(bundle)
    assert res.layout is not None and not res.objects
    assert evaluate(res, truth)["layout_iou"] > 0.9


def test_truth_as_result_is_perfect():
    truth, _ = harness_scene(1, 10)
    m = evaluate(truth.as_result(), truth)
    assert m["layout_iou"] == pytest.approx(1.0, abs=1e-12)
    assert m["support_accuracy"] == 1.0 and m["height_rel_error"] == 0.0
    assert m["map"] == 1.0 and m["vp_error_deg"] == pytest.approx(0.0, abs=1e-6)
    assert all(v == pytest.approx(1.0) for v in m["object_iou"].values())


def test_half_width_shift_cube():
    assert box_iou_3d(cube([0, 0, 0]), cube([0.5, 0, 0])) == pytest.approx(1 / 3, abs=1e-12)


@given(st.lists(st.floats(0.1, 2.0), min_size=6, max_size=6), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.integers(0, 3))
def test_box_iou_matches_closed_form(sizes, shift, quarter):
    a, b = np.array(sizes[:3]), np.array(sizes[3:])
    # a quarter turn swaps the footprint extents
    eb = b[[1, 0, 2]] if quarter % 2 else b
    A = cube([0, 0, 0], a)
    B = cube(shift, b, yaw=quarter * np.pi / 2)
    lo_a, hi_a = np.array([-a[0] / 2, -a[1] / 2, 0]), np.array([a[0] / 2, a[1] / 2, a[2]])
    lo_b = np.array([shift[0] - eb[0] / 2, shift[1] - eb[1] / 2, shift[2]])
    hi_b = lo_b + eb
    inter = np.prod(np.clip(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0, None))
    want = inter / (np.prod(a) + np.prod(b) - inter)
    assert box_iou_3d(A, B) == pytest.approx(want, abs=1e-9)


def test_one_wrong_edge_in_ten():
    truth, _ = harness_scene(1, 10)
    assert len(truth.objects) == 10
    res = truth.as_result()
    i = truth.objects[3].id
    p, t = res.graph.edges[i]
    res.graph.edges[i] = (p, 1 - t)
    assert evaluate(res, truth)["support_accuracy"] == pytest.approx(0.9)


def test_id_mismatch():
    truth, _ = harness_scene(1, 10)
    res = truth.as_result()
    res.objects.pop(truth.objects[0].id)
    with pytest.raises(IdMismatch):
        evaluate(res, truth)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rasterizers_agree(seed):
    truth, _ = harness_scene(seed, 12)
    render = render_objects(truth.camera, truth.objects, truth.dims)
    for o in truth.objects:
        a = render.full[o.id].sum()
        b = pl.rasterize_silhouette(None, o.pose(), truth.camera, truth.dims).sum()
        assert abs(a - b) <= 0.01 * max(a, b), (o.id, a, b)


def test_truth_supports_are_physical():
    for seed in range(4):
        truth, _ = harness_scene(seed, 16)
        poses = {o.id: o.pose() for o in truth.objects}
        for o in truth.objects:
            if o.parent < 60:
                parent = poses[o.parent]
                if o.stype == 0:
                    assert pl.check_below(poses[o.id], parent, 1e-6)
            else:
                assert np.all(poses[o.id].world_vertices() >= truth.layout.lo - 1e-6)
                assert np.all(poses[o.id].world_vertices() <= truth.layout.hi + 1e-6)
