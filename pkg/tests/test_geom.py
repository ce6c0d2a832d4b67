import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roomscene.errors import BehindCamera, DegenerateInput, DimensionMismatch
from roomscene.geom import (CameraModel, box_mesh, line_through, mask_iou, project, project_many,
                            ray_plane, rot_z)

from .conftest import look_camera

coord = st.floats(-2000, 2000, allow_nan=False)


def test_line_through_axes():
    l = line_through((0, 0), (1, 0))
    assert np.allclose(np.abs(l.line), [0, 1, 0]) and l.length == 1
    l = line_through((0, 0), (0, 2))
    assert np.allclose(np.abs(l.line), [1, 0, 0]) and l.length == 2


def test_line_through_oblique():
    l = line_through((1, 1), (3, 5))
    expected = np.array([-0.894427191, 0.447213595, 0.447213595])
    assert np.allclose(l.line * np.sign(l.line[1]), expected, atol=1e-9)
    assert np.isclose(l.length, np.sqrt(20))


def test_line_through_same_point():
    with pytest.raises(DegenerateInput):
        line_through((3, 4), (3, 4))


@given(coord, coord, coord, coord, st.floats(0, 1))
def test_points_on_segment_lie_on_line(x0, y0, x1, y1, t):
    if np.hypot(x1 - x0, y1 - y0) < 1e-3:
        return
    l = line_through((x0, y0), (x1, y1))
    assert np.hypot(l.line[0], l.line[1]) == pytest.approx(1.0)
    p = np.array([x0 + t * (x1 - x0), y0 + t * (y1 - y0), 1.0])
    assert abs(l.line @ p) <= 1e-9 * max(1.0, np.abs(p).max())


def test_project_principal_axis():
    cam = CameraModel(500.0, (320, 240), np.diag([1.0, -1.0, -1.0]) @ np.array([[1, 0, 0], [0, 0, 1], [0, -1, 0.0]]), 1.5)
    assert np.allclose(cam.R @ cam.R.T, np.eye(3))
    fwd = cam.R[2]
    assert np.allclose(project(cam, cam.position + 3 * fwd), cam.c)


def test_project_hand_expanded():
    # R = I: camera x right, y down, z forward coincide with the room axes here
    cam = CameraModel(500.0, (320, 240), np.eye(3), 1.5)
    X = np.array([1.0, 0.0, 1.5 + 1.0])
    x, y, z = X - np.array([0, 0, 1.5])
    assert np.allclose(project(cam, X), [500 * x / z + 320, 500 * y / z + 240])


def test_project_depth_halves_offset(cam):
    X = cam.position + 2 * cam.R[2] + 0.3 * cam.R[0] + 0.2 * cam.R[1]
    X2 = cam.position + 2 * (X - cam.position)
    assert np.allclose(project(cam, X2) - cam.c, project(cam, X) - cam.c)
    X3 = cam.position + 4 * cam.R[2] + 0.3 * cam.R[0] + 0.2 * cam.R[1]
    assert np.allclose(project(cam, X3) - cam.c, 0.5 * (project(cam, X) - cam.c))


def test_project_behind(cam):
    with pytest.raises(BehindCamera):
        project(cam, cam.position - cam.R[2])
    with pytest.raises(BehindCamera):
        project_many(cam, [cam.position - cam.R[2]])


@given(st.floats(-1.5, 1.5), st.floats(-1.0, 1.0), st.floats(0.5, 20.0))
def test_projection_ray_round_trip(a, b, depth):
    cam = look_camera()
    X = cam.position + depth * cam.R[2] + a * depth * cam.R[0] * 0.5 + b * depth * cam.R[1] * 0.5
    d = cam.ray(project(cam, X))
    v = X - cam.position
    resid = np.linalg.norm(v - (v @ d) * d)
    assert resid <= 1e-6 * np.linalg.norm(v)


def test_ray_plane_floor(cam):
    X = np.array([1.0, 3.0, 0.0])
    q = ray_plane(cam, project(cam, X), np.array([0, 0, 1.0]), 0.0)
    assert np.allclose(q, X)
    # a ray above the horizon never reaches the floor
    assert ray_plane(cam, (cam.c[0], -2000.0), np.array([0, 0, 1.0]), 0.0) is None


def test_mask_iou_examples():
    a = np.zeros((20, 30), bool)
    b = np.zeros((20, 30), bool)
    a[0:10, 0:10] = True
    assert mask_iou(a, a) == 1.0
    b[10:20, 20:30] = True
    assert mask_iou(a, b) == 0.0
    b[:] = False
    b[0:10, 5:15] = True
    assert mask_iou(a, b) == pytest.approx(50 / 150)
    assert mask_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0
    with pytest.raises(DimensionMismatch):
        mask_iou(a, np.zeros((3, 3)))


@given(st.integers(0, 2 ** 32 - 1))
def test_mask_iou_symmetric_and_identity(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((12, 9)) < 0.4
    b = rng.random((12, 9)) < 0.4
    assert mask_iou(a, b) == mask_iou(b, a)
    assert (mask_iou(a, b) == 1.0) == (a.any() and np.array_equal(a, b))


def test_box_mesh_and_rotation():
    m = box_mesh((2.0, 1.0, 0.5))
    lo, hi = m.bounds
    assert np.allclose(lo, [-1, -0.5, 0]) and np.allclose(hi, [1, 0.5, 0.5])
    R = rot_z(0.7)
    assert np.allclose(R @ R.T, np.eye(3)) and np.isclose(np.linalg.det(R), 1)
    with pytest.raises(DegenerateInput):
        from roomscene.geom import TriMesh
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
