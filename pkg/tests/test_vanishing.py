import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roomscene.errors import CalibrationFailed, DegenerateCluster, NoFocalSolution
from roomscene.geom import line_through
from roomscene.pipeline import bundle_lines
from roomscene.synth import Noise, make_scene
from roomscene.vanishing import (VpCluster, camera_from_vps, camera_vps, cluster_lines, joint_calibrate,
                                 line_constraint_matrix, refit_vp, vp_angle_error)

from .conftest import harness_scene, look_camera

DIMS = (640, 480)


def concurrent_lines(vp, n, rng, sigma=0.0):
    out = []
    for _ in range(n):
        a = rng.uniform([0, 0], DIMS)
        d = vp - a
        b = a + d * rng.uniform(0.1, 0.4)
        out.append(line_through(a + rng.normal(0, sigma, 2), b + rng.normal(0, sigma, 2)))
    return out


def eps2(cluster, vp):
    v = np.asarray(vp, float) / np.linalg.norm(vp)
    r = line_constraint_matrix(cluster.members) @ v
    return float(r @ r)


def pairwise_median(lines):
    """Independent oracle: coordinate-wise median of all pairwise segment
    intersections, each solved as a 2x2 system from the endpoints."""
    pts = []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            p, r = lines[i].p0, lines[i].q0 - lines[i].p0
            q, s = lines[j].p0, lines[j].q0 - lines[j].p0
            A = np.column_stack([r, -s])
            if abs(np.linalg.det(A)) < 1e-9:
                continue
            t = np.linalg.solve(A, q - p)
            pts.append(p + t[0] * r)
    return np.median(np.array(pts), axis=0)


def test_cluster_concurrent():
    rng = np.random.default_rng(0)
    vp = np.array([900.0, 200.0])
    lines = concurrent_lines(vp, 20, rng)
    cl, out = cluster_lines(lines, [np.append(vp, 1), np.array([-500, 220, 1.0]), np.array([320, 5000, 1.0])], 5)
    assert cl[0].N == 20 and cl[1].N == 0 and cl[2].N == 0 and not out


def test_cluster_outlier():
    vps = [np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), np.array([1.0, 1, 0])]
    diag = line_through((0, 0), (10, -10))
    cl, out = cluster_lines([diag], vps, 4)
    assert out == [diag] and all(c.N == 0 for c in cl)


def test_cluster_harness_labels():
    truth, bundle = harness_scene(0, 8)
    cam = truth.camera
    vps = [cam.vanishing_point(i) for i in range(3)]
    cl, out = cluster_lines(bundle_lines(bundle), vps, 1.0)
    for k, c in enumerate(cl):
        for l in c.members:
            ang = [np.degrees(np.arccos(min(1.0, abs(l.direction @ _to_vp(l, v))))) for v in vps]
            assert int(np.argmin(ang)) == k


def _to_vp(l, v):
    d = v[:2] / v[2] - l.midpoint if abs(v[2]) > 1e-9 else v[:2]
    return d / np.linalg.norm(d)


def test_refit_two_lines():
    lines = [line_through((0, 0), (50, 100)), line_through((200, 0), (150, 100))]
    vp = refit_vp(VpCluster(np.array([0, 0, 1.0]), lines))
    assert np.allclose(vp[:2] / vp[2], [100, 200])


def test_refit_noiseless_residual_zero():
    rng = np.random.default_rng(1)
    lines = concurrent_lines(np.array([1000.0, -300.0]), 50, rng)
    cl = VpCluster(np.array([0, 0, 1.0]), lines)
    vp = refit_vp(cl)
    assert eps2(cl, vp) < 1e-9
    assert np.allclose(vp[:2] / vp[2], [1000, -300], atol=1e-6)


def test_refit_noisy_matches_pairwise_oracle():
    rng = np.random.default_rng(2)
    truth = np.array([800.0, 150.0])
    lines = concurrent_lines(truth, 50, rng, 0.5)
    vp = refit_vp(VpCluster(np.append(truth, 1), lines))
    got = vp[:2] / vp[2]
    assert np.linalg.norm(got - pairwise_median(lines)) < 2.0
    assert np.linalg.norm(got - truth) < 2.0


def test_refit_coincident_degenerate():
    lines = [line_through((x, 10), (x + 100, 10)) for x in (0, 50, 300)]
    with pytest.raises(DegenerateCluster):
        refit_vp(VpCluster(np.array([1.0, 0, 0]), lines))


def test_refit_parallel_gives_point_at_infinity():
    lines = [line_through((0, y), (100, y + 1)) for y in (10, 20, 30)]
    vp = refit_vp(VpCluster(np.array([1.0, 0, 0]), lines))
    assert abs(vp[2]) < 1e-12 and np.allclose(np.abs(vp[:2]) / np.linalg.norm(vp[:2]), np.array([100, 1]) / np.hypot(100, 1))


@given(st.integers(0, 10 ** 6), st.floats(0.0, 3.0))
def test_refit_never_increases_residual(seed, sigma):
    rng = np.random.default_rng(seed)
    vp0 = rng.uniform([-2000, -2000], [2000, 2000])
    lines = concurrent_lines(vp0, 6, rng, sigma)
    guess = np.append(vp0 + rng.normal(0, 20, 2), 1.0)
    cl = VpCluster(guess, lines)
    assert eps2(cl, refit_vp(cl)) <= eps2(cl, guess) + 1e-12


def test_camera_from_vps_round_trip():
    cam = look_camera(f=520.0)
    got = camera_from_vps([cam.vanishing_point(i) for i in range(3)], DIMS)
    assert abs(got.f / 520.0 - 1) < 1e-6
    assert np.linalg.norm(got.R - cam.R) < 1e-6


def test_camera_from_vps_axis_aligned():
    cam = look_camera(f=480.0, psi=0.0, pitch=np.radians(10))
    vps = [cam.vanishing_point(i) for i in range(3)]
    assert abs(vps[0][2]) < 1e-9
    got = camera_from_vps(vps, DIMS)
    assert abs(got.f / 480.0 - 1) < 1e-6
    assert np.allclose(got.R @ got.R.T, np.eye(3), atol=1e-9) and np.isclose(np.linalg.det(got.R), 1)


def test_camera_from_vps_no_focal():
    c = np.array([319.5, 239.5])
    vps = [np.append(c + [100, 50], 1), np.append(c + [200, 10], 1), np.array([1.0, 0, 0])]
    with pytest.raises(NoFocalSolution):
        camera_from_vps(vps, DIMS)


@given(st.floats(0.1, 1.4), st.floats(0.02, 0.3), st.floats(300, 900))
def test_recovered_rotation_proper(psi, pitch, f):
    cam = look_camera(f=f, psi=psi, pitch=pitch)
    R = camera_from_vps([cam.vanishing_point(i) for i in range(3)], DIMS).R
    assert np.abs(R @ R.T - np.eye(3)).max() < 1e-9 and abs(np.linalg.det(R) - 1) < 1e-9


def test_joint_calibrate_noiseless():
    truth, bundle = harness_scene(0, 8)
    res = joint_calibrate(bundle_lines(bundle), DIMS)
    assert vp_angle_error(res.camera, truth.camera) < 0.05
    assert abs(res.camera.f / truth.camera.f - 1) < 0.005
    D = res.camera.K_inv @ np.column_stack(res.vps)
    D /= np.linalg.norm(D, axis=0)
    assert np.abs(D.T @ D - np.eye(3)).max() < 1e-6


def test_joint_calibrate_fixed_point():
    truth, bundle = harness_scene(0, 8)
    lines = bundle_lines(bundle)
    first = joint_calibrate(lines, DIMS)
    again = joint_calibrate(lines, DIMS, init=first.vps)
    assert again.iterations == 1
    assert np.allclose(again.camera.R, first.camera.R, atol=1e-9)
    assert again.camera.f == pytest.approx(first.camera.f, rel=1e-9)


def test_joint_calibrate_clutter():
    truth, bundle = make_scene(3, 8, Noise(line_sigma=0.0, clutter=0.2))
    res = joint_calibrate(bundle_lines(bundle), DIMS)
    assert vp_angle_error(res.camera, truth.camera) < 1.0


def test_joint_calibrate_deterministic():
    _, bundle = harness_scene(0, 8)
    a = joint_calibrate(bundle_lines(bundle), DIMS)
    b = joint_calibrate(bundle_lines(bundle), DIMS)
    assert np.array_equal(a.camera.R, b.camera.R) and a.camera.f == b.camera.f


def test_joint_calibrate_too_few_lines():
    with pytest.raises(CalibrationFailed):
        joint_calibrate([line_through((0, 0), (1, 1))] * 3, DIMS)


def test_camera_vps_orthogonal():
    cam = look_camera()
    D = cam.K_inv @ np.column_stack(camera_vps(cam))
    D /= np.linalg.norm(D, axis=0)
    assert np.allclose(D.T @ D, np.eye(3), atol=1e-12)
