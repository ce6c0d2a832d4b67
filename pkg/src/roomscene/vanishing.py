"""Manhattan vanishing points and camera calibration from line segments."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import CalibrationFailed, DegenerateCluster, NoFocalSolution
from .geom import CameraModel, LineSeg2, is_finite_point

DEFAULT_ANGLE_THRESH = 4.0
N_SEED_LINES = 40
N_SEED_CANDIDATES = 25


@dataclass
class VpCluster:
    vp: np.ndarray
    members: list = field(default_factory=list)

    @property
    def N(self):
        return len(self.members)


@dataclass
class CalibrationResult:
    vps: list
    camera: CameraModel
    residual: float
    iterations: int
    clusters: list
    outliers: list


def _line_arrays(lines):
    mids = np.array([l.midpoint for l in lines]).reshape(-1, 2)
    dirs = np.array([l.direction for l in lines]).reshape(-1, 2)
    lens = np.array([l.length for l in lines], dtype=float)
    return mids, dirs, lens


def _angles_to_vp(mids, dirs, vp):
    """Angle in degrees between each segment and its midpoint->vp direction."""
    vp = np.asarray(vp, dtype=float)
    if is_finite_point(vp):
        to_vp = vp[:2] / vp[2] - mids
    else:
        to_vp = np.broadcast_to(vp[:2], mids.shape)
    n = np.linalg.norm(to_vp, axis=1)
    cosang = np.abs(np.sum(dirs * to_vp, axis=1)) / np.maximum(n, 1e-300)
    ang = np.degrees(np.arccos(np.clip(cosang, 0.0, 1.0)))
    return np.where(n < 1e-9, 0.0, ang)


def _consistency_residuals(mids, dirs, lens, vp):
    """Distance from the segment endpoints to the line joining midpoint and vp."""
    vp = np.asarray(vp, dtype=float)
    mh = np.column_stack([mids, np.ones(len(mids))])
    l = np.cross(mh, vp)
    nrm = np.hypot(l[:, 0], l[:, 1])
    ends = mids + 0.5 * lens[:, None] * dirs
    d = np.abs(l[:, 0] * ends[:, 0] + l[:, 1] * ends[:, 1] + l[:, 2]) / np.maximum(nrm, 1e-300)
    return np.where(nrm < 1e-12, 0.0, d)


def cluster_lines(lines, vps, angle_thresh=DEFAULT_ANGLE_THRESH):
    """Assign each segment to the vanishing point it points at best.

    Returns three clusters (in the order of ``vps``) and the outlier list.
    """
    clusters = [VpCluster(np.asarray(v, dtype=float)) for v in vps]
    outliers = []
    if not lines:
        return clusters, outliers
    mids, dirs, _ = _line_arrays(lines)
    ang = np.column_stack([_angles_to_vp(mids, dirs, v) for v in vps])
    best = np.argmin(ang, axis=1)
    for k, line in enumerate(lines):
        j = best[k]
        if ang[k, j] <= angle_thresh:
            clusters[j].members.append(line)
        else:
            outliers.append(line)
    return clusters, outliers


def line_constraint_matrix(members):
    """Stack of sqrt(length)-weighted unit line triples."""
    return np.array([np.sqrt(m.length) * m.line for m in members]).reshape(-1, 3)


def refit_vp(cluster: VpCluster):
    """Least-squares vanishing point of a cluster: the eigenvector of L^T L with
    the smallest eigenvalue, returned with unit norm and the sign of the
    incoming estimate."""
    if cluster.N < 2:
        raise DegenerateCluster("need at least two lines")
    L = line_constraint_matrix(cluster.members)
    w, V = np.linalg.eigh(L.T @ L)
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise DegenerateCluster("cluster lines do not constrain a point (rank < 2)")
    vp = V[:, 0]
    if np.dot(vp, cluster.vp) < 0:
        vp = -vp
    return vp


def _directions(vps, f, c):
    Kinv = np.array([[1 / f, 0, -c[0] / f], [0, 1 / f, -c[1] / f], [0, 0, 1.0]])
    D = []
    for v in vps:
        v = np.asarray(v, dtype=float)
        d = Kinv @ v if is_finite_point(v) else np.array([v[0], v[1], 0.0])
        D.append(d / np.linalg.norm(d))
    return np.column_stack(D)


def focal_from_vps(vps, c):
    c = np.asarray(c, dtype=float)
    f2 = []
    for a, b in itertools.combinations(range(len(vps)), 2):
        va, vb = vps[a], vps[b]
        if not (is_finite_point(va) and is_finite_point(vb)):
            continue
        dot = np.dot(va[:2] / va[2] - c, vb[:2] / vb[2] - c)
        if dot < 0:
            f2.append(-dot)
    if not f2:
        raise NoFocalSolution("no finite vanishing point pair with negative dot product")
    return float(np.sqrt(np.mean(f2)))


def camera_from_vps(vps, image, h_cam=1.0):
    """Focal length and rotation from three (nearly) orthogonal vanishing points.

    The principal point is the image centre. The axis whose direction is most
    aligned with the image vertical becomes room z (pointing up); the two
    horizontal axes point forward, and they are swapped if needed so that
    det(R) = +1.
    """
    width, height = image
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    f = focal_from_vps(vps, c)
    D = _directions(vps, f, c)
    vert = int(np.argmax(np.abs(D[1])))
    horiz = [k for k in range(3) if k != vert]
    cols = []
    for k in horiz:
        d = D[:, k]
        key = d[2] if abs(d[2]) > 1e-9 else d[0]
        cols.append(d if key > 0 else -d)
    dz = D[:, vert] if D[1, vert] < 0 else -D[:, vert]
    M = np.column_stack(cols + [dz])
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        M = M[:, [1, 0, 2]]
        U, _, Vt = np.linalg.svd(M)
        R = U @ Vt
    return CameraModel(f, c, R, h_cam)


def camera_vps(cam: CameraModel):
    """The exactly orthogonal triplet K R e_i, unit-normalised."""
    return [v / np.linalg.norm(v) for v in (cam.vanishing_point(i) for i in range(3))]


def _residual(clusters):
    vals = []
    for cl in clusters:
        if cl.N:
            mids, dirs, lens = _line_arrays(cl.members)
            vals.append(_consistency_residuals(mids, dirs, lens, cl.vp))
    if not vals:
        return np.inf
    return float(np.mean(np.concatenate(vals)))


def _sphere(v, image):
    """Map a homogeneous image point onto the unit sphere in image-size units,
    so that angular comparisons do not depend on pixel scale."""
    s = float(max(image))
    c = np.array([(image[0] - 1) / 2.0, (image[1] - 1) / 2.0])
    u = np.array([v[0] - c[0] * v[2], v[1] - c[1] * v[2], s * v[2]])
    return u / np.linalg.norm(u)


def _polish_candidate(v, W, mids, dirs, angle_thresh, rounds=3):
    """Refit a candidate to the segments it explains; ``W`` holds the
    length-weighted line triples of all segments."""
    for _ in range(rounds):
        inl = _angles_to_vp(mids, dirs, v) <= angle_thresh
        if inl.sum() < 3:
            break
        ev, V = np.linalg.eigh(W[inl].T @ W[inl])
        if ev[1] <= 1e-12 * max(ev[2], 1e-300):
            break
        w = V[:, 0] if np.dot(V[:, 0], v) >= 0 else -V[:, 0]
        if np.allclose(w, v, atol=1e-12):
            break
        v = w
    return v


def seed_triplets(lines, image, angle_thresh=DEFAULT_ANGLE_THRESH):
    """Scored search for an initial Manhattan triplet.

    Candidates are intersections of the longest segments, each refitted to
    the segments it explains and scored by their total length. Pairs of candidates
    that admit a real focal length are completed to a triplet by
    orthogonality, and the triplet is scored by the total length of the
    segments it explains. Returns triplets ordered best first.
    """
    order = sorted(range(len(lines)), key=lambda k: (-lines[k].length, k))[:N_SEED_LINES]
    mids, dirs, lens = _line_arrays(lines)
    cands = []
    for i, j in itertools.combinations(order, 2):
        v = np.cross(lines[i].line, lines[j].line)
        n = np.linalg.norm(v)
        if n < 1e-12:
            continue
        cands.append(v / n)
    if not cands:
        return []
    # snap each noisy intersection onto the least-squares point of the segments it explains
    W = line_constraint_matrix(lines)
    cands = [_polish_candidate(v, W, mids, dirs, angle_thresh) for v in cands]
    scores =[float(lens[_angles_to_vp(mids, dirs, v) <= angle_thresh].sum()) for v in cands]
    ranked = sorted(range(len(cands)), key=lambda k: (-scores[k], k))
    kept = []
    for k in ranked:
        s = _sphere(cands[k], image)
        if all(abs(np.dot(s, _sphere(cands[m], image))) < np.cos(np.radians(2.0)) for m in kept):
            kept.append(k)
        if len(kept) >= N_SEED_CANDIDATES:
            break

    c = np.array([(image[0] - 1) / 2.0, (image[1] - 1) / 2.0])
    triplets = []
    for a, b in itertools.combinations(kept, 2):
        va, vb = cands[a], cands[b]
        if not (is_finite_point(va) and is_finite_point(vb)):
            continue
        dot = np.dot(va[:2] / va[2] - c, vb[:2] / vb[2] - c)
        if dot >= 0:
            continue
        f = np.sqrt(-dot)
        K = np.array([[f, 0, c[0]], [0, f, c[1]], [0, 0, 1.0]])
        D = _directions([va, vb], f, c)
        vc = K @ np.cross(D[:, 0], D[:, 1])
        trip = [va, vb, vc / np.linalg.norm(vc)]
        ang = np.column_stack([_angles_to_vp(mids, dirs, v) for v in trip])
        best = np.argmin(ang, axis=1)
        inl = ang[np.arange(len(lines)), best] <= angle_thresh
        score = float(lens[inl].sum())
        res = 0.0
        if inl.any():
            r = [_consistency_residuals(mids[inl & (best == k)], dirs[inl & (best == k)],
                                        lens[inl & (best == k)], trip[k]) for k in range(3)]
            res = float(np.mean(np.concatenate(r)))
        triplets.append((-score, res, (a, b), trip))
    triplets.sort(key=lambda t: t[:3])
    return [t[3] for t in triplets]


def _joint_step(cam, clusters):
    """Least-squares update of focal length and rotation against the current
    clusters, keeping the three vanishing points exactly orthogonal."""
    data = [(k, _line_arrays(cl.members)) for k, cl in enumerate(clusters) if cl.N]
    if sum(len(d[1][0]) for d in data) < 4:
        return None
    R0 = cam.R

    def camera(x):
        return CameraModel(float(cam.f * np.exp(x[0])), cam.c, R0 @ Rotation.from_rotvec(x[1:]).as_matrix().T,
                           cam.h_cam)

    def resid(x):
        vps = camera_vps(camera(x))
        return np.concatenate([_consistency_residuals(m, d, l, vps[k]) for k, (m, d, l) in data])

    sol = least_squares(resid, np.zeros(4), method="lm", x_scale=1e-2)
    return camera(sol.x)


def _iterate(lines, image, vps, angle_thresh, max_iter, tol):
    cam = camera_from_vps(vps, image)
    vps = camera_vps(cam)
    clusters, outliers = cluster_lines(lines, vps, angle_thresh)
    res = _residual(clusters)
    it = 0
    while it < max_iter:
        it += 1
        new = []
        for cl, v in zip(clusters, vps):
            try:
                new.append(refit_vp(cl))
            except DegenerateCluster:
                new.append(v)
        try:
            cam_new = camera_from_vps(new, image)
        except NoFocalSolution:
            break
        vps_new = camera_vps(cam_new)
        cl_new, out_new = cluster_lines(lines, vps_new, angle_thresh)
        res_new = _residual(cl_new)
        # the per-cluster refits can stall against the orthogonality constraint;
        # a joint step on (f, R) over the same clusters gets past that
        joint = _joint_step(cam, clusters)
        if joint is not None:
            vps_j = camera_vps(joint)
            cl_j, out_j = cluster_lines(lines, vps_j, angle_thresh)
            res_j = _residual(cl_j)
            if res_j < res_new:
                cam_new, vps_new, cl_new, out_new, res_new = joint, vps_j, cl_j, out_j, res_j
        if not res_new <= res + 1e-12:
            break
        change = res - res_new
        cam, vps, clusters, outliers, res = cam_new, vps_new, cl_new, out_new, res_new
        if change < tol:
            break
    return CalibrationResult(vps, cam, res, it, clusters, outliers)


def joint_calibrate(lines, image, init=None, angle_thresh=DEFAULT_ANGLE_THRESH,
                    max_iter=50, tol=1e-4):
    """Alternate clustering, per-cluster vanishing point refits and camera
    updates until the mean line residual stops improving."""
    lines = list(lines)
    if len(lines) < 6:
        raise CalibrationFailed("need at least six line segments")
    seeds = [list(init)] if init is not None else seed_triplets(lines, image, angle_thresh)
    for vps in seeds:
        try:
            return _iterate(lines, image, vps, angle_thresh, max_iter, tol)
        except (NoFocalSolution, DegenerateCluster):
            continue
    raise CalibrationFailed("no seed triplet produced a valid camera")


def vp_angle_error(cam_a: CameraModel, cam_b: CameraModel):
    """Largest angle (degrees) between corresponding Manhattan axes of two cameras."""
    a, b = cam_a.R.T, cam_b.R.T
    cos = np.abs(np.sum(a * b, axis=1))
    sin = np.linalg.norm(np.cross(a, b), axis=1)
    return float(np.degrees(np.arctan2(sin, cos)).max())
