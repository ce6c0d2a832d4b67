"""VP angular error of the joint calibration as line noise and clutter grow."""
import numpy as np

from roomscene.errors import PlacementRejection, RoomSceneError
from roomscene.pipeline import bundle_lines
from roomscene.synth import Noise, make_scene
from roomscene.vanishing import joint_calibrate, vp_angle_error

N_SCENES = 20


def sweep(sigma, clutter):
    errs, s = [], 0
    while len(errs) < N_SCENES:
        try:
            truth, bundle = make_scene(s, 8, Noise(sigma, clutter))
        except PlacementRejection:
            s += 1
            continue
        try:
            cal = joint_calibrate(bundle_lines(bundle), bundle.dims)
            errs.append(vp_angle_error(cal.camera, truth.camera))
        except RoomSceneError:
            errs.append(np.inf)
        s += 1
    return np.array(errs)


if __name__ == "__main__":
    print("sigma  clutter  median   p90    <1.5deg")
    for sigma in (0.0, 0.5, 1.0, 2.0):
        for clutter in (0.0, 0.2, 0.5):
            e = sweep(sigma, clutter)
            print("%5.1f  %7.1f  %6.3f  %6.3f  %3d/%d" % (sigma, clutter, np.median(e), np.percentile(e, 90),
                                                      np.sum(e < 1.5), len(e)))
