import functools

import numpy as np
import pytest
from hypothesis import settings

from roomscene.errors import PlacementRejection
from roomscene.geom import CameraModel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def look_camera(f=500.0, dims=(640, 480), psi=np.radians(45), pitch=np.radians(5), h=1.5):
    """Camera yawed by ``psi`` and tilted down by ``pitch``; rows of R are
    (right, down, forward) in room coordinates."""
    fwd = np.array([np.cos(pitch) * np.sin(psi), np.cos(pitch) * np.cos(psi), -np.sin(pitch)])
    right = np.array([np.cos(psi), -np.sin(psi), 0.0])
    down = np.cross(fwd, right)
    R = np.vstack([right, down, fwd])
    c = ((dims[0] - 1) / 2, (dims[1] - 1) / 2)
    return CameraModel(f, c, R, h)


@functools.lru_cache(maxsize=None)
def harness_scene(seed, n):
    from roomscene.synth import make_scene
    return make_scene(seed, n)


def harness_scenes(count, n_of=lambda s: 8 + s % 9, start=0):
    """First ``count`` seeds from ``start`` whose scene draws succeed."""
    out, s = [], start
    while len(out) < count:
        try:
            out.append((s,) + harness_scene(s, n_of(s)))
        except PlacementRejection:
            pass
        s += 1
    return out


@pytest.fixture
def cam():
    return look_camera()
