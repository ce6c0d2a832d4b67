"""Recover object heights from image lines alone: a night stand on the floor,
a lamp on the stand and a picture on the wall, with one view and a known
room height as the only metric reference."""
import numpy as np

from roomscene import catalog
from roomscene.geom import CameraModel, project
from roomscene.layout import FLOOR, WALL_XMAX, room_from_hypothesis
from roomscene.metrology import HeightLine, solve_heights
from roomscene.support import BEHIND, BELOW, PriorTables, SupportGraph

DIMS = (640, 480)


def camera(f=480.0, yaw=np.radians(40), pitch=np.radians(6), h=1.45):
    fwd = np.array([np.cos(pitch) * np.sin(yaw), np.cos(pitch) * np.cos(yaw), -np.sin(pitch)])
    right = np.array([np.cos(yaw), -np.sin(yaw), 0.0])
    R = np.vstack([right, np.cross(fwd, right), fwd])
    return CameraModel(f, ((DIMS[0] - 1) / 2, (DIMS[1] - 1) / 2), R, h)


def vertical(cam, xy, z0, z1, owner):
    return HeightLine(project(cam, [*xy, z1]), project(cam, [*xy, z0]), owner)


if __name__ == "__main__":
    cam = camera()
    room = room_from_hypothesis(4.2, 4.8)
    corner = (2.4, 3.1)
    truth = {0: (0.0, 0.55), 1: (0.55, 1.0), 2: (1.3, 1.9)}
    lines = {0: vertical(cam, corner, *truth[0], 0), 1: vertical(cam, corner, *truth[1], 1),
             2: vertical(cam, (room.hi[0], 2.0), *truth[2], 2)}
    graph = SupportGraph({0: (FLOOR, BELOW), 1: (0, BELOW), 2: (WALL_XMAX, BEHIND)})
    cats = {0: catalog.CAT["night stand"], 1: catalog.CAT["lamp"], 2: catalog.CAT["picture"]}
    priors = PriorTables(np.ones((40, 40, 2)), np.full(40, 0.2), np.full(40, 0.2))
    sol = solve_heights(graph, lines, cam, room, priors, cats, DIMS)
    for i, name in enumerate(("night stand", "lamp", "picture")):
        z0, z1 = truth[i]
        print("%-12s height %.4f m (truth %.4f)  top at %.4f m (truth %.4f)"
              % (name, sol[i].H, z1 - z0, sol[i].A, z1))
