"""NYU-40 category names and a small built-in library of unit-height models.

Every model is a union of axis-aligned boxes, centred on the z axis, standing
on z = 0 and exactly one unit tall; its horizontal size is expressed relative
to that height.
"""
from __future__ import annotations

import numpy as np

from .geom import union_of_boxes

NYU40 = (
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window",
    "bookshelf", "picture", "counter", "blinds", "desk", "shelves", "curtain", "dresser",
    "pillow", "mirror", "floor mat", "clothes", "ceiling", "books", "refridgerator",
    "television", "paper", "towel", "shower curtain", "box", "whiteboard", "person",
    "night stand", "toilet", "sink", "lamp", "bathtub", "bag", "otherstructure",
    "otherfurniture", "otherprop",
)
CAT = {name: k for k, name in enumerate(NYU40)}
WALL, FLOOR, CEILING = CAT["wall"], CAT["floor"], CAT["ceiling"]
OTHER = (CAT["otherstructure"], CAT["otherfurniture"], CAT["otherprop"])

# category -> (height range, width range, depth range) in metres
SIZES = {
    "cabinet": ((0.8, 1.0), (0.6, 1.0), (0.4, 0.6)),
    "table": ((0.7, 0.8), (0.9, 1.3), (0.7, 0.9)),
    "bookshelf": ((1.5, 1.9), (0.7, 1.0), (0.3, 0.4)),
    "desk": ((0.72, 0.8), (1.0, 1.3), (0.6, 0.7)),
    "dresser": ((0.8, 1.0), (1.0, 1.3), (0.45, 0.55)),
    "night stand": ((0.5, 0.65), (0.4, 0.55), (0.4, 0.5)),
    "chair": ((0.85, 1.0), (0.45, 0.55), (0.5, 0.55)),
    "otherfurniture": ((0.5, 1.1), (0.4, 1.0), (0.4, 0.8)),
    "lamp": ((0.35, 0.55), (0.22, 0.3), (0.22, 0.3)),
    "box": ((0.15, 0.3), (0.25, 0.4), (0.2, 0.35)),
    "television": ((0.4, 0.55), (0.6, 0.9), (0.1, 0.15)),
    "otherprop": ((0.12, 0.3), (0.15, 0.35), (0.15, 0.3)),
    "picture": ((0.4, 0.7), (0.4, 0.9), (0.03, 0.03)),
    "whiteboard": ((0.8, 1.0), (1.1, 1.5), (0.03, 0.03)),
    "mirror": ((0.6, 0.9), (0.4, 0.6), (0.03, 0.03)),
}
FLOOR_CATS = ("cabinet", "table", "bookshelf", "desk", "dresser", "night stand", "chair", "otherfurniture")
TOP_CATS = ("lamp", "box", "television", "otherprop")
WALL_CATS = ("picture", "whiteboard", "mirror")

# child -> supporting parent categories (type "below" unless the parent is a wall)
SUPPORT_RULES = {
    "lamp": ("night stand", "desk", "table", "dresser"),
    "box": ("table", "desk", "cabinet", "dresser"),
    "television": ("dresser", "cabinet", "table"),
    "otherprop": ("table", "desk", "night stand", "cabinet"),
}


def _shape(kind, w, d):
    if kind == "table":
        t, leg = 0.08, min(0.08, 0.25 * min(w, d))
        boxes = [((-w / 2, -d / 2, 1 - t), (w / 2, d / 2, 1.0))]
        for sx in (-1, 1):
            for sy in (-1, 1):
                x0 = w / 2 - leg if sx > 0 else -w / 2
                y0 = d / 2 - leg if sy > 0 else -d / 2
                boxes.append(((x0, y0, 0.0), (x0 + leg, y0 + leg, 1 - t)))
        return boxes
    if kind == "chair":
        return [((-w / 2, -d / 2, 0.0), (w / 2, d / 2, 0.5)),
                ((-w / 2, -d / 2, 0.5), (w / 2, -d / 2 + 0.2 * d, 1.0))]
    if kind == "lamp":
        return [((-w / 2, -d / 2, 0.0), (w / 2, d / 2, 0.08)),
                ((-0.05, -0.05, 0.08), (0.05, 0.05, 0.6)),
                ((-w / 2, -d / 2, 0.6), (w / 2, d / 2, 1.0))]
    return [((-w / 2, -d / 2, 0.0), (w / 2, d / 2, 1.0))]


def _kind(cat):
    if cat in ("table", "desk"):
        return "table"
    if cat in ("chair", "lamp"):
        return cat
    return "box"


def _build_library():
    lib = {}
    for cat, (hr, wr, dr) in SIZES.items():
        h = np.mean(hr)
        w, d = np.mean(wr) / h, np.mean(dr) / h
        for v, (fw, fd) in enumerate(((1.0, 1.0), (0.8, 1.1), (1.2, 0.85))):
            if CAT[cat] in OTHER:
                fw = fd = 1.0
                if v:
                    continue
            mid = f"{cat.replace(' ', '_')}_{v}"
            lib[mid] = (CAT[cat], union_of_boxes(_shape(_kind(cat), w * fw, d * fd)))
    return lib


LIBRARY = _build_library()
MODEL_IDS = tuple(sorted(LIBRARY))


def models_for(category):
    return [m for m in MODEL_IDS if LIBRARY[m][0] == category]


def scale_bounds(category):
    """Box for (s1, s2, s3): tight for known categories, loose horizontal
    ratios for the 'other' cuboid categories."""
    if category in OTHER:
        return np.array([0.1, 0.1, 0.9]), np.array([10.0, 10.0, 1.1])
    return np.array([0.8, 0.8, 0.9]), np.array([1.2, 1.2, 1.1])
