"""Support-relation inference.

Questions about an object are encoded as 106-bit vectors (instance, category,
question index and group blocks, one bit each). Answers are scalars in
0..103 decoded through a fixed lookup table. The supporting instance is the
neighbour that maximises the prior probability of its category supporting
the object's category with the given support type.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import catalog
from .errors import CyclicGraph, OutOfRange
from .layout import CEILING, FLOOR, LAYOUT_IDS, WALL_IDS

N_INSTANCES = 60
N_CATEGORIES = 40
N_QUESTIONS = 4
N_GROUPS = 2
VECTOR_LEN = N_INSTANCES + N_CATEGORIES + N_QUESTIONS + N_GROUPS
N_ANSWERS = 104

NON_RELATIONAL, RELATIONAL = 0, 1
BELOW, BEHIND = 0, 1
TYPE_NAMES = ("below", "behind")

QUESTIONS = {
    NON_RELATIONAL: (
        "What is the instance index of this object?",
        "What is the category of this object?",
        "Is this object labelled as an 'other' category?",
        "Is this object partly occluded?",
    ),
    RELATIONAL: (
        "Which instance is supporting this object?",
        "What is the category of the supporting object?",
        "What is the support type?",
        "Is this object supported by a layout instance?",
    ),
}

# answer lookup table: 0..59 instance, 60..99 category, 100..101 type, 102..103 yes/no
_ANSWER_BLOCKS = (("instance", 0, 60), ("category", 60, 100), ("type", 100, 102), ("yesno", 102, 104))
YES, NO = 102, 103

LAYOUT_CATEGORY = {FLOOR: catalog.FLOOR, CEILING: catalog.CEILING}
LAYOUT_CATEGORY.update({w: catalog.WALL for w in WALL_IDS})


@dataclass(frozen=True)
class QuestionCode:
    instance_id: int
    category: int
    question_index: int
    group: int

    @property
    def bits(self):
        return (self.instance_id, N_INSTANCES + self.category,
                N_INSTANCES + N_CATEGORIES + self.question_index,
                N_INSTANCES + N_CATEGORIES + N_QUESTIONS + self.group)

    @property
    def vector(self):
        v = np.zeros(VECTOR_LEN, dtype=np.uint8)
        v[list(self.bits)] = 1
        return v

    @property
    def text(self):
        return QUESTIONS[self.group][self.question_index]


def _check(name, value, n):
    if not (isinstance(value, (int, np.integer)) and 0 <= value < n):
        raise OutOfRange(f"{name}={value!r} outside 0..{n - 1}")


def encode_question(instance_id, category, question_index, group) -> QuestionCode:
    _check("instance_id", instance_id, N_INSTANCES)
    _check("category", category, N_CATEGORIES)
    _check("question_index", question_index, N_QUESTIONS)
    _check("group", group, N_GROUPS)
    return QuestionCode(int(instance_id), int(category), int(question_index), int(group))


def decode_question(vector) -> QuestionCode:
    v = np.asarray(vector)
    if v.shape != (VECTOR_LEN,) or v.sum() != 4:
        raise OutOfRange("question vector must have 106 entries with four bits set")
    blocks = np.split(v, np.cumsum([N_INSTANCES, N_CATEGORIES, N_QUESTIONS]))
    idx = []
    for b in blocks:
        nz = np.flatnonzero(b)
        if len(nz) != 1:
            raise OutOfRange("each block needs exactly one bit")
        idx.append(int(nz[0]))
    return encode_question(*idx)


def decode_answer(a):
    """Return (kind, value) for an answer code."""
    _check("answer", a, N_ANSWERS)
    for kind, lo, hi in _ANSWER_BLOCKS:
        if lo <= a < hi:
            value = int(a - lo)
            if kind == "yesno":
                value = value == 0
            return kind, value
    raise AssertionError("unreachable")


def encode_answer(kind, value):
    for k, lo, hi in _ANSWER_BLOCKS:
        if k == kind:
            if kind == "yesno":
                return YES if value else NO
            _check(kind, value, hi - lo)
            return lo + int(value)
    raise OutOfRange(f"unknown answer kind {kind!r}")


@dataclass
class PriorTables:
    support_count: np.ndarray
    height_mu: np.ndarray
    height_sigma: np.ndarray

    def __post_init__(self):
        self.support_count = np.asarray(self.support_count, dtype=float)
        self.height_mu = np.asarray(self.height_mu, dtype=float)
        self.height_sigma = np.asarray(self.height_sigma, dtype=float)
        if self.support_count.shape != (N_CATEGORIES, N_CATEGORIES, 2):
            raise ValueError("support_count must be 40x40x2")
        if not np.all(np.isfinite(self.support_count)) or np.any(self.support_count < 0):
            raise ValueError("support counts must be finite and non-negative")
        if np.any(self.height_sigma < 0):
            raise ValueError("height sigma must be non-negative")

    def available(self, child, stype):
        return self.support_count[child, :, stype].sum() > 0

    def prob(self, child, stype):
        """P(parent category | child category, type); zeros when unavailable."""
        row = self.support_count[child, :, stype]
        s = row.sum()
        return row / s if s > 0 else np.zeros_like(row)

    def parent_ranking(self, child):
        score = self.prob(child, BELOW) + self.prob(child, BEHIND)
        return [int(c) for c in np.argsort(-score, kind="stable")]


def _disk(r):
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    return xs ** 2 + ys ** 2 <= r * r


def neighbors(masks, dilation=5):
    """Adjacency between object masks: two objects are neighbours when their
    masks, both dilated by ``dilation`` pixels, overlap or touch (share a
    pixel edge). Every layout instance neighbours every object."""
    ids = list(masks)
    if dilation > 0:
        st = _disk(dilation)
        grown = {i: ndimage.binary_dilation(masks[i], structure=st) for i in ids}
    else:
        grown = {i: np.asarray(masks[i], bool) for i in ids}
    touch = {i: ndimage.binary_dilation(grown[i]) for i in ids}
    out = {i: set(LAYOUT_IDS) for i in ids}
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            if np.any(touch[i] & grown[j]):
                out[i].add(j)
                out[j].add(i)
    return out


def category_of(instance, categories):
    return LAYOUT_CATEGORY[instance] if instance in LAYOUT_CATEGORY else categories[instance]


def resolve_support(obj, candidates, stype, priors: PriorTables, nbrs, categories,
                    layout_affinity=None):
    """Pick the supporting instance of ``obj``.

    ``candidates`` is the ranked list of plausible supporting categories,
    ``stype`` the support type or None to let the priors decide. Ties break
    on higher prior, then 'below' over 'behind', then layout affinity (used to
    tell walls apart), then lower instance id. Returns (parent, type, prior).
    """
    affinity = layout_affinity or {}
    cand = set(candidates)
    types = (BELOW, BEHIND) if stype is None else (stype,)
    cat_i = categories[obj]
    best, best_key = None, None
    for t in types:
        p = priors.prob(cat_i, t)
        for j in sorted(nbrs.get(obj, ())):
            if j == obj:
                continue
            cj = category_of(j, categories)
            if cj not in cand:
                continue
            key = (p[cj], t == BELOW, affinity.get(j, 0.0), -j)
            if best_key is None or key > best_key:
                best, best_key = (j, t, float(p[cj])), key
    if best is None:
        return FLOOR, BELOW, float(priors.prob(cat_i, BELOW)[catalog.FLOOR])
    return best


@dataclass
class SupportGraph:
    edges: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    repaired: list = field(default_factory=list)

    def parent(self, i):
        return self.edges[i][0]

    def type(self, i):
        return self.edges[i][1]

    def children(self, j):
        return sorted(i for i, (p, _) in self.edges.items() if p == j)

    def find_cycle(self):
        state = {}
        for start in sorted(self.edges):
            path, node = [], start
            while node in self.edges and state.get(node) is None:
                state[node] = start
                path.append(node)
                node = self.edges[node][0]
            if node in self.edges and state.get(node) == start:
                return path[path.index(node):]
            for n in path:
                state[n] = -1
        return None

    def topological_order(self):
        """Objects ordered so that every parent precedes its children."""
        if self.find_cycle():
            raise CyclicGraph("support graph has a cycle")
        depth = {}

        def d(i):
            if i not in depth:
                p = self.edges[i][0]
                depth[i] = 0 if p not in self.edges else d(p) + 1
            return depth[i]

        return sorted(self.edges, key=lambda i: (d(i), i))

    def repair_cycles(self):
        """Re-parent the weakest edge of every cycle onto the floor."""
        while (cyc := self.find_cycle()) is not None:
            weakest = min(cyc, key=lambda i: (self.prior.get(i, 0.0), -i))
            self.edges[weakest] = (FLOOR, BELOW)
            self.repaired.append(weakest)


def candidate_categories(priors, category, answers=None, support_candidates=None, k=5):
    """The top-k supporting categories: injected list, else the answered
    category followed by prior ranking, else the prior ranking alone."""
    if support_candidates:
        return list(support_candidates)[:k]
    out = []
    if answers is not None:
        kind, value = decode_answer(answers[1])
        if kind == "category":
            out.append(value)
    for c in priors.parent_ranking(category):
        if len(out) >= k:
            break
        if c not in out:
            out.append(c)
    return out


def answered_type(answers):
    if answers is None:
        return None
    kind, value = decode_answer(answers[2])
    return value if kind == "type" else None


def infer_support(instances, priors, dilation=5, layout_affinity=None, k=5):
    """Resolve every object's support and return an acyclic SupportGraph.

    ``instances`` is a list of objects with ``id``, ``category``, ``mask`` and
    optional ``answers`` / ``support_candidates`` attributes.
    """
    masks = {ins.id: ins.mask for ins in instances}
    categories = {ins.id: ins.category for ins in instances}
    nbrs = neighbors(masks, dilation)
    g = SupportGraph()
    for ins in instances:
        answers = getattr(ins, "answers", None)
        sc = candidate_categories(priors, ins.category, answers, getattr(ins, "support_candidates", None), k)
        aff = (layout_affinity or {}).get(ins.id)
        parent, t, p = resolve_support(ins.id, sc, answered_type(answers), priors, nbrs, categories, aff)
        g.edges[ins.id] = (parent, t)
        g.prior[ins.id] = p
    g.repair_cycles()
    return g


def wall_affinity(mask, labels):
    """Fraction of the (dilated) mask falling on each wall region."""
    grown = ndimage.binary_dilation(mask, structure=_disk(3))
    n = max(int(grown.sum()), 1)
    return {w: float(np.count_nonzero(labels[grown] == w)) / n for w in WALL_IDS}
