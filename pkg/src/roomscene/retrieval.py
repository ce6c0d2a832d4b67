"""Model retrieval by multi-view descriptor cosine similarity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyLibrary, ZeroNorm

N_VIEWS = 32
DESCRIPTOR_DIM = 2048
TOP_K = 5


@dataclass
class ViewDescriptorSet:
    model_id: str
    views: np.ndarray

    def __post_init__(self):
        self.views = np.asarray(self.views)
        if not np.issubdtype(self.views.dtype, np.floating):
            self.views = self.views.astype(np.float64)
        if self.views.ndim != 2:
            raise ValueError("views must be a 2-D array")
        if np.isnan(self.views).any():
            raise ValueError(f"model {self.model_id}: NaN in descriptors")
        if np.any(np.linalg.norm(self.views, axis=1) == 0):
            raise ZeroNorm(f"model {self.model_id}: zero-norm view descriptor")


def _unit_rows(a):
    a = np.asarray(a, dtype=np.float64)
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ZeroNorm("zero-norm descriptor")
    return a / n


def similarity(f, m: ViewDescriptorSet):
    """Largest cosine between the query and any of the model's views."""
    q = _unit_rows(f)
    return float(np.max(_unit_rows(m.views) @ q))


def similarities(f, library):
    q = _unit_rows(f)
    return np.array([np.max(_unit_rows(m.views) @ q) for m in library])


def top_k(f, library, k=TOP_K):
    """Model ids sorted by decreasing similarity, ties by model id."""
    if not library:
        raise EmptyLibrary("no models to rank")
    k = min(k, len(library))
    s = similarities(f, library)
    order = sorted(range(len(library)), key=lambda i: (-s[i], library[i].model_id))
    return [library[i].model_id for i in order[:k]]
