import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roomscene.errors import EmptyLibrary, ZeroNorm
from roomscene.retrieval import ViewDescriptorSet, similarity, top_k


def random_library(rng, n, views=32, dim=2048):
    return [ViewDescriptorSet(f"m{k:03d}", rng.standard_normal((views, dim))) for k in range(n)]


def oracle_similarity(f, m):
    best = -np.inf
    for v in m.views:
        c = sum(float(a) * float(b) for a, b in zip(f, v))
        c /= np.sqrt(sum(float(a) ** 2 for a in f)) * np.sqrt(sum(float(b) ** 2 for b in v))
        best = max(best, c)
    return best


def oracle_ranking(f, lib):
    sims = [(-float(np.max((m.views @ f) / (np.linalg.norm(m.views, axis=1) * np.linalg.norm(f)))), m.model_id)
            for m in lib]
    return [mid for _, mid in sorted(sims)]


def test_similarity_examples():
    rng = np.random.default_rng(0)
    m = ViewDescriptorSet("a", rng.standard_normal((32, 64)))
    assert similarity(m.views[7], m) == pytest.approx(1.0)
    basis = np.eye(64)[:32]
    assert similarity(np.eye(64)[40], ViewDescriptorSet("b", basis)) == 0.0


def test_similarity_matches_double_loop():
    rng = np.random.default_rng(1)
    m = ViewDescriptorSet("a", rng.standard_normal((32, 48)))
    f = rng.standard_normal(48)
    assert similarity(f, m) == pytest.approx(oracle_similarity(f, m), abs=1e-12)


def test_zero_norm():
    with pytest.raises(ZeroNorm):
        similarity(np.zeros(8), ViewDescriptorSet("a", np.ones((32, 8))))
    with pytest.raises(ZeroNorm):
        ViewDescriptorSet("a", np.zeros((32, 8)))


def test_top_k_full_ordering_and_ties():
    rng = np.random.default_rng(2)
    lib = random_library(rng, 12, dim=32)
    lib.append(ViewDescriptorSet("m005b", lib[5].views.copy()))
    f = rng.standard_normal(32)
    full = top_k(f, lib, len(lib))
    assert full == oracle_ranking(f, lib)
    i = full.index("m005")
    assert full[i + 1] == "m005b"


def test_top_k_matches_sort_oracle_100_models():
    rng = np.random.default_rng(3)
    lib = random_library(rng, 100, dim=128)
    f = rng.standard_normal(128)
    assert top_k(f, lib, 5) == oracle_ranking(f, lib)[:5]


def test_top_k_empty():
    with pytest.raises(EmptyLibrary):
        top_k(np.ones(4), [], 5)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 19))
def test_top_k_prefix(seed, k):
    rng = np.random.default_rng(seed)
    lib = random_library(rng, 20, views=4, dim=16)
    f = rng.standard_normal(16)
    assert top_k(f, lib, k) == top_k(f, lib, k + 1)[:k]


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_similarity_scale_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    views = rng.standard_normal((32, 64))
    f = rng.standard_normal(64)
    base = similarity(f, ViewDescriptorSet("a", views))
    assert abs(similarity(a * f, ViewDescriptorSet("a", b * views)) - base) <= 1e-12
