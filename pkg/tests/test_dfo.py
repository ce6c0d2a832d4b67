import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roomscene.dfo import TrustRegionMaximizer, maximize


def bowl(c):
    return lambda x: -float(np.sum((x - c) ** 2))


@pytest.mark.parametrize("method", ["quadratic", "coordinate"])
def test_finds_interior_maximum(method):
    c = np.array([0.3, -0.2, 0.7])
    st_ = maximize(bowl(c), np.zeros(3), -np.ones(3), np.ones(3), max_iter=200, method=method)
    assert np.allclose(st_.x, c, atol=1e-2)


@pytest.mark.parametrize("method", ["quadratic", "coordinate"])
def test_respects_bounds_and_projection(method):
    c = np.array([2.0, 2.0])
    proj = lambda x: np.array([x[0], min(x[1], 0.5)])
    st_ = maximize(bowl(c), np.zeros(2), -np.ones(2), np.ones(2), proj, max_iter=100, method=method)
    assert st_.x[0] <= 1.0 + 1e-12 and st_.x[1] <= 0.5 + 1e-12
    assert np.allclose(st_.x, [1.0, 0.5], atol=1e-2)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["quadratic", "coordinate"]))
def test_trace_non_decreasing(seed, method):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    f = lambda x: float(np.sin(A @ x).sum() + np.round(3 * x[0]) / 3)
    opt = TrustRegionMaximizer(f, rng.uniform(-1, 1, 4), -np.ones(4) * 2, np.ones(4) * 2, method=method)
    opt.run(30)
    tr = np.array(opt.state.trace)
    assert len(tr) == 31 and np.all(np.diff(tr) >= 0)
    assert opt.state.f == pytest.approx(f(opt.state.x))


def test_fixed_point_at_optimum():
    opt = TrustRegionMaximizer(bowl(np.zeros(2)), np.zeros(2), -np.ones(2), np.ones(2))
    opt.run(30)
    assert opt.state.accepted == 0 and len(set(opt.state.trace)) == 1
