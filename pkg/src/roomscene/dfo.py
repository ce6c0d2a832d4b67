"""Bound-constrained derivative-free maximisation.

A small trust-region method in the BOBYQA family: each iteration samples the
objective at +/- rho along every free coordinate, fits a separable quadratic
model through those 2n+1 points, and tries the model's maximiser inside the
box trust region. Every trial point is passed through a user projection onto
the feasible set before it is evaluated, and a move is accepted only if it
strictly improves the objective, so the accepted values never decrease.
A bounded coordinate-search variant keeps the same contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class State:
    x: np.ndarray
    f: float
    rho: float
    trace: list = field(default_factory=list)
    accepted: int = 0
    evals: int = 0
    done: bool = False


class TrustRegionMaximizer:
    """Maximise ``fun`` over the box [lower, upper] intersected with whatever
    set ``project`` maps onto.

    Coordinates are scaled to the unit box internally; ``rho0`` is the initial
    trust radius as a fraction of each variable's range.
    """

    def __init__(self, fun, x0, lower, upper, project=None, rho0=0.1, rho_end=1e-3,
                 rho_max=0.25, method="quadratic", free=None):
        self.fun = fun
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.span = np.maximum(self.upper - self.lower, 1e-12)
        self.project = project or (lambda x: x)
        self.rho_end = rho_end
        self.rho_max = rho_max
        self.method = method
        n = len(self.lower)
        free = np.ones(n, dtype=bool) if free is None else np.asarray(free, dtype=bool)
        self.free = np.flatnonzero(free & (self.upper > self.lower))
        x = self._feasible(np.asarray(x0, dtype=float))
        self.state = State(x, self._eval(x), rho0)
        self.state.trace.append(self.state.f)

    def _feasible(self, x):
        x = np.clip(x, self.lower, self.upper)
        return np.clip(self.project(x), self.lower, self.upper)

    def _eval(self, x):
        if hasattr(self, "state"):
            self.state.evals += 1
        return float(self.fun(x))

    def _try(self, x):
        y = self._feasible(x)
        return y, self._eval(y)

    def step(self):
        st = self.state
        if st.done or not len(self.free):
            st.done = True
            st.trace.append(st.f)
            return
        r = st.rho * self.span
        best_x, best_f = st.x, st.f
        if self.method == "coordinate":
            for i in self.free:
                for sgn in (1.0, -1.0):
                    e = np.zeros_like(st.x)
                    e[i] = sgn * r[i]
                    y, fy = self._try(st.x + e)
                    if fy > best_f + 1e-12:
                        best_x, best_f = y, fy
                if best_f > st.f + 1e-12:
                    break
        else:
            g = np.zeros_like(st.x)
            h = np.zeros_like(st.x)
            for i in self.free:
                e = np.zeros_like(st.x)
                e[i] = r[i]
                yp, fp = self._try(st.x + e)
                ym, fm = self._try(st.x - e)
                for y, fy in ((yp, fp), (ym, fm)):
                    if fy > best_f + 1e-12:
                        best_x, best_f = y, fy
                g[i] = (fp - fm) / (2 * r[i])
                h[i] = (fp - 2 * st.f + fm) / r[i] ** 2
            s = np.zeros_like(st.x)
            for i in self.free:
                if h[i] < 0:
                    s[i] = np.clip(-g[i] / h[i], -r[i], r[i])
                elif g[i] != 0:
                    s[i] = np.sign(g[i]) * r[i]
            if np.any(s):
                y, fy = self._try(st.x + s)
                if fy > best_f + 1e-12:
                    best_x, best_f = y, fy
        if best_f > st.f + 1e-12:
            st.x, st.f = best_x, best_f
            st.accepted += 1
            st.rho = min(st.rho * 1.5, self.rho_max)
        else:
            st.rho *= 0.5
            if st.rho < self.rho_end:
                st.done = True
        st.trace.append(st.f)

    def run(self, iters):
        for _ in range(iters):
            self.step()
        return self.state


def maximize(fun, x0, lower, upper, project=None, max_iter=30, **kw):
    opt = TrustRegionMaximizer(fun, x0, lower, upper, project, **kw)
    return opt.run(max_iter)
