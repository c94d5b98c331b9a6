"""
Kalman filter, Rauch-Tung-Striebel smoother, forward-filtering
backward-sampling and k-step forecasts for the discretized FDLM.

All linear solves go through :func:`fdlm.kernel.safe_cholesky`; no covariance
matrix is ever inverted explicitly, and every covariance update is
symmetrized before it is stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from .errors import DimensionMismatchError, GridMismatchError, ParameterDomainError
from .kernel import chol_logdet, chol_solve, chol_whiten, safe_cholesky
from .statespace import FdlmSpec, FunctionalSeries, ModelMatrices, as_matrices

__all__ = [
    "FilterStep",
    "FilterOutput",
    "SmoothStep",
    "kalman_filter",
    "smooth",
    "ffbs",
    "forecast",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _sym(a):
    return 0.5 * (a + a.T)


class FilterStep(NamedTuple):
    a: np.ndarray  # state forecast mean
    R: np.ndarray  # state forecast covariance
    f: np.ndarray  # observation forecast mean
    Q: np.ndarray  # observation forecast covariance
    m: np.ndarray  # filtered mean
    C: np.ndarray  # filtered covariance
    loglik_increment: float


class SmoothStep(NamedTuple):
    s: np.ndarray
    S: np.ndarray


@dataclass(frozen=True, eq=False)
class FilterOutput:
    """Filter pass over t = 1..T; ``steps[t - 1]`` holds the moments at time t."""

    model: ModelMatrices
    steps: List[FilterStep]

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, i):
        return self.steps[i]

    def __iter__(self):
        return iter(self.steps)

    @property
    def loglik(self) -> float:
        return float(sum(s.loglik_increment for s in self.steps))

    def stacked(self, name: str) -> np.ndarray:
        """Stack one moment over time, e.g. ``stacked("m")`` is T x p."""
        return np.stack([getattr(s, name) for s in self.steps])


def _observations(model, data):
    if isinstance(data, FunctionalSeries):
        if isinstance(model, FdlmSpec) and data.grid != model.obs_grid:
            raise GridMismatchError("data grid differs from the model's observation grid")
        y = data.curves
    else:
        y = np.asarray(data, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
    return y


def kalman_filter(model: FdlmSpec | ModelMatrices, data) -> FilterOutput:
    """Forward filtering pass.

    ``data`` is a :class:`FunctionalSeries` on the model's observation grid or
    a plain T x d array.
    """
    y = _observations(model, data)
    mats = as_matrices(model)
    F, G, W, V = mats.F, mats.G, mats.W, mats.V
    d = mats.obs_dim
    if y.ndim != 2 or y.shape[1] != d:
        raise DimensionMismatchError(f"observations have shape {y.shape}, expected (T, {d})")
    if y.shape[0] < 1:
        raise ParameterDomainError("at least one observation is required")

    m, C = mats.m0, mats.C0
    steps = []
    for yt in y:
        a = G @ m
        R = _sym(G @ C @ G.T + W)
        f = F @ a
        FR = F @ R
        Q = _sym(FR @ F.T + V)
        lq = safe_cholesky(Q).lower
        B = chol_solve(lq, FR)  # Q^-1 F R
        e = yt - f
        m = a + B.T @ e
        C = _sym(R - FR.T @ B)
        z = chol_whiten(lq, e)
        ll = -0.5 * (d * _LOG_2PI + chol_logdet(lq) + float(z @ z))
        steps.append(FilterStep(a, R, f, Q, m, C, ll))
    return FilterOutput(mats, steps)


def _backward_gain(C, G, R_next):
    """``C G^T R_next^-1`` via a Cholesky solve."""
    lr = safe_cholesky(R_next).lower
    return chol_solve(lr, G @ C).T


def smooth(filtered: FilterOutput) -> List[SmoothStep]:
    """RTS smoother; returns T + 1 steps, the first one for X_0."""
    mats = filtered.model
    G = mats.G
    steps = filtered.steps
    ms = [mats.m0] + [s.m for s in steps]
    Cs = [mats.C0] + [s.C for s in steps]
    T = len(steps)

    out = [None] * (T + 1)
    out[T] = SmoothStep(ms[T], Cs[T])
    for t in range(T - 1, -1, -1):
        nxt = steps[t]  # moments at time t + 1
        J = _backward_gain(Cs[t], G, nxt.R)
        s_next, S_next = out[t + 1]
        s = ms[t] + J @ (s_next - nxt.a)
        S = _sym(Cs[t] - J @ (nxt.R - S_next) @ J.T)
        out[t] = SmoothStep(s, S)
    return out


def ffbs(filtered: FilterOutput, seed=None) -> np.ndarray:
    """One draw of the state trajectory X_0..X_T from the joint smoothing distribution."""
    rng = np.random.default_rng(seed)
    mats = filtered.model
    G = mats.G
    steps = filtered.steps
    T = len(steps)
    p = mats.state_dim

    x = np.empty((T + 1, p))
    last = steps[-1]
    x[T] = last.m + safe_cholesky(last.C).lower @ rng.standard_normal(p)
    for t in range(T - 1, -1, -1):
        m, C = (mats.m0, mats.C0) if t == 0 else (steps[t - 1].m, steps[t - 1].C)
        nxt = steps[t]
        J = _backward_gain(C, G, nxt.R)
        h = m + J @ (x[t + 1] - nxt.a)
        H = _sym(C - J @ G @ C)
        x[t] = h + safe_cholesky(H).lower @ rng.standard_normal(p)
    return x


def forecast(model: FdlmSpec | ModelMatrices, last_step: FilterStep, horizon: int):
    """Observation forecasts ``(f, Q)`` for horizons 1..k beyond the last filtered time."""
    if horizon < 1:
        raise ParameterDomainError(f"horizon must be >= 1, got {horizon}")
    mats = as_matrices(model)
    F, G, W, V = mats.F, mats.G, mats.W, mats.V
    a, R = last_step.m, last_step.C
    out = []
    for _ in range(horizon):
        a = G @ a
        R = _sym(G @ R @ G.T + W)
        out.append((F @ a, _sym(F @ R @ F.T + V)))
    return out
