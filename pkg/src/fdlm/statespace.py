"""
Functional dynamic linear model on grids.

    X_0 ~ N(m0, C0)
    X_t = G X_{t-1} + w_t,    w_t ~ N(0, W)
    Y_t = F X_t + v_t,        v_t ~ N(0, V)

with C0, W and V Ornstein-Uhlenbeck covariance operators restricted to the
state grid (C0, W) and the observation grid (V).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatchError, GridMismatchError, ParameterDomainError
from .kernel import Grid, OuParams, gram_matrix, safe_cholesky

__all__ = [
    "ModelMatrices",
    "FdlmSpec",
    "FunctionalSeries",
    "DyadicOperator",
    "local_level_spec",
    "apply_dyadic",
    "discretize_spec",
    "resample",
    "simulate",
    "as_matrices",
]


class ModelMatrices(NamedTuple):
    """Raw matrices of a discretized model.

    This is what the filter, smoother and oracle actually consume. Building
    one by hand bypasses the OU parameterization, which is how textbook
    scalar examples are expressed.
    """

    F: np.ndarray
    G: np.ndarray
    m0: np.ndarray
    C0: np.ndarray
    W: np.ndarray
    V: np.ndarray

    @classmethod
    def from_arrays(cls, F, G, m0, C0, W, V):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        G = np.atleast_2d(np.asarray(G, dtype=float))
        m0 = np.atleast_1d(np.asarray(m0, dtype=float))
        C0 = np.atleast_2d(np.asarray(C0, dtype=float))
        W = np.atleast_2d(np.asarray(W, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        d, p = F.shape
        checks = (("G", G, (p, p)), ("m0", m0, (p,)), ("C0", C0, (p, p)), ("W", W, (p, p)), ("V", V, (d, d)))
        for name, arr, shape in checks:
            if arr.shape != shape:
                raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected {shape}")
        return cls(F, G, m0, C0, W, V)

    @property
    def state_dim(self):
        return self.G.shape[0]

    @property
    def obs_dim(self):
        return self.F.shape[0]


@dataclass(frozen=True, eq=False)
class FdlmSpec:
    state_grid: Grid
    obs_grid: Grid
    F: np.ndarray
    G: np.ndarray
    m0: np.ndarray
    c0: OuParams
    w: OuParams
    v: OuParams

    def __post_init__(self):
        p, d = len(self.state_grid), len(self.obs_grid)
        F = np.array(self.F, dtype=float, ndmin=2)
        G = np.array(self.G, dtype=float, ndmin=2)
        m0 = np.array(self.m0, dtype=float, ndmin=1)
        if F.shape != (d, p):
            raise DimensionMismatchError(f"F has shape {F.shape}, expected {(d, p)}")
        if G.shape != (p, p):
            raise DimensionMismatchError(f"G has shape {G.shape}, expected {(p, p)}")
        if m0.shape != (p,):
            raise DimensionMismatchError(f"m0 has shape {m0.shape}, expected {(p,)}")
        for name in ("c0", "w", "v"):
            if not isinstance(getattr(self, name), OuParams):
                raise ParameterDomainError(f"{name} must be OuParams")
        for name, arr in (("F", F), ("G", G), ("m0", m0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def state_dim(self):
        return len(self.state_grid)

    @property
    def obs_dim(self):
        return len(self.obs_grid)

    def matrices(self) -> ModelMatrices:
        return ModelMatrices(
            self.F,
            self.G,
            self.m0,
            gram_matrix(self.c0, self.state_grid),
            gram_matrix(self.w, self.state_grid),
            gram_matrix(self.v, self.obs_grid),
        )

    def replace(self, **changes) -> "FdlmSpec":
        return dataclasses.replace(self, **changes)


def as_matrices(model) -> ModelMatrices:
    if isinstance(model, ModelMatrices):
        return model
    if isinstance(model, FdlmSpec):
        return model.matrices()
    raise TypeError(f"expected FdlmSpec or ModelMatrices, got {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class FunctionalSeries:
    """T curves observed on a common grid; row t is curve t."""

    grid: Grid
    curves: np.ndarray
    time_labels: tuple | None = None

    def __post_init__(self):
        curves = np.array(self.curves, dtype=float, ndmin=2)
        if curves.ndim != 2 or curves.shape[1] != len(self.grid):
            raise DimensionMismatchError(
                f"curves have shape {curves.shape}, expected (T, {len(self.grid)})"
            )
        if not np.all(np.isfinite(curves)):
            raise ParameterDomainError("curves contain non-finite values")
        curves.setflags(write=False)
        object.__setattr__(self, "curves", curves)
        if self.time_labels is not None:
            labels = tuple(self.time_labels)
            if len(labels) != curves.shape[0]:
                raise DimensionMismatchError("one time label per curve is required")
            object.__setattr__(self, "time_labels", labels)

    def __len__(self):
        return self.curves.shape[0]


def local_level_spec(grid: Grid, c0: OuParams, w: OuParams, v: OuParams, m0=None) -> FdlmSpec:
    """Functional local level model: F = G = identity on a shared grid."""
    d = len(grid)
    m0 = np.zeros(d) if m0 is None else np.asarray(m0, dtype=float)
    if m0.shape != (d,):
        raise DimensionMismatchError(f"m0 has shape {m0.shape}, expected {(d,)}")
    eye = np.eye(d)
    return FdlmSpec(grid, grid, eye, eye, m0, c0, w, v)


@dataclass(frozen=True, eq=False)
class DyadicOperator:
    """Evaluation at ``k 2^-level``, k = 1..2^level, of curves on ``source_grid``.

    Every dyadic point must be an exact member of the source grid; nothing is
    interpolated here (see :func:`resample` for that).
    """

    level: int
    source_grid: Grid

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 1:
            raise ParameterDomainError(f"dyadic level must be an integer >= 1, got {self.level}")
        target = Grid.dyadic(self.level).points
        src = self.source_grid.points
        idx = np.searchsorted(src, target)
        ok = (idx < src.size) & (src[np.minimum(idx, src.size - 1)] == target)
        if not np.all(ok):
            missing = target[~ok]
            raise GridMismatchError(
                f"dyadic level {self.level} needs points not on the source grid: {missing[:5].tolist()}"
            )
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def grid(self) -> Grid:
        return Grid.dyadic(self.level)

    def __call__(self, y):
        return np.asarray(y)[..., self.indices]


def apply_dyadic(op: DyadicOperator, series: FunctionalSeries) -> FunctionalSeries:
    if series.grid != op.source_grid:
        raise GridMismatchError("series grid differs from the operator's source grid")
    return FunctionalSeries(op.grid, series.curves[:, op.indices], series.time_labels)


def discretize_spec(spec: FdlmSpec, op: DyadicOperator) -> FdlmSpec:
    """Model for the observations ``D_n(Y_t)``: rows of F restricted, V on the dyadic grid."""
    if spec.obs_grid != op.source_grid:
        raise GridMismatchError("spec observation grid differs from the operator's source grid")
    return spec.replace(obs_grid=op.grid, F=spec.F[op.indices])


def resample(series: FunctionalSeries, grid: Grid) -> FunctionalSeries:
    """Piecewise-linear interpolation of every curve onto ``grid``.

    Target points outside the source grid's range are held at the end values.
    """
    src = series.grid.points
    curves = np.vstack([np.interp(grid.points, src, row) for row in series.curves])
    return FunctionalSeries(grid, curves, series.time_labels)


def simulate(spec: FdlmSpec | ModelMatrices, T: int, seed=None, state_grid=None, obs_grid=None):
    """Draw ``(states, observations)``: states has T + 1 rows (X_0 first), observations T.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts. Raw
    :class:`ModelMatrices` need explicit grids for the returned series.
    """
    if T < 1:
        raise ParameterDomainError(f"T must be >= 1, got {T}")
    if isinstance(spec, FdlmSpec):
        state_grid, obs_grid = spec.state_grid, spec.obs_grid
    elif state_grid is None or obs_grid is None:
        raise ParameterDomainError("state_grid and obs_grid are required with raw matrices")
    mats = as_matrices(spec)
    rng = np.random.default_rng(seed)
    p, d = mats.state_dim, mats.obs_dim
    l0 = safe_cholesky(mats.C0).lower
    lw = safe_cholesky(mats.W).lower
    lv = safe_cholesky(mats.V).lower

    x = np.empty((T + 1, p))
    y = np.empty((T, d))
    x[0] = mats.m0 + l0 @ rng.standard_normal(p)
    for t in range(1, T + 1):
        x[t] = mats.G @ x[t - 1] + lw @ rng.standard_normal(p)
        y[t - 1] = mats.F @ x[t] + lv @ rng.standard_normal(d)
    return FunctionalSeries(state_grid, x), FunctionalSeries(obs_grid, y)
