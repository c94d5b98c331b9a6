"""
Ornstein-Uhlenbeck covariance kernel on [0, 1] and the linear algebra built on it.

A covariance operator of a C([0,1])-valued Gaussian variable is represented
here only through its restrictions to finitely many point evaluations: the
Gram matrix on a grid, and the bilinear form on finite signed point-mass
measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol, Sequence

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs, dtrtrs

from .errors import ParameterDomainError, SingularOperatorError

__all__ = [
    "OuParams",
    "Grid",
    "DiscreteMeasure",
    "CovarianceKernel",
    "ou_kernel",
    "ou_correlation_matrix",
    "gram_matrix",
    "covariance_functional",
    "JITTER_LADDER",
    "CholeskyFactor",
    "safe_cholesky",
    "chol_solve",
    "chol_whiten",
    "chol_logdet",
]

# Relative to the mean diagonal of the matrix being factorized.
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class OuParams:
    """Scale ``sigma2`` and inverse length-scale ``beta`` of an OU kernel.

    The stationary variance is ``sigma2 / (2 * beta)``.
    """

    sigma2: float
    beta: float

    def __post_init__(self):
        for name in ("sigma2", "beta"):
            value = getattr(self, name)
            try:
                ok = math.isfinite(value) and value > 0
            except TypeError:
                ok = False
            if not ok:
                raise ParameterDomainError(f"OuParams.{name} must be finite and > 0, got {value!r}")
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def from_log_beta(cls, sigma2, log_beta):
        return cls(sigma2, math.exp(log_beta))

    @property
    def log_beta(self):
        return math.log(self.beta)

    @property
    def variance(self):
        return self.sigma2 / (2.0 * self.beta)

    def __call__(self, u, v):
        return ou_kernel(self, u, v)

    def gram(self, grid):
        return gram_matrix(self, grid)


class CovarianceKernel(Protocol):
    """Anything that can evaluate a covariance function and build Gram matrices."""

    def __call__(self, u: float, v: float) -> float: ...

    def gram(self, grid: "Grid") -> np.ndarray: ...


class Grid:
    """Strictly increasing evaluation points in [0, 1].

    The points are stored as a read-only float array; two grids compare equal
    when their points are identical bit for bit.
    """

    __slots__ = ("_points",)

    def __init__(self, points: Sequence[float] | np.ndarray):
        pts = np.array(points, dtype=float).reshape(-1)
        if pts.size < 1:
            raise ParameterDomainError("Grid needs at least one point")
        if not np.all(np.isfinite(pts)) or pts[0] < 0.0 or pts[-1] > 1.0:
            raise ParameterDomainError("Grid points must lie in [0, 1]")
        if np.any(np.diff(pts) <= 0):
            raise ParameterDomainError("Grid points must be strictly increasing")
        pts.setflags(write=False)
        self._points = pts

    @classmethod
    def uniform(cls, d: int) -> "Grid":
        """Grid ``t_j = (j - 1) / (d - 1)``, j = 1..d, endpoints included.

        A single point grid is ``{0}``.
        """
        if d < 1:
            raise ParameterDomainError(f"grid size must be >= 1, got {d}")
        if d == 1:
            return cls([0.0])
        return cls(np.arange(d) / (d - 1))

    @classmethod
    def dyadic(cls, level: int) -> "Grid":
        """Grid ``k 2^-n``, k = 1..2^n."""
        if level < 1:
            raise ParameterDomainError(f"dyadic level must be >= 1, got {level}")
        n = 2**level
        return cls(np.arange(1, n + 1) / n)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self):
        return self._points.size

    def __iter__(self):
        return iter(self._points.tolist())

    def __getitem__(self, i):
        return self._points[i]

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return np.array_equal(self._points, other._points)

    def __hash__(self):
        return hash(self._points.tobytes())

    def __repr__(self):
        return f"Grid(d={len(self)}, [{self._points[0]:g} .. {self._points[-1]:g}])"


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite signed measure ``sum_i w_i * delta_{x_i}`` on [0, 1]."""

    locations: tuple
    weights: tuple

    def __init__(self, atoms=()):
        locs, wts = [], []
        for loc, w in atoms:
            loc, w = float(loc), float(w)
            if not (0.0 <= loc <= 1.0):
                raise ParameterDomainError(f"atom location {loc} outside [0, 1]")
            if not math.isfinite(w):
                raise ParameterDomainError(f"atom weight {w} is not finite")
            locs.append(loc)
            wts.append(w)
        object.__setattr__(self, "locations", tuple(locs))
        object.__setattr__(self, "weights", tuple(wts))

    @classmethod
    def point_mass(cls, location, weight=1.0):
        return cls([(location, weight)])

    @classmethod
    def on_grid(cls, grid: Grid, weights):
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(grid),):
            raise ParameterDomainError("one weight per grid point is required")
        return cls(zip(grid.points.tolist(), weights.tolist()))

    def __sub__(self, other):
        return DiscreteMeasure(
            list(zip(self.locations, self.weights))
            + [(x, -w) for x, w in zip(other.locations, other.weights)]
        )

    def __add__(self, other):
        return DiscreteMeasure(
            list(zip(self.locations, self.weights)) + list(zip(other.locations, other.weights))
        )


def ou_kernel(p: OuParams, u: float, v: float) -> float:
    """``sigma2 / (2 beta) * exp(-beta |u - v|)``."""
    for name, x in (("u", u), ("v", v)):
        if not (0.0 <= x <= 1.0):
            raise ParameterDomainError(f"{name}={x} outside [0, 1]")
    return p.sigma2 / (2.0 * p.beta) * math.exp(-p.beta * abs(u - v))


def ou_correlation_matrix(beta: float, points) -> np.ndarray:
    """Unit-scale matrix ``exp(-beta |u_i - u_j|)``; the Gram matrix is this times the variance."""
    pts = np.asarray(points, dtype=float)
    return np.exp(-beta * np.abs(pts[:, None] - pts[None, :]))


def gram_matrix(p: OuParams, g: Grid) -> np.ndarray:
    return p.variance * ou_correlation_matrix(p.beta, g.points)


def covariance_functional(p: OuParams, eta: DiscreteMeasure, tau: DiscreteMeasure) -> float:
    """Bilinear form ``sum_i sum_j w_i v_j gamma(u_i, u_j)`` of two point-mass measures."""
    if not eta.weights or not tau.weights:
        return 0.0
    u = np.asarray(eta.locations)
    v = np.asarray(tau.locations)
    k = p.variance * np.exp(-p.beta * np.abs(u[:, None] - v[None, :]))
    return float(np.asarray(eta.weights) @ k @ np.asarray(tau.weights))


class CholeskyFactor(NamedTuple):
    lower: np.ndarray
    jitter: float


def safe_cholesky(m, ladder=JITTER_LADDER) -> CholeskyFactor:
    """Lower Cholesky factor of ``m + eps I`` for the first ``eps`` on the ladder that works.

    ``eps`` is the ladder entry times the mean diagonal of ``m``. The applied
    (absolute) jitter is returned with the factor.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ParameterDomainError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SingularOperatorError("matrix has non-finite entries")
    n = m.shape[0]
    scale = float(np.trace(m)) / n
    if scale <= 0.0:
        scale = 1.0
    for rel in ladder:
        eps = rel * scale
        target = m + eps * np.eye(n) if eps else m
        lower, info = dpotrf(target, lower=1, clean=1)
        if info == 0:
            return CholeskyFactor(lower, eps)
    raise SingularOperatorError(
        f"Cholesky failed at maximum jitter {ladder[-1]:g} x mean diagonal ({scale:g})"
    )


def chol_solve(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b`` given the lower factor ``L``."""
    x, info = dpotrs(lower, b, lower=1)
    if info != 0:
        raise SingularOperatorError(f"triangular solve failed (info={info})")
    return x


def chol_whiten(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``L^-1 b``."""
    x, info = dtrtrs(lower, b, lower=1)
    if info != 0:
        raise SingularOperatorError(f"triangular solve failed (info={info})")
    return x


def chol_logdet(lower: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(lower))))
