"""
Brute-force ground truth for small models.

The joint law of (X_0, ..., X_T, Y_1, ..., Y_T) is written down directly as a
linear map of independent Gaussian blocks and conditioned with plain
Schur-complement algebra. Nothing here shares code with :mod:`fdlm.kalman`
beyond the Cholesky helper, so agreement between the two is a real check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import SizeGuardError
from .kernel import chol_logdet, chol_solve, chol_whiten, safe_cholesky
from .statespace import FdlmSpec, ModelMatrices, as_matrices

__all__ = ["JointGaussian", "build_joint", "condition", "MAX_JOINT_DIM"]

MAX_JOINT_DIM = 200

Label = Tuple[str, int, int]  # (kind "x" | "y", time, grid index)


@dataclass(frozen=True, eq=False)
class JointGaussian:
    mean: np.ndarray
    cov: np.ndarray
    labels: Dict[Label, int]

    def __post_init__(self):
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError("mean and covariance sizes differ")
        if sorted(self.labels.values()) != list(range(n)):
            raise ValueError("labels must be a bijection onto 0..N-1")

    @property
    def dim(self):
        return self.mean.shape[0]

    def index(self, keys: Sequence[Label]) -> np.ndarray:
        return np.array([self.labels[k] for k in keys], dtype=int)

    def block(self, kind: str, t: int) -> np.ndarray:
        """Coordinates of the whole vector X_t (kind "x") or Y_t (kind "y")."""
        keys = sorted(k for k in self.labels if k[0] == kind and k[1] == t)
        return self.index(keys)

    def marginal(self, idx) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx, dtype=int)
        return self.mean[idx], self.cov[np.ix_(idx, idx)]

    def log_density(self, idx, values) -> float:
        mu, S = self.marginal(idx)
        L = safe_cholesky(S).lower
        z = chol_whiten(L, np.asarray(values, dtype=float) - mu)
        return -0.5 * (mu.size * math.log(2 * math.pi) + chol_logdet(L) + float(z @ z))


def build_joint(model: FdlmSpec | ModelMatrices, T: int) -> JointGaussian:
    """Exact joint law of (X_0..X_T, Y_1..Y_T), stacked in that order.

    The stacked vector equals ``A z + b`` where ``z`` collects the independent
    blocks (X_0 - m0, w_1..w_T, v_1..v_T); its covariance is ``A Sz A^T``.
    """
    mats = as_matrices(model)
    p, d = mats.state_dim, mats.obs_dim
    if T < 1:
        raise ValueError("T must be >= 1")
    n = (T + 1) * p + T * d
    if T * (p + d) > MAX_JOINT_DIM:
        raise SizeGuardError(f"T*(p+d) = {T * (p + d)} exceeds the oracle limit {MAX_JOINT_DIM}")

    nz = (T + 1) * p + T * d
    A = np.zeros((n, nz))
    Sz = np.zeros((nz, nz))
    b = np.zeros(n)

    def xs(t):
        return slice(t * p, (t + 1) * p)

    def ys(t):
        off = (T + 1) * p
        return slice(off + (t - 1) * d, off + t * d)

    # z blocks: index 0 -> X_0 deviation, 1..T -> w_t, then v_1..v_T
    Sz[xs(0), xs(0)] = mats.C0
    for t in range(1, T + 1):
        Sz[xs(t), xs(t)] = mats.W
        Sz[ys(t), ys(t)] = mats.V

    # X_t = G^t m0 + sum_{s<=t} G^{t-s} z_s
    powers = [np.eye(p)]
    for _ in range(T):
        powers.append(mats.G @ powers[-1])
    for t in range(T + 1):
        b[xs(t)] = powers[t] @ mats.m0
        for s in range(t + 1):
            A[xs(t), xs(s)] = powers[t - s]
    for t in range(1, T + 1):
        b[ys(t)] = mats.F @ b[xs(t)]
        A[ys(t), :] = mats.F @ A[xs(t), :]
        A[ys(t), ys(t)] += np.eye(d)

    cov = A @ Sz @ A.T
    cov = 0.5 * (cov + cov.T)
    labels = {}
    for t in range(T + 1):
        for i in range(p):
            labels[("x", t, i)] = t * p + i
    for t in range(1, T + 1):
        for j in range(d):
            labels[("y", t, j)] = (T + 1) * p + (t - 1) * d + j
    return JointGaussian(b, cov, labels)


def condition(jg: JointGaussian, observed, values) -> JointGaussian:
    """Law of the unobserved coordinates given ``observed = values``.

    ``observed`` holds labels or integer coordinates. The result keeps the
    labels of the remaining coordinates, re-indexed in their original order.
    """
    observed = list(observed)
    if not observed:
        return jg
    idx_o = np.array(
        [jg.labels[k] if isinstance(k, tuple) else int(k) for k in observed], dtype=int
    )
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != idx_o.size:
        raise ValueError("one value per observed coordinate is required")
    mask = np.ones(jg.dim, dtype=bool)
    mask[idx_o] = False
    idx_u = np.flatnonzero(mask)

    if idx_u.size == 0:
        return JointGaussian(np.zeros(0), np.zeros((0, 0)), {})
    S_oo = jg.cov[np.ix_(idx_o, idx_o)]
    S_uo = jg.cov[np.ix_(idx_u, idx_o)]
    S_uu = jg.cov[np.ix_(idx_u, idx_u)]
    L = safe_cholesky(S_oo).lower
    gain = chol_solve(L, S_uo.T).T  # S_uo S_oo^-1
    mean = jg.mean[idx_u] + gain @ (values - jg.mean[idx_o])
    cov = S_uu - gain @ S_uo.T
    cov = 0.5 * (cov + cov.T)

    new_pos = {old: new for new, old in enumerate(idx_u.tolist())}
    labels = {k: new_pos[i] for k, i in jg.labels.items() if i in new_pos}
    return JointGaussian(mean, cov, labels)
