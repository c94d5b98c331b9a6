"""
Posterior sampling for the OU covariance parameters of V and W.

One sweep of the sampler updates, in this order, the state trajectory by
FFBS, sigma2_V by its inverse-gamma full conditional, log beta_V by a random
walk Metropolis step, then sigma2_W and log beta_W the same way. Chain
diagnostics (Sokal's windowed integrated autocorrelation time, Monte Carlo
standard errors, quantiles) and pointwise posterior bands live here too.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ChainTooShortError,
    ConfigError,
    DegenerateChainError,
    FdlmError,
    MissingStateDrawsError,
    SamplerError,
    SingularOperatorError,
)
from .kalman import ffbs, kalman_filter
from .kernel import Grid, OuParams, chol_logdet, chol_whiten, ou_correlation_matrix, safe_cholesky
from .statespace import FdlmSpec, FunctionalSeries

__all__ = [
    "PARAM_NAMES",
    "PriorSpec",
    "SamplerConfig",
    "PosteriorDraws",
    "ParamSummary",
    "ChainSummary",
    "Bands",
    "sigma2_full_conditional",
    "gibbs_sigma2",
    "logbeta_log_target",
    "mh_logbeta",
    "run_sampler",
    "autocorrelation",
    "sokal_mcse",
    "summarize",
    "summarize_chains",
    "posterior_bands",
]

PARAM_NAMES = ("sigma2_v", "log_beta_v", "sigma2_w", "log_beta_w")
_LABELS = {
    "sigma2_v": "sigma2_V",
    "log_beta_v": "log beta_V",
    "sigma2_w": "sigma2_W",
    "log_beta_w": "log beta_W",
}
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Inverse-gamma priors on sigma2_V, sigma2_W and normal priors on log beta_V, log beta_W."""

    ig_shape_v: float = 2.0
    ig_rate_v: float = 1e-4
    ig_shape_w: float = 2.0
    ig_rate_w: float = 1e-4
    logbeta_mean_v: float = 0.0
    logbeta_sd_v: float = 10.0
    logbeta_mean_w: float = 0.0
    logbeta_sd_w: float = 10.0

    def __post_init__(self):
        for name in ("ig_shape_v", "ig_rate_v", "ig_shape_w", "ig_rate_w", "logbeta_sd_v", "logbeta_sd_w"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"prior.{name}", f"must be finite and > 0, got {value!r}")
        for name in ("logbeta_mean_v", "logbeta_mean_w"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"prior.{name}", "must be finite")


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 10_000
    burn_in: int = 2_000
    thin: int = 1
    mh_step_v: float = 0.1
    mh_step_w: float = 0.1
    seed: int = 0
    save_states: bool = False
    estimate_v: bool = True
    estimate_w: bool = True

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigError("sampler.burn_in", f"must be >= 0, got {self.burn_in}")
        if self.iterations <= self.burn_in:
            raise ConfigError(
                "sampler.iterations",
                f"must exceed burn_in ({self.iterations} <= {self.burn_in}); no draws would be kept",
            )
        if self.thin < 1:
            raise ConfigError("sampler.thin", f"must be >= 1, got {self.thin}")
        for name in ("mh_step_v", "mh_step_w"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"sampler.{name}", f"must be finite and > 0, got {value!r}")

    @property
    def kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Kept draws, one row per kept iteration, columns as in :data:`PARAM_NAMES`."""

    draws: np.ndarray
    acceptance_rates: Tuple[float, float]
    iterations: np.ndarray
    state_draws: Optional[np.ndarray] = None

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, PARAM_NAMES.index(name)]

    def __len__(self):
        return self.draws.shape[0]


# -- conjugate variance update -------------------------------------------------


def _ou_quadratic(residuals, beta, points):
    """``(sum_t e_t^T K^-1 e_t, log det K)`` for the unit-scale OU correlation K(beta)."""
    K = ou_correlation_matrix(beta, points)
    L = safe_cholesky(K).lower
    if residuals.shape[0] == 0:
        return 0.0, chol_logdet(L)
    Z = chol_whiten(L, np.ascontiguousarray(residuals.T))
    return float(np.sum(Z * Z)), chol_logdet(L)


def _as_residuals(residuals, grid):
    e = np.asarray(residuals, dtype=float)
    if e.ndim == 1:
        e = e.reshape(-1, len(grid)) if e.size else np.zeros((0, len(grid)))
    if e.shape[1] != len(grid):
        raise ValueError(f"residuals have {e.shape[1]} columns, grid has {len(grid)} points")
    return e


def sigma2_full_conditional(residuals, beta: float, grid: Grid, shape: float, rate: float):
    """Inverse-gamma ``(shape, rate)`` of sigma2 given OU residuals with known beta.

    With covariance ``sigma2 / (2 beta) K(beta)`` the likelihood of T residual
    curves is proportional to ``sigma2^(-T d / 2) exp(-beta q / sigma2)`` where
    ``q = sum_t e_t^T K^-1 e_t``, hence
    ``IG(shape + T d / 2, rate + beta q)``.
    """
    e = _as_residuals(residuals, grid)
    q, _ = _ou_quadratic(e, beta, grid.points)
    return shape + 0.5 * e.size, rate + beta * q


def gibbs_sigma2(residuals, beta: float, grid: Grid, shape: float, rate: float, seed=None) -> float:
    rng = np.random.default_rng(seed)
    a, b = sigma2_full_conditional(residuals, beta, grid, shape, rate)
    return b / rng.gamma(a)


# -- Metropolis step on log beta -----------------------------------------------


def logbeta_log_target(log_beta, sigma2, residuals, grid: Grid, prior_mean, prior_sd) -> float:
    """Log likelihood of the residuals under ``OuParams(sigma2, exp(log_beta))`` plus the log prior.

    Constants not depending on ``log_beta`` are kept so that the value is a
    proper log density in the residuals.
    """
    e = _as_residuals(residuals, grid)
    beta = math.exp(log_beta)
    T, d = e.shape
    scale = sigma2 / (2.0 * beta)
    q, logdet_k = _ou_quadratic(e, beta, grid.points)
    loglik = -0.5 * (T * d * (_LOG_2PI + math.log(scale)) + T * logdet_k + q / scale)
    z = (log_beta - prior_mean) / prior_sd
    logprior = -0.5 * z * z - math.log(prior_sd) - 0.5 * _LOG_2PI
    return loglik + logprior


def _random_walk(step):
    def propose(current, rng):
        return current + step * rng.standard_normal()

    return propose


def mh_logbeta(
    current_logbeta: float,
    sigma2: float,
    residuals,
    grid: Grid,
    prior_mean: float,
    prior_sd: float,
    step: float,
    seed=None,
    propose: Optional[Callable[[float, np.random.Generator], float]] = None,
    current_log_target: Optional[float] = None,
):
    """One Metropolis-Hastings update of log beta; returns ``(log_beta, accepted)``.

    The default proposal is a Gaussian random walk with sd ``step``. A custom
    ``propose(current, rng)`` must be symmetric. A proposal whose Gram matrix
    cannot be factorized is rejected.
    """
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    rng = np.random.default_rng(seed)
    propose = propose or _random_walk(step)
    e = _as_residuals(residuals, grid)
    if current_log_target is None:
        current_log_target = logbeta_log_target(current_logbeta, sigma2, e, grid, prior_mean, prior_sd)
    proposal = float(propose(current_logbeta, rng))
    log_u = math.log(rng.uniform())
    try:
        if not math.isfinite(proposal) or abs(proposal) > 700:
            raise SingularOperatorError("proposal outside representable range")
        new_target = logbeta_log_target(proposal, sigma2, e, grid, prior_mean, prior_sd)
    except (SingularOperatorError, FloatingPointError, OverflowError):
        return current_logbeta, False
    if math.isfinite(new_target) and log_u < new_target - current_log_target:
        return proposal, True
    return current_logbeta, False


# -- the sampler -----------------------------------------------------------------


def run_sampler(
    template: FdlmSpec,
    data: FunctionalSeries,
    prior: PriorSpec = PriorSpec(),
    cfg: SamplerConfig = SamplerConfig(),
    progress: Optional[Callable[[int], None]] = None,
) -> PosteriorDraws:
    """Metropolis-within-Gibbs sampler for ``(sigma2_V, beta_V, sigma2_W, beta_W)``.

    ``template`` fixes grids, F, G, m0 and C0; its ``v`` and ``w`` are the
    starting values (and stay fixed when ``cfg.estimate_v`` /
    ``cfg.estimate_w`` is off).
    """
    if not isinstance(cfg, SamplerConfig):
        raise TypeError("cfg must be a SamplerConfig")
    y = data.curves if isinstance(data, FunctionalSeries) else np.asarray(data, dtype=float)
    if isinstance(data, FunctionalSeries) and data.grid != template.obs_grid:
        raise ConfigError("data", "grid differs from the model's observation grid")
    if y.ndim != 2 or y.shape[0] < 1:
        raise ConfigError("data", "at least one observed curve is required")

    rng = np.random.default_rng(cfg.seed)
    F, G = template.F, template.G
    obs_grid, state_grid = template.obs_grid, template.state_grid
    s2v, lbv = template.v.sigma2, template.v.log_beta
    s2w, lbw = template.w.sigma2, template.w.log_beta

    T, p = y.shape[0], template.state_dim
    n_keep = cfg.kept
    out = np.empty((n_keep, 4))
    kept_iter = np.empty(n_keep, dtype=np.int64)
    states = np.empty((n_keep, T + 1, p)) if cfg.save_states else None
    accepted = np.zeros(2, dtype=np.int64)
    k = 0

    for it in range(cfg.iterations):
        step = "ffbs"
        try:
            spec = template.replace(v=OuParams.from_log_beta(s2v, lbv), w=OuParams.from_log_beta(s2w, lbw))
            x = ffbs(kalman_filter(spec, y), rng)

            if cfg.estimate_v:
                e_v = y - x[1:] @ F.T
                step = "sigma2_v"
                s2v = gibbs_sigma2(e_v, math.exp(lbv), obs_grid, prior.ig_shape_v, prior.ig_rate_v, rng)
                step = "log_beta_v"
                lbv, ok = mh_logbeta(
                    lbv, s2v, e_v, obs_grid, prior.logbeta_mean_v, prior.logbeta_sd_v, cfg.mh_step_v, rng
                )
                accepted[0] += ok
            if cfg.estimate_w:
                e_w = x[1:] - x[:-1] @ G.T
                step = "sigma2_w"
                s2w = gibbs_sigma2(e_w, math.exp(lbw), state_grid, prior.ig_shape_w, prior.ig_rate_w, rng)
                step = "log_beta_w"
                lbw, ok = mh_logbeta(
                    lbw, s2w, e_w, state_grid, prior.logbeta_mean_w, prior.logbeta_sd_w, cfg.mh_step_w, rng
                )
                accepted[1] += ok
        except FdlmError as exc:
            raise SamplerError(it, step, exc) from exc

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            out[k] = (s2v, lbv, s2w, lbw)
            kept_iter[k] = it + 1
            if states is not None:
                states[k] = x
            k += 1
        if progress is not None:
            progress(it + 1)

    rates = tuple(
        float(accepted[i] / cfg.iterations) if flag else float("nan")
        for i, flag in enumerate((cfg.estimate_v, cfg.estimate_w))
    )
    return PosteriorDraws(out, rates, kept_iter, states)


# -- diagnostics -----------------------------------------------------------------


def autocorrelation(chain) -> np.ndarray:
    """Normalized sample autocorrelation at lags 0..N-1 (FFT, biased estimator)."""
    x = np.asarray(chain, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[:n]
    if acov[0] <= 0:
        raise DegenerateChainError("chain has zero variance")
    return acov / acov[0]


def sokal_mcse(chain, window_constant: float = 6.0, min_length: int = 100):
    """Monte Carlo standard error of the chain mean and the integrated autocorrelation time.

    ``tau = 1 + 2 sum_{k=1}^{M} rho_k`` with the smallest window ``M`` such
    that ``M >= c tau(M)``; ``mcse = sd * sqrt(tau / N)``.
    """
    x = np.asarray(chain, dtype=float).reshape(-1)
    n = x.size
    if n < min_length:
        raise ChainTooShortError(f"chain has {n} draws, at least {min_length} required")
    if np.ptp(x) == 0:
        raise DegenerateChainError("chain is constant")
    rho = autocorrelation(x)
    taus = 1.0 + 2.0 * np.cumsum(rho[1:])
    lags = np.arange(1, n)
    ok = np.flatnonzero(lags >= window_constant * taus)
    m = int(ok[0]) if ok.size else n - 2
    tau = float(taus[m])
    tau = max(tau, 1.0 / n)
    sd = float(np.std(x, ddof=1))
    return sd * math.sqrt(tau / n), tau


class ParamSummary(NamedTuple):
    mean: float
    mcse: float
    tau_int: float
    q05: float
    q95: float
    degenerate: bool = False


@dataclass(frozen=True)
class ChainSummary:
    params: Dict[str, ParamSummary]
    n_draws: int
    acceptance_rates: Tuple[float, float] = (float("nan"), float("nan"))

    def to_dict(self):
        return {
            "n_draws": self.n_draws,
            "acceptance_rates": {"log_beta_v": self.acceptance_rates[0], "log_beta_w": self.acceptance_rates[1]},
            "parameters": {k: v._asdict() for k, v in self.params.items()},
        }

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.to_dict()), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Three rows per parameter column: estimate, MCSE, 90% interval."""
        names = list(self.params)
        cols = [_LABELS.get(n, n) for n in names]
        rows = [
            ("estimate", [_fmt(self.params[n].mean) for n in names]),
            ("MCSE", [_fmt(self.params[n].mcse) for n in names]),
            ("90% interval", [_fmt_interval(self.params[n].q05, self.params[n].q95) for n in names]),
        ]
        width0 = max(len(r[0]) for r in rows)
        widths = [max(len(c), *(len(r[1][i]) for r in rows)) for i, c in enumerate(cols)]
        lines = [
            " " * width0 + "  " + "  ".join(c.rjust(w) for c, w in zip(cols, widths)),
        ]
        rule = "=" * len(lines[0])
        for label, vals in rows:
            lines.append(label.ljust(width0) + "  " + "  ".join(v.rjust(w) for v, w in zip(vals, widths)))
        return "\n".join([rule, lines[0], "-" * len(rule), *lines[1:], rule])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _fmt(x):
    if not math.isfinite(x):
        return "nan"
    if x != 0 and (abs(x) < 1e-2 or abs(x) >= 1e4):
        return f"{x:.2e}"
    return f"{x:.2f}"


def _fmt_interval(lo, hi):
    big = max(abs(lo), abs(hi))
    if big != 0 and (big < 1e-2 or big >= 1e4):
        exp = int(math.floor(math.log10(big)))
        s = 10.0**exp
        return f"({lo / s:.2f}, {hi / s:.2f})e{exp:+03d}"
    return f"({lo:.2f}, {hi:.2f})"


def _summarize_column(x) -> ParamSummary:
    x = np.asarray(x, dtype=float)
    q05, q95 = np.quantile(x, [0.05, 0.95])
    mean = float(np.mean(x))
    try:
        mcse, tau = sokal_mcse(x)
        degenerate = False
    except DegenerateChainError:
        mcse, tau, degenerate = 0.0, float("nan"), True
    except ChainTooShortError:
        mcse, tau, degenerate = float("nan"), float("nan"), False
    return ParamSummary(mean, mcse, tau, float(q05), float(q95), degenerate)


def summarize(draws: PosteriorDraws) -> ChainSummary:
    """Posterior mean, Sokal MCSE, autocorrelation time and 5%/95% quantiles per parameter.

    beta parameters are summarized on the log scale.
    """
    if len(draws) == 0:
        raise ValueError("no draws to summarize")
    params = {name: _summarize_column(draws.draws[:, i]) for i, name in enumerate(PARAM_NAMES)}
    return ChainSummary(params, len(draws), tuple(draws.acceptance_rates))


def summarize_chains(chains: Sequence[PosteriorDraws]) -> ChainSummary:
    """Pooled summary of independent chains.

    Means and quantiles use the pooled draws; the MCSE of the pooled mean
    combines the per-chain MCSEs, weighting each chain by its length.
    """
    chains = list(chains)
    if len(chains) == 1:
        return summarize(chains[0])
    if not chains or any(len(c) == 0 for c in chains):
        raise ValueError("no draws to summarize")
    pooled = np.vstack([c.draws for c in chains])
    sizes = np.array([len(c) for c in chains], dtype=float)
    w = sizes / sizes.sum()
    params = {}
    for i, name in enumerate(PARAM_NAMES):
        base = _summarize_column(pooled[:, i])
        per = [_summarize_column(c.draws[:, i]) for c in chains]
        mcse = float(math.sqrt(sum((wk * s.mcse) ** 2 for wk, s in zip(w, per))))
        tau = float(sum(wk * s.tau_int for wk, s in zip(w, per)))
        params[name] = base._replace(mcse=mcse, tau_int=tau, degenerate=all(s.degenerate for s in per))
    rates = tuple(float(np.mean([c.acceptance_rates[j] for c in chains])) for j in range(2))
    return ChainSummary(params, int(sizes.sum()), rates)


# -- bands -----------------------------------------------------------------------


class Bands(NamedTuple):
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray


def posterior_bands(state_draws, level: float = 0.9) -> Bands:
    """Pointwise equal-tailed bands of state draws shaped (draws, T + 1, p)."""
    if state_draws is None:
        raise MissingStateDrawsError("no state draws; rerun the sampler with save_states enabled")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    s = np.asarray(state_draws)
    if s.ndim != 3 or s.shape[0] == 0:
        raise MissingStateDrawsError("state draws must be a nonempty (draws, T + 1, p) array")
    alpha = 0.5 * (1.0 - level)
    lower = np.empty(s.shape[1:])
    median = np.empty(s.shape[1:])
    upper = np.empty(s.shape[1:])
    # chunk over time to bound the temporary copies np.quantile makes
    chunk = max(1, 2_000_000 // max(1, s.shape[0] * s.shape[2]))
    for t0 in range(0, s.shape[1], chunk):
        sl = slice(t0, t0 + chunk)
        q = np.quantile(s[:, sl, :], [alpha, 0.5, 1.0 - alpha], axis=0)
        lower[sl], median[sl], upper[sl] = q
    return Bands(lower, median, upper)
