"""
Executable correctness checks.

Each check returns a :class:`CheckResult`. They back both the ``verify``
subcommand and the acceptance test module, so the criteria are runnable on an
installed package without the test suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
from scipy import integrate, stats
from scipy.signal import lfilter

from .kalman import ffbs, forecast, kalman_filter, smooth
from .kernel import Grid, OuParams, gram_matrix
from .mcmc import (
    PosteriorDraws,
    PriorSpec,
    SamplerConfig,
    posterior_bands,
    run_sampler,
    sigma2_full_conditional,
    sokal_mcse,
)
from .oracle import build_joint, condition
from .statespace import (
    DyadicOperator,
    FunctionalSeries,
    ModelMatrices,
    apply_dyadic,
    discretize_spec,
    local_level_spec,
    simulate,
)

__all__ = [
    "CheckResult",
    "REFERENCE_TRUTH",
    "random_model",
    "oracle_moments",
    "check_oracle_equivalence",
    "check_scalar_example",
    "check_discretization_monotonicity",
    "check_ffbs",
    "check_conjugate_update",
    "check_sokal",
    "RecoveryRun",
    "recovery_run",
    "check_parameter_recovery",
    "check_band_coverage",
    "FAST_CHECKS",
    "run_checks",
]

# sigma2_V, log beta_V, sigma2_W, log beta_W: published posterior means for hourly
# electricity demand on the log scale, used here as simulation truth.
REFERENCE_TRUTH = (2.76e-4, -2.83, 2.14e-4, -3.23)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


# -- 1. oracle equivalence -------------------------------------------------------


def _random_pd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T / n + 0.2 * np.eye(n)


def random_model(rng, p, d) -> ModelMatrices:
    """Random small model with O(1) entries; half the draws use OU Gram matrices."""
    if rng.uniform() < 0.5:
        return ModelMatrices.from_arrays(
            rng.normal(size=(d, p)),
            rng.normal(size=(p, p)) / math.sqrt(p),
            rng.normal(size=p),
            _random_pd(rng, p),
            _random_pd(rng, p),
            _random_pd(rng, d),
        )
    sg, og = Grid(np.sort(rng.choice(np.arange(11) / 10, p, replace=False))), Grid(
        np.sort(rng.choice(np.arange(11) / 10, d, replace=False))
    )

    def ou():
        return OuParams(rng.uniform(0.2, 3.0), rng.uniform(0.2, 5.0))

    return ModelMatrices.from_arrays(
        rng.normal(size=(d, p)),
        rng.normal(size=(p, p)) / math.sqrt(p),
        rng.normal(size=p),
        gram_matrix(ou(), sg),
        gram_matrix(ou(), sg),
        gram_matrix(ou(), og),
    )


def oracle_moments(mats: ModelMatrices, y: np.ndarray, horizon: int = 2):
    """Filter, smoother, forecast and log-likelihood values from joint-Gaussian conditioning."""
    T, d = y.shape
    jg = build_joint(mats, T + horizon)
    obs = lambda t: [("y", t, j) for j in range(d)]  # noqa: E731
    res = {"filter": [], "smooth": [], "forecast": []}
    for t in range(1, T + 1):
        past = [k for s in range(1, t) for k in obs(s)]
        c_prev = condition(jg, past, y[: t - 1].reshape(-1))
        a, R = c_prev.marginal(c_prev.block("x", t))
        f, Q = c_prev.marginal(c_prev.block("y", t))
        c_now = condition(jg, past + obs(t), y[:t].reshape(-1))
        m, C = c_now.marginal(c_now.block("x", t))
        res["filter"].append((a, R, f, Q, m, C))
    all_obs = [k for s in range(1, T + 1) for k in obs(s)]
    c_all = condition(jg, all_obs, y.reshape(-1))
    for t in range(T + 1):
        res["smooth"].append(c_all.marginal(c_all.block("x", t)))
    for k in range(1, horizon + 1):
        res["forecast"].append(c_all.marginal(c_all.block("y", T + k)))
    res["loglik"] = jg.log_density(jg.index(all_obs), y.reshape(-1))
    return res


def _max_error(mats, y, horizon=2):
    ref = oracle_moments(mats, y, horizon)
    fo = kalman_filter(mats, y)
    err = 0.0
    for step, want in zip(fo.steps, ref["filter"]):
        for got, exp in zip(step[:6], want):
            err = max(err, float(np.max(np.abs(got - exp))))
    for got, exp in zip(smooth(fo), ref["smooth"]):
        err = max(err, float(np.max(np.abs(got.s - exp[0]))), float(np.max(np.abs(got.S - exp[1]))))
    for got, exp in zip(forecast(mats, fo.steps[-1], horizon), ref["forecast"]):
        err = max(err, float(np.max(np.abs(got[0] - exp[0]))), float(np.max(np.abs(got[1] - exp[1]))))
    err = max(err, abs(fo.loglik - ref["loglik"]))
    return err


def check_oracle_equivalence(n_instances=100, seed=0, tol=1e-8, max_seconds=10.0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        t0 = time.perf_counter()
        for _ in range(n_instances):
            T, p, d = (int(v) for v in rng.integers(1, 4, size=3))
            mats = random_model(rng, p, d)
            _, y = simulate(mats, T, rng, state_grid=Grid.uniform(p), obs_grid=Grid.uniform(d))
            worst = max(worst, _max_error(mats, y.curves))
        elapsed = time.perf_counter() - t0
        ok = worst <= tol and elapsed < max_seconds
        return ok, f"{n_instances} instances, max abs error {worst:.2e} (tol {tol:g}), {elapsed:.1f}s (< {max_seconds:g}s)"

    return _timed("oracle equivalence", run)


# -- 2. scalar hand example ------------------------------------------------------


def check_scalar_example(tol=1e-12) -> CheckResult:
    def run():
        mats = ModelMatrices.from_arrays(1.0, 1.0, 0.0, 1.0, 1.0, 1.0)
        step = kalman_filter(mats, [[2.0]]).steps[0]
        em = abs(step.m[0] - 4.0 / 3.0)
        ec = abs(step.C[0, 0] - 2.0 / 3.0)
        return max(em, ec) <= tol, f"m1={float(step.m[0])!r}, C1={float(step.C[0, 0])!r}, max error {max(em, ec):.1e}"

    return _timed("scalar local level example", run)


# -- 3. discretization monotonicity ----------------------------------------------


def smooth_test_curves(grid: Grid, T: int) -> FunctionalSeries:
    u = grid.points
    curves = [np.sin(2 * np.pi * u + 0.3 * t) + 0.5 * np.cos(np.pi * u) * t / T for t in range(1, T + 1)]
    return FunctionalSeries(grid, np.array(curves))


def check_discretization_monotonicity(
    d=33, levels=range(1, 6), T=10, n_probes=50, tol=1e-8, seed=0, max_seconds=30.0
) -> CheckResult:
    """Posterior covariance shrinks (Loewner) and mean increments shrink as the dyadic level grows.

    The mean-increment tail is levels 2..5, i.e. the last three increments.
    """

    def run():
        t0 = time.perf_counter()
        grid = Grid.uniform(d)
        spec = local_level_spec(grid, OuParams(2.0, 1.0), OuParams(0.01, 1.0), OuParams(1e-4, 1.0))
        y = smooth_test_curves(grid, T)
        rng = np.random.default_rng(seed)
        probes = np.vstack([np.eye(d), rng.normal(size=(n_probes, d))])
        means, quads = [], []
        for n in levels:
            op = DyadicOperator(n, grid)
            fo = kalman_filter(discretize_spec(spec, op), apply_dyadic(op, y))
            means.append(fo.stacked("m"))
            quads.append(np.einsum("ki,tij,kj->tk", probes, fo.stacked("C"), probes))
        quads = np.stack(quads)  # (levels, T, probes)
        worst_increase = float(np.max(quads[1:] - quads[:-1]))
        cov_ok = worst_increase <= tol
        means = np.stack(means)  # (levels, T, d)
        inc = np.linalg.norm(means[1:] - means[:-1], axis=2)  # (levels - 1, T)
        tail = inc[1:]
        mean_ok = bool(np.all(np.diff(tail, axis=0) <= 0))
        elapsed = time.perf_counter() - t0
        detail = (
            f"max probe-form increase {worst_increase:.2e} (tol {tol:g}); "
            f"mean increments at t=T {np.round(inc[:, -1], 4).tolist()}; tail monotone at all t: {mean_ok}; "
            f"{elapsed:.1f}s"
        )
        return cov_ok and mean_ok and elapsed < max_seconds, detail

    return _timed("discretization monotonicity", run)


# -- 4. FFBS ---------------------------------------------------------------------


def check_ffbs(n_draws=50_000, seed=0, se_mult=4.0, frob_tol=0.05, max_seconds=60.0) -> CheckResult:
    def run():
        t0 = time.perf_counter()
        grid = Grid([0.25, 0.75])
        spec = local_level_spec(grid, OuParams(2.0, 1.0), OuParams(0.5, 2.0), OuParams(0.3, 3.0))
        _, y = simulate(spec, 2, seed)
        fo = kalman_filter(spec, y)
        sm = smooth(fo)
        rng = np.random.default_rng(seed + 1)
        draws = np.stack([ffbs(fo, rng) for _ in range(n_draws)])  # (n, T + 1, p)
        mean = draws.mean(axis=0)
        se = draws.std(axis=0, ddof=1) / math.sqrt(n_draws)
        s_mean = np.stack([s.s for s in sm])
        z = float(np.max(np.abs(mean - s_mean) / se))
        frob = 0.0
        for t, s in enumerate(sm):
            cov = np.cov(draws[:, t, :], rowvar=False)
            frob = max(frob, float(np.linalg.norm(cov - s.S) / np.linalg.norm(s.S)))
        elapsed = time.perf_counter() - t0
        ok = z <= se_mult and frob <= frob_tol and elapsed < max_seconds
        return ok, (
            f"{n_draws} draws: max |mean - smoother| = {z:.2f} SE (<= {se_mult:g}), "
            f"max relative Frobenius covariance error {frob:.4f} (<= {frob_tol:g}), {elapsed:.1f}s"
        )

    return _timed("FFBS vs smoother", run)


# -- 5. conjugate update ---------------------------------------------------------


def _log_prior_times_likelihood(sigma2, residuals, beta, grid, shape, rate):
    # dense solve + slogdet of the full Gram matrix, independent of the sampler's path
    cov = gram_matrix(OuParams(sigma2, beta), grid)
    T, d = residuals.shape
    _, logdet = np.linalg.slogdet(cov)
    quad = float(np.sum(residuals * np.linalg.solve(cov, residuals.T).T))
    ll = -0.5 * (T * d * math.log(2 * math.pi) + T * logdet + quad)
    log_prior = shape * math.log(rate) - math.lgamma(shape) - (shape + 1) * math.log(sigma2) - rate / sigma2
    return ll + log_prior


def check_conjugate_update(n_instances=20, n_grid=50, tol=1e-8, seed=0, max_seconds=10.0) -> CheckResult:
    """The inverse-gamma full conditional equals prior x likelihood normalized by quadrature."""

    def run():
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            d = int(rng.integers(1, 5))
            T = int(rng.integers(2, 8))
            grid = Grid(np.sort(rng.choice(np.arange(21) / 20, d, replace=False)))
            beta = float(np.exp(rng.uniform(-3, 2)))
            true_s2 = float(np.exp(rng.uniform(-3, 1)))
            shape, rate = float(rng.uniform(1.0, 4.0)), float(np.exp(rng.uniform(-3, 0)))
            e = rng.multivariate_normal(np.zeros(d), gram_matrix(OuParams(true_s2, beta), grid), size=T)
            a, b = sigma2_full_conditional(e, beta, grid, shape, rate)

            def logpost(log_s2):
                return _log_prior_times_likelihood(math.exp(log_s2), e, beta, grid, shape, rate)

            # normalize on the log-sigma2 scale, around the conditional mode
            mode = math.log(b / (a + 1))
            ref = logpost(mode)
            z, _ = integrate.quad(
                lambda ls: math.exp(logpost(ls) - ref + ls), mode - 40, mode + 40,
                points=[mode], epsabs=0, epsrel=1e-13, limit=400,
            )
            lo, hi = stats.invgamma(a, scale=b).ppf([1e-3, 1 - 1e-3])
            pts = np.linspace(lo, hi, n_grid)
            got = stats.invgamma(a, scale=b).logpdf(pts)
            want = np.array([logpost(math.log(s)) - ref - math.log(z) for s in pts])
            worst = max(worst, float(np.max(np.abs(np.expm1(got - want)))))
        elapsed = time.perf_counter() - t0
        return worst <= tol and elapsed < max_seconds, (
            f"{n_instances} instances x {n_grid} points: max relative density error {worst:.2e} (tol {tol:g}), {elapsed:.1f}s"
        )

    return _timed("conjugate sigma2 update", run)


# -- 6. Sokal --------------------------------------------------------------------


def ar1_chain(phi, n, rng):
    """Stationary AR(1) with unit innovation variance."""
    x = np.empty(n)
    eps = rng.standard_normal(n)
    x[0] = eps[0] / math.sqrt(1 - phi * phi)
    x[1:] = lfilter([1.0], [1.0, -phi], eps[1:], zi=[phi * x[0]])[0]
    return x


def check_sokal(seed=0, max_seconds=30.0) -> CheckResult:
    def run():
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        _, tau_iid = sokal_mcse(rng.standard_normal(100_000))
        _, tau_ar = sokal_mcse(ar1_chain(0.5, 1_000_000, rng))
        elapsed = time.perf_counter() - t0
        ok = 0.9 <= tau_iid <= 1.2 and 2.7 <= tau_ar <= 3.3 and elapsed < max_seconds
        return ok, f"iid tau={tau_iid:.3f} in [0.9, 1.2]; AR(1) phi=0.5 tau={tau_ar:.3f} in [2.7, 3.3]; {elapsed:.1f}s"

    return _timed("Sokal autocorrelation time", run)


# -- 7/8. recovery and bands -----------------------------------------------------


@dataclass
class RecoveryRun:
    states: FunctionalSeries
    data: FunctionalSeries
    draws: PosteriorDraws
    seconds: float


def reference_spec(d=24, truth=REFERENCE_TRUTH):
    s2v, lbv, s2w, lbw = truth
    return local_level_spec(
        Grid.uniform(d), OuParams(2.0, 1.0), OuParams.from_log_beta(s2w, lbw), OuParams.from_log_beta(s2v, lbv)
    )


def recovery_run(T=300, d=24, iterations=10_000, burn_in=2_000, seed=2024, save_states=True) -> RecoveryRun:
    """Simulate from REFERENCE_TRUTH and fit with default priors.

    The chain starts at the prior means (sigma2 = rate / (shape - 1), log beta = 0),
    not at the truth.
    """
    spec = reference_spec(d)
    states, data = simulate(spec, T, seed)
    prior = PriorSpec()
    start = spec.replace(
        v=OuParams.from_log_beta(prior.ig_rate_v / (prior.ig_shape_v - 1), prior.logbeta_mean_v),
        w=OuParams.from_log_beta(prior.ig_rate_w / (prior.ig_shape_w - 1), prior.logbeta_mean_w),
    )
    cfg = SamplerConfig(iterations=iterations, burn_in=burn_in, seed=seed + 1, save_states=save_states)
    t0 = time.perf_counter()
    draws = run_sampler(start, data, prior, cfg)
    return RecoveryRun(states, data, draws, time.perf_counter() - t0)


def check_parameter_recovery(run: RecoveryRun, truth=REFERENCE_TRUTH, max_seconds=900.0) -> CheckResult:
    def body():
        names = ("sigma2_v", "log_beta_v", "sigma2_w", "log_beta_w")
        parts, ok = [], run.seconds < max_seconds
        for i, (name, true) in enumerate(zip(names, truth)):
            col = run.draws.draws[:, i]
            lo, hi = np.quantile(col, [0.05, 0.95])
            mean = float(col.mean())
            covered = lo <= true <= hi
            if name.startswith("sigma2"):
                close = abs(mean - true) / true <= 0.30
                err = f"rel err {abs(mean - true) / true:.3f}"
            else:
                close = abs(mean - true) <= 0.5
                err = f"abs err {abs(mean - true):.3f}"
            ok = ok and covered and close
            parts.append(f"{name}: mean {mean:.4g} in ({lo:.4g}, {hi:.4g}) covers {true:g}={covered}, {err}")
        parts.append(f"acceptance {tuple(round(r, 3) for r in run.draws.acceptance_rates)}")
        parts.append(f"sampler {run.seconds:.0f}s (< {max_seconds:g}s)")
        return ok, "; ".join(parts)

    return _timed("parameter recovery", body)


def check_band_coverage(run: RecoveryRun, level=0.9, lo=0.85, hi=0.95) -> CheckResult:
    def body():
        bands = posterior_bands(run.draws.state_draws, level)
        truth = run.states.curves
        inside = (bands.lower <= truth) & (truth <= bands.upper)
        frac = float(inside[1:].mean())
        return lo <= frac <= hi, f"{frac:.3f} of (t, grid point) pairs inside the {level:.0%} bands (target [{lo}, {hi}])"

    return _timed("band coverage", body)


FAST_CHECKS: Dict[str, Callable[[], CheckResult]] = {
    "oracle": check_oracle_equivalence,
    "scalar": check_scalar_example,
    "monotonicity": check_discretization_monotonicity,
    "ffbs": check_ffbs,
    "conjugate": check_conjugate_update,
    "sokal": check_sokal,
}


def run_checks(full: bool = False, log: Callable[[str], None] = print) -> List[CheckResult]:
    results = []
    for fn in FAST_CHECKS.values():
        res = fn()
        log(res.line())
        results.append(res)
    if full:
        run = recovery_run()
        for res in (check_parameter_recovery(run), check_band_coverage(run)):
            log(res.line())
            results.append(res)
    return results
