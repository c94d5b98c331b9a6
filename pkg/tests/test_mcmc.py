import math

import numpy as np
import pytest
from scipy import stats

from fdlm import checks
from fdlm.errors import ChainTooShortError, ConfigError, DegenerateChainError, MissingStateDrawsError
from fdlm.kernel import Grid, OuParams, gram_matrix
from fdlm.mcmc import (
    ChainSummary,
    ParamSummary,
    PosteriorDraws,
    PriorSpec,
    SamplerConfig,
    gibbs_sigma2,
    logbeta_log_target,
    mh_logbeta,
    posterior_bands,
    run_sampler,
    sigma2_full_conditional,
    sokal_mcse,
    summarize,
    summarize_chains,
)
from fdlm.statespace import FunctionalSeries, local_level_spec, simulate

GRID3 = Grid([0.0, 0.5, 1.0])


def residuals(seed, T=2, grid=GRID3, params=OuParams(1.0, 1.0)):
    rng = np.random.default_rng(seed)
    return rng.multivariate_normal(np.zeros(len(grid)), gram_matrix(params, grid), size=T)


# -- conjugate variance update ----------------------------------------------------


def test_full_conditional_scalar_case():
    # one grid point: residuals ~ N(0, s) with s = sigma2 / (2 beta), the textbook conjugate update
    e = np.array([[0.3], [-1.2], [0.7], [2.0]])
    beta, a, b = 1.7, 2.5, 0.4
    shape, rate = sigma2_full_conditional(e, beta, Grid([0.4]), a, b)
    assert shape == a + 2.0
    assert rate == pytest.approx(b + beta * float(np.sum(e**2)), rel=1e-14)


def test_full_conditional_matches_density_oracle():
    assert checks.check_conjugate_update(n_instances=5).passed


def test_no_residuals_gives_prior():
    empty = np.zeros((0, 3))
    assert sigma2_full_conditional(empty, 1.0, GRID3, 2.0, 3.0) == (2.0, 3.0)
    rng = np.random.default_rng(0)
    draws = np.array([gibbs_sigma2(empty, 1.0, GRID3, 3.0, 2.0, rng) for _ in range(4000)])
    assert stats.kstest(draws, stats.invgamma(3.0, scale=2.0).cdf).pvalue > 0.01


def test_gibbs_sigma2_positive_and_deterministic():
    e = residuals(1, T=5)
    a = gibbs_sigma2(e, 1.0, GRID3, 2.0, 1e-4, seed=7)
    assert a > 0
    assert a == gibbs_sigma2(e, 1.0, GRID3, 2.0, 1e-4, seed=7)


# -- Metropolis-Hastings on log beta ----------------------------------------------


def test_tiny_step_always_accepts():
    e = residuals(2)
    rng = np.random.default_rng(0)
    lb, accepted = 0.0, 0
    for _ in range(1000):
        lb, ok = mh_logbeta(lb, 1.0, e, GRID3, 0.0, 10.0, 1e-12, rng)
        accepted += ok
    assert accepted == 1000


def test_self_proposal_always_accepted():
    e = residuals(3)
    rng = np.random.default_rng(1)
    for lb in (-2.0, 0.0, 1.5):
        for _ in range(200):
            new, ok = mh_logbeta(lb, 1.0, e, GRID3, 0.0, 1e6, 0.1, rng, propose=lambda c, r: c)
            assert ok and new == lb


def test_two_point_grid_stationary_frequencies():
    e = residuals(0)
    points = (0.0, 0.5)
    target = {p: logbeta_log_target(p, 1.0, e, GRID3, 0.0, 10.0) for p in points}
    pi0 = 1.0 / (1.0 + math.exp(target[0.5] - target[0.0]))

    def swap(current, rng):
        return points[1] if current == points[0] else points[0]

    rng = np.random.default_rng(42)
    n = 20_000
    lb, at_first = points[0], 0
    for _ in range(n):
        lb, _ = mh_logbeta(lb, 1.0, e, GRID3, 0.0, 10.0, 1.0, rng, propose=swap, current_log_target=target[lb])
        at_first += lb == points[0]

    # exact asymptotic variance of a two-state chain's occupation frequency
    p01 = min(1.0, (1 - pi0) / pi0)
    p10 = min(1.0, pi0 / (1 - pi0))
    lam = 1.0 - p01 - p10
    sd = math.sqrt(pi0 * (1 - pi0) * (1 + lam) / (1 - lam) / n)
    assert abs(at_first / n - pi0) <= 3 * sd


def test_failed_factorization_is_rejection():
    e = residuals(4)
    new, ok = mh_logbeta(0.0, 1.0, e, GRID3, 0.0, 10.0, 0.1, seed=0, propose=lambda c, r: 800.0)
    assert (new, ok) == (0.0, False)


def test_mh_rejects_bad_step():
    with pytest.raises(ValueError):
        mh_logbeta(0.0, 1.0, residuals(5), GRID3, 0.0, 10.0, 0.0)


# -- sampler ----------------------------------------------------------------------


def small_problem(T=20, d=4, seed=0):
    spec = local_level_spec(Grid.uniform(d), OuParams(2.0, 1.0), OuParams(0.02, 1.0), OuParams(0.05, 2.0))
    _, data = simulate(spec, T, seed)
    return spec, data


def test_sampler_shapes_and_determinism():
    spec, data = small_problem()
    cfg = SamplerConfig(iterations=60, burn_in=20, thin=2, seed=3, save_states=True)
    a = run_sampler(spec, data, PriorSpec(), cfg)
    b = run_sampler(spec, data, PriorSpec(), cfg)
    assert a.draws.shape == (20, 4)
    assert a.state_draws.shape == (20, 21, 4)
    np.testing.assert_array_equal(a.iterations, np.arange(21, 61, 2))
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.state_draws, b.state_draws)
    assert np.all(a.draws[:, [0, 2]] > 0)
    assert all(0 <= r <= 1 for r in a.acceptance_rates)


def test_sampler_fixed_blocks_stay_fixed():
    spec, data = small_problem()
    cfg = SamplerConfig(iterations=30, burn_in=10, seed=1, estimate_w=False)
    d = run_sampler(spec, data, PriorSpec(), cfg)
    assert np.all(d.column("sigma2_w") == spec.w.sigma2)
    assert np.all(d.column("log_beta_w") == spec.w.log_beta)
    assert math.isnan(d.acceptance_rates[1])


def test_sampler_config_validation():
    with pytest.raises(ConfigError, match="sampler.iterations"):
        SamplerConfig(iterations=100, burn_in=100)
    with pytest.raises(ConfigError, match="sampler.thin"):
        SamplerConfig(thin=0)
    with pytest.raises(ConfigError, match="sampler.mh_step_v"):
        SamplerConfig(mh_step_v=-1.0)
    with pytest.raises(ConfigError, match="prior.ig_rate_w"):
        PriorSpec(ig_rate_w=0.0)


def test_sampler_rejects_wrong_grid():
    spec, data = small_problem()
    with pytest.raises(ConfigError):
        run_sampler(spec, FunctionalSeries(Grid.uniform(5), np.zeros((3, 5))), PriorSpec(), SamplerConfig(10, 5))


def test_acceptance_rates_in_tuning_range(recovery):
    assert all(0.1 <= r <= 0.7 for r in recovery.draws.acceptance_rates)


def test_recovery_posterior_means_close(recovery):
    means = recovery.draws.draws.mean(axis=0)
    s2v, lbv, s2w, lbw = checks.REFERENCE_TRUTH
    assert abs(means[0] / s2v - 1) <= 0.30 and abs(means[2] / s2w - 1) <= 0.30
    assert abs(means[1] - lbv) <= 0.5 and abs(means[3] - lbw) <= 0.5


# -- Sokal MCSE -------------------------------------------------------------------


def test_sokal_iid_and_ar1():
    rng = np.random.default_rng(0)
    _, tau = sokal_mcse(rng.standard_normal(100_000))
    assert 0.9 <= tau <= 1.2
    _, tau = sokal_mcse(checks.ar1_chain(0.5, 1_000_000, rng))
    assert 2.7 <= tau <= 3.3


def test_sokal_mcse_scales_with_root_n():
    rng = np.random.default_rng(1)
    small, _ = sokal_mcse(rng.standard_normal(10_000))
    large, _ = sokal_mcse(rng.standard_normal(40_000))
    assert 0.4 <= large / small <= 0.6


def test_sokal_errors():
    with pytest.raises(DegenerateChainError):
        sokal_mcse(np.full(500, 3.0))
    with pytest.raises(ChainTooShortError):
        sokal_mcse(np.arange(50.0))


# -- summaries --------------------------------------------------------------------


def draws_of(column):
    column = np.asarray(column, dtype=float)
    return PosteriorDraws(np.column_stack([column] * 4), (0.5, 0.5), np.arange(1, column.size + 1))


def test_summarize_ranks():
    n = 1000
    s = summarize(draws_of(np.arange(1, n + 1))).params["sigma2_v"]
    assert s.mean == (n + 1) / 2
    # linear interpolation between order statistics
    assert s.q05 == pytest.approx(1 + 0.05 * (n - 1))
    assert s.q95 == pytest.approx(1 + 0.95 * (n - 1))
    assert s.mcse > 0 and not s.degenerate


def test_summarize_constant_chain_is_degenerate():
    s = summarize(draws_of(np.full(500, 2.5))).params["log_beta_w"]
    assert s.mean == 2.5 and s.degenerate
    assert s.q05 == s.q95 == 2.5


def test_summarize_empty_raises():
    with pytest.raises(ValueError):
        summarize(PosteriorDraws(np.zeros((0, 4)), (0.0, 0.0), np.zeros(0, dtype=int)))


def test_pooled_chains():
    rng = np.random.default_rng(2)
    a, b = draws_of(rng.normal(size=2000)), draws_of(rng.normal(size=2000))
    pooled = summarize_chains([a, b]).params["sigma2_v"]
    single = [summarize(c).params["sigma2_v"] for c in (a, b)]
    assert pooled.mean == pytest.approx(np.concatenate([a.draws[:, 0], b.draws[:, 0]]).mean())
    assert pooled.mcse == pytest.approx(0.5 * math.hypot(single[0].mcse, single[1].mcse))


def test_table_layout_snapshot():
    summary = ChainSummary(
        {
            "sigma2_v": ParamSummary(2.71e-4, 1.2e-6, 8.0, 2.574e-4, 2.843e-4),
            "log_beta_v": ParamSummary(-2.91, 0.012, 15.0, -3.139, -2.673),
            "sigma2_w": ParamSummary(2.107e-4, 9e-7, 5.0, 1.966e-4, 2.252e-4),
            "log_beta_w": ParamSummary(-2.757, 0.021, 30.0, -3.115, -2.43),
        },
        8000,
    )
    expected = "\n".join(
        [
            "=" * 80,
            "                      sigma2_V      log beta_V          sigma2_W      log beta_W",
            "-" * 80,
            "estimate              2.71e-04           -2.91          2.11e-04           -2.76",
            "MCSE                  1.20e-06            0.01          9.00e-07            0.02",
            "90% interval  (2.57, 2.84)e-04  (-3.14, -2.67)  (1.97, 2.25)e-04  (-3.12, -2.43)",
            "=" * 80,
        ]
    )
    assert summary.to_table() == expected


# -- bands ------------------------------------------------------------------------


def test_bands_constant_draws_collapse():
    s = np.full((50, 3, 2), 1.25)
    b = posterior_bands(s, 0.9)
    assert np.all(b.lower == b.median) and np.all(b.median == b.upper)


def test_bands_nest_with_level():
    s = np.random.default_rng(0).normal(size=(400, 5, 3))
    narrow, wide = posterior_bands(s, 0.5), posterior_bands(s, 0.9)
    assert np.all(wide.lower <= narrow.lower) and np.all(narrow.upper <= wide.upper)
    np.testing.assert_array_equal(narrow.median, wide.median)


def test_bands_need_state_draws():
    with pytest.raises(MissingStateDrawsError):
        posterior_bands(None)
    with pytest.raises(ValueError):
        posterior_bands(np.zeros((5, 2, 2)), 1.0)


def test_band_coverage_on_recovery_run(recovery):
    bands = posterior_bands(recovery.draws.state_draws, 0.9)
    truth = recovery.states.curves
    inside = (bands.lower <= truth) & (truth <= bands.upper)
    assert abs(inside[1:].mean() - 0.9) <= 0.05


def _mean_error(draws):
    truth = np.array(checks.REFERENCE_TRUTH)
    err = np.abs(draws.draws.mean(axis=0) - truth)
    err[[0, 2]] /= truth[[0, 2]]  # relative for sigma2, absolute for log beta
    return float(err.mean())


@pytest.mark.slow
def test_posterior_means_drift_toward_truth(recovery):
    data = recovery.data
    spec = checks.reference_spec(len(data.grid))
    start = spec.replace(v=OuParams.from_log_beta(1e-4, 0.0), w=OuParams.from_log_beta(1e-4, 0.0))
    errors = []
    for T in (50, 150):
        prefix = FunctionalSeries(data.grid, data.curves[:T])
        errors.append(_mean_error(run_sampler(start, prefix, PriorSpec(), SamplerConfig(seed=2025))))
    errors.append(_mean_error(recovery.draws))
    assert errors[0] >= errors[1] >= errors[2], errors
