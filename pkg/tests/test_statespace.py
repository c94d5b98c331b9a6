import numpy as np
import pytest

from fdlm.errors import DimensionMismatchError, GridMismatchError, ParameterDomainError
from fdlm.kernel import Grid, OuParams, gram_matrix
from fdlm.statespace import (
    DyadicOperator,
    FunctionalSeries,
    ModelMatrices,
    apply_dyadic,
    discretize_spec,
    local_level_spec,
    resample,
    simulate,
)

C0 = OuParams(2.0, 1.0)


def make_spec(grid, w=OuParams(0.5, 2.0), v=OuParams(0.3, 3.0)):
    return local_level_spec(grid, C0, w, v)


def test_local_level_identity_matrices():
    spec = make_spec(Grid.uniform(24))
    np.testing.assert_array_equal(spec.F, np.eye(24))
    np.testing.assert_array_equal(spec.G, np.eye(24))
    np.testing.assert_array_equal(spec.m0, np.zeros(24))


def test_single_point_grid_is_scalar_model():
    spec = make_spec(Grid([0.5]), w=OuParams(1.0, 0.5), v=OuParams(2.0, 1.0))
    mats = spec.matrices()
    assert mats.F.shape == (1, 1)
    assert mats.W[0, 0] == 1.0 and mats.V[0, 0] == 1.0


def test_spec_rejects_bad_shapes():
    g = Grid.uniform(3)
    with pytest.raises(DimensionMismatchError):
        local_level_spec(g, C0, C0, C0, m0=np.zeros(2))
    with pytest.raises(DimensionMismatchError):
        make_spec(g).replace(F=np.eye(2))
    with pytest.raises(DimensionMismatchError):
        ModelMatrices.from_arrays(np.eye(2), np.eye(2), np.zeros(2), np.eye(2), np.eye(3), np.eye(2))


def test_functional_series_validation():
    g = Grid.uniform(3)
    with pytest.raises(DimensionMismatchError):
        FunctionalSeries(g, np.zeros((2, 4)))
    with pytest.raises(ParameterDomainError):
        FunctionalSeries(g, [[0.0, np.nan, 1.0]])
    s = FunctionalSeries(g, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        s.curves[0, 0] = 1.0


# -- dyadic discretization --------------------------------------------------------


def test_dyadic_level_one_selects_half_and_one():
    g = Grid([0.25, 0.5, 0.75, 1.0])
    op = DyadicOperator(1, g)
    assert op.grid.points.tolist() == [0.5, 1.0]
    s = FunctionalSeries(g, [[1.0, 2.0, 3.0, 4.0]])
    assert apply_dyadic(op, s).curves.tolist() == [[2.0, 4.0]]


def test_dyadic_identity_on_exact_dyadic_grid():
    g = Grid.dyadic(3)
    op = DyadicOperator(3, g)
    np.testing.assert_array_equal(op.indices, np.arange(8))
    y = np.random.default_rng(0).normal(size=(4, 8))
    np.testing.assert_array_equal(op(y), y)


def test_dyadic_nested_application():
    g = Grid.uniform(33)
    y = FunctionalSeries(g, np.random.default_rng(1).normal(size=(3, 33)))
    fine = DyadicOperator(3, g)
    direct = apply_dyadic(DyadicOperator(2, g), y)
    nested = apply_dyadic(DyadicOperator(2, fine.grid), apply_dyadic(fine, y))
    np.testing.assert_array_equal(direct.curves, nested.curves)
    assert direct.grid == nested.grid


@pytest.mark.parametrize("n", range(1, 8))
def test_dyadic_grids_nested(n):
    coarse, fine = set(Grid.dyadic(n).points), set(Grid.dyadic(n + 1).points)
    assert coarse <= fine


def test_dyadic_subset_property():
    g = Grid.uniform(17)
    y = np.random.default_rng(2).normal(size=(5, 17))
    for n in range(1, 5):
        out = DyadicOperator(n, g)(y)
        for j, u in enumerate(Grid.dyadic(n).points):
            np.testing.assert_array_equal(out[:, j], y[:, list(g.points).index(u)])


def test_dyadic_requires_exact_membership():
    with pytest.raises(GridMismatchError):
        DyadicOperator(2, Grid.uniform(24))  # 23 intervals: 1/4 is not a grid point
    with pytest.raises(ParameterDomainError):
        DyadicOperator(0, Grid.uniform(3))


def test_resample_then_dyadic():
    g = Grid.uniform(24)
    u = g.points
    s = FunctionalSeries(g, [2 * u + 1])
    fine = resample(s, Grid.uniform(33))
    np.testing.assert_allclose(fine.curves[0], 2 * Grid.uniform(33).points + 1, atol=1e-14)
    out = apply_dyadic(DyadicOperator(2, fine.grid), fine)
    np.testing.assert_allclose(out.curves[0], [1.5, 2.0, 2.5, 3.0], atol=1e-14)


def test_discretize_spec_restricts_observations():
    g = Grid.uniform(9)
    spec = make_spec(g)
    op = DyadicOperator(2, g)
    sub = discretize_spec(spec, op)
    assert sub.obs_grid == Grid.dyadic(2)
    assert sub.state_grid == g
    np.testing.assert_array_equal(sub.F, np.eye(9)[[2, 4, 6, 8]])
    mats = sub.matrices()
    np.testing.assert_array_equal(mats.V, gram_matrix(spec.v, Grid.dyadic(2)))
    np.testing.assert_array_equal(mats.W, spec.matrices().W)


# -- simulate ---------------------------------------------------------------------


def test_simulate_shapes_and_grids():
    g = Grid.uniform(5)
    states, data = simulate(make_spec(g), 7, seed=0)
    assert states.curves.shape == (8, 5)
    assert data.curves.shape == (7, 5)
    assert states.grid == g and data.grid == g


def test_simulate_deterministic():
    spec = make_spec(Grid.uniform(4))
    a = simulate(spec, 20, seed=42)
    b = simulate(spec, 20, seed=42)
    np.testing.assert_array_equal(a[0].curves, b[0].curves)
    np.testing.assert_array_equal(a[1].curves, b[1].curves)


def test_simulate_tiny_state_noise_gives_constant_states():
    spec = make_spec(Grid.uniform(6), w=OuParams(1e-20, 1.0))
    states, _ = simulate(spec, 50, seed=3)
    assert np.max(np.abs(np.diff(states.curves, axis=0))) < 1e-8


def test_simulate_observation_noise_variance_scalar():
    v = OuParams(0.6, 1.5)
    spec = make_spec(Grid([0.5]), w=OuParams(1.0, 1.0), v=v)
    states, data = simulate(spec, 5000, seed=11)
    resid = data.curves[:, 0] - states.curves[1:, 0]
    want = v.sigma2 / (2 * v.beta)
    assert abs(resid.var() / want - 1) < 0.05


def test_simulate_innovation_covariance_matches_gram():
    g = Grid.uniform(4)
    w, v = OuParams(0.5, 2.0), OuParams(0.3, 3.0)
    spec = make_spec(g, w, v)
    states, data = simulate(spec, 10_000, seed=5)
    inc = np.diff(states.curves, axis=0)
    noise = data.curves - states.curves[1:]
    for sample, gram in ((inc, gram_matrix(w, g)), (noise, gram_matrix(v, g))):
        emp = sample.T @ sample / len(sample)
        assert np.linalg.norm(emp - gram) / np.linalg.norm(gram) < 0.10


def test_simulate_raw_matrices_need_grids():
    mats = ModelMatrices.from_arrays(1.0, 1.0, 0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ParameterDomainError):
        simulate(mats, 3, seed=0)
    states, data = simulate(mats, 3, seed=0, state_grid=Grid([0.0]), obs_grid=Grid([0.0]))
    assert len(states) == 4 and len(data) == 3
    with pytest.raises(ParameterDomainError):
        simulate(mats, 0, seed=0, state_grid=Grid([0.0]), obs_grid=Grid([0.0]))
