import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifepanel.errors import Collinear, DataError
from ifepanel.estimator import (IfeOptions, fit, objective_at_convergence_consistency,
                                profile_objective, within_ols)
from ifepanel.factors import pca_factors
from ifepanel.panel import PanelData

from conftest import factor_panel, random_mask


def test_r0_exact_model_is_pooled_ols(rng):
    x = rng.standard_normal((6, 5, 2))
    y = x @ np.array([0.5, -1.5])
    res = fit(PanelData.from_arrays(y, x), r=0)
    np.testing.assert_allclose(res.beta, [0.5, -1.5], atol=1e-12)
    assert res.objective < 1e-24


def test_noiseless_factor_model_gives_zero_objective(rng):
    d = factor_panel(rng, 30, 20, r=2, noise=0.0)
    assert profile_objective(d, [1.0], 2) < 1e-10
    res = fit(d, r=2, beta_tol=1e-12, obj_tol=1e-12)
    np.testing.assert_allclose(res.beta, [1.0], atol=1e-5)
    diag = objective_at_convergence_consistency(res, d)
    assert diag.recomputed < 1e-9 and diag.reported < 1e-9


def test_full_rank_objective_is_zero(rng):
    d = factor_panel(rng, 6, 4)
    assert profile_objective(d, [0.3], 4) < 1e-12


def test_profile_matches_pca_ssr(rng):
    d = factor_panel(rng, 8, 6)
    w = d.y - d.x[:, :, 0] * 0.7
    resid = w - pca_factors(w, 1).common()
    assert profile_objective(d, [0.7], 1) == pytest.approx((resid ** 2).sum() / 48, rel=1e-10)


def test_consistency_at_moderate_size(rng):
    d = factor_panel(rng, 60, 30, r=2)
    res = fit(d, r=2)
    assert res.converged
    assert abs(res.beta[0] - 1.0) < 0.1
    assert objective_at_convergence_consistency(res, d).relative < 1e-6
    assert res.objective == res.sigma2


def test_monotone_descent_unbalanced(rng):
    d = factor_panel(rng, 25, 15, mask=random_mask(rng, 25, 15, 0.2))
    path = np.asarray(fit(d, r=2).objective_path)
    assert np.all(np.diff(path) <= 1e-9 * path[:-1])


def test_residuals_live_on_observed_cells(rng):
    mask = random_mask(rng, 20, 10, 0.2)
    res = fit(factor_panel(rng, 20, 10, mask=mask), r=1)
    assert np.all(res.residuals[~mask] == 0)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_scale_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    d = factor_panel(rng, 15, 10, r=1)
    scaled = PanelData.from_arrays(c * d.y, d.x)
    opts = IfeOptions(r=1, beta_tol=1e-12, obj_tol=1e-12)
    a, b = fit(d, opts), fit(scaled, opts)
    np.testing.assert_allclose(b.beta, c * a.beta, rtol=1e-6, atol=1e-8)
    assert b.objective == pytest.approx(c ** 2 * a.objective, rel=1e-6)


def test_multi_start_is_deterministic(rng):
    d = factor_panel(rng, 20, 12, mask=random_mask(rng, 20, 12, 0.1))
    opts = IfeOptions(r=2, n_starts=3, rng_seed=7)
    a, b = fit(d, opts), fit(d, opts)
    np.testing.assert_array_equal(a.beta, b.beta)
    assert a.start_objectives == b.start_objectives
    assert a.start_index_of_best == b.start_index_of_best
    assert a.objective == min(a.start_objectives)


def test_balanced_em_routes_agree(rng):
    d = factor_panel(rng, 20, 12)
    a = fit(d, r=2, em_mode="interleaved")
    b = fit(d, r=2, em_mode="nested")
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-8)


def test_forced_early_stop(rng):
    d = factor_panel(rng, 20, 12, mask=random_mask(rng, 20, 12, 0.1))
    res = fit(d, r=2, max_outer=1)
    assert not res.converged and res.outer_iterations == 1
    objective_at_convergence_consistency(res, d)


def test_thin_units_flagged(rng):
    mask = np.ones((8, 6), bool)
    mask[2, 1:] = False
    res = fit(factor_panel(rng, 8, 6, mask=mask), r=1)
    assert res.thin_units == (2,)


def test_errors(rng):
    y = rng.standard_normal((5, 4))
    x = np.stack([np.ones((5, 4)), 2 * np.ones((5, 4))], axis=2)
    with pytest.raises(Collinear):
        fit(PanelData.from_arrays(y, x + rng.standard_normal((5, 4))[:, :, None]), r=0)
    with pytest.raises(DataError):
        fit(factor_panel(rng, 5, 4), r=5)
    with pytest.raises(ValueError):
        IfeOptions(r=-1)


def test_within_ols_removes_effects(rng):
    x = rng.standard_normal((10, 8))
    y = 2.0 * x + rng.standard_normal(10)[:, None] + rng.standard_normal(8)[None, :]
    beta, se = within_ols(PanelData.from_arrays(y, x))
    np.testing.assert_allclose(beta, [2.0], atol=1e-10)
