import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifepanel.errors import UnitRoot, ZeroStdErr
from ifepanel.estimator import fit
from ifepanel.inference import (BiasBandwidths, InferenceReport, VcovKind, bias_terms, covariance,
                                d_matrix, infer, long_run_effect, residualize_regressors,
                                rule_of_thumb_m, theta_matrix, z_test)
from ifepanel.panel import PanelData
from ifepanel.residualize import dense_residualize

from conftest import factor_panel, random_mask


def _report(beta_tilde, vcov):
    beta_tilde = np.asarray(beta_tilde, float)
    vcov = np.asarray(vcov, float)
    se = np.sqrt(np.diag(vcov))
    zero = np.zeros_like(beta_tilde)
    with np.errstate(divide="ignore"):
        z = beta_tilde / se
    return InferenceReport(beta_tilde, zero, zero, zero, beta_tilde, np.eye(beta_tilde.size),
                           VcovKind.HOMOSKEDASTIC, vcov, se, z, False, BiasBandwidths())


def test_r0_terms_vanish_and_d_is_gram(rng):
    d = factor_panel(rng, 8, 6, beta=(1.0, -0.5), mask=random_mask(rng, 8, 6))
    res = fit(d, r=0)
    for term in bias_terms(res, d):
        np.testing.assert_array_equal(term, 0.0)
    xo = d.x_obs()
    np.testing.assert_allclose(d_matrix(res, d), xo.T @ xo, rtol=1e-12)


def test_d_matrix_matches_dense_oracle(rng):
    mask = random_mask(rng, 6, 5, 0.2)
    d = factor_panel(rng, 6, 5, mask=mask)
    res = fit(d, r=1)
    xb = dense_residualize(d.x[:, :, 0], res.factor, "breve", mask)[mask]
    assert d_matrix(res, d)[0, 0] == pytest.approx(xb @ xb, rel=1e-6)


def test_homoskedastic_scalar_closed_form(rng):
    d = factor_panel(rng, 10, 8)
    res = fit(d, r=1)
    v = covariance(res, d, "homoskedastic")
    assert v[0, 0] == pytest.approx(res.sigma2 / d_matrix(res, d)[0, 0], rel=1e-12)


def test_robust_with_constant_residuals(rng):
    d = factor_panel(rng, 10, 8, beta=(1.0, 2.0))
    res = fit(d, r=1)
    c = 0.7
    const = res.__class__(**{**res.__dict__, "residuals": np.full(res.residuals.shape, c)})
    dmat = d_matrix(res, d)
    np.testing.assert_allclose(covariance(const, d, "robust"), c ** 2 * np.linalg.inv(dmat), rtol=1e-6)


def test_clustered_direct_sum(rng):
    d = factor_panel(rng, 5, 4, beta=(1.0, 0.5), mask=random_mask(rng, 5, 4, 0.15))
    res = fit(d, r=1)
    rr = residualize_regressors(res, d)
    dinv = np.linalg.inv(d_matrix(res, d, rr))
    omega = np.zeros((2, 2))
    for i in range(5):
        s = np.zeros(2)
        for t in range(4):
            if d.mask[i, t]:
                s += res.residuals[i, t] * rr.breve[i, t]
        omega += np.outer(s, s)
    np.testing.assert_allclose(covariance(res, d, "clustered"), dinv @ omega @ dinv, rtol=1e-10)


@given(st.integers(0, 2**32 - 1), st.sampled_from(list(VcovKind)), st.booleans())
def test_covariances_symmetric_psd(seed, kind, dof):
    rng = np.random.default_rng(seed)
    d = factor_panel(rng, 9, 7, beta=(1.0, -1.0), mask=random_mask(rng, 9, 7, 0.1))
    v = covariance(fit(d, r=1), d, kind, dof)
    assert np.abs(v - v.T).max() <= 1e-12 * np.abs(v).max()
    assert np.linalg.eigvalsh(v).min() > -1e-10 * np.trace(v)


def test_dof_factors(rng):
    d = factor_panel(rng, 9, 7)
    res = fit(d, r=1)
    n, k, big_n = d.n_obs, 1, d.n_units
    for kind, factor in (("homoskedastic", n / (n - k)), ("robust", n / (n - k)),
                         ("clustered", big_n / (big_n - 1) * (n - 1) / (n - k))):
        np.testing.assert_allclose(covariance(res, d, kind, True), factor * covariance(res, d, kind),
                                   rtol=1e-12)


def test_bandwidth_switches(rng):
    d = factor_panel(rng, 12, 10, mask=random_mask(rng, 12, 10, 0.1))
    res = fit(d, r=1)
    _, c1, c2_full = bias_terms(res, d, BiasBandwidths(l=0, m=2))
    np.testing.assert_array_equal(c1, 0.0)
    _, _, c2_het = bias_terms(res, d, BiasBandwidths(l=0, m=0))
    rr = residualize_regressors(res, d)
    g = rr.acute[:, :, 0].T @ theta_matrix(res)
    het = (res.residuals ** 2).sum(axis=0) @ np.diag(g) / d_matrix(res, d, rr)[0, 0]
    assert c2_het[0] == pytest.approx(het, rel=1e-10)
    assert c2_full[0] != c2_het[0]


def test_balanced_textbook_sums(rng):
    d = factor_panel(rng, 10, 8)
    res = fit(d, r=1)
    lam, f = res.factor.loadings, res.factor.factors
    x = d.x[:, :, 0]
    m_lam = np.eye(10) - lam @ np.linalg.pinv(lam)
    m_f = np.eye(8) - f @ np.linalg.pinv(f)
    theta = lam @ np.linalg.inv(lam.T @ lam) @ np.linalg.inv(f.T @ f) @ f.T
    e = res.residuals
    x_breve = m_lam @ x @ m_f
    dd = (x_breve ** 2).sum()
    b_ref = (e ** 2).sum(axis=1) @ np.diag(m_lam @ x @ theta.T) / dd
    c2_ref = (e ** 2).sum(axis=0) @ np.diag((x @ m_f).T @ theta) / dd
    b, _, c2 = bias_terms(res, d, BiasBandwidths(l=0, m=0))
    assert b[0] == pytest.approx(b_ref, rel=1e-8)
    assert c2[0] == pytest.approx(c2_ref, rel=1e-8)


def test_c1_lag_sum_by_hand(rng):
    d = factor_panel(rng, 6, 5)
    res = fit(d, r=1)
    f = res.factor.factors
    p = f @ np.linalg.pinv(f)
    e, x = res.residuals, d.x[:, :, 0]
    raw = sum(p[t, t - l] * e[i, t - l] * x[i, t]
              for i in range(6) for l in (1, 2) for t in range(l, 5))
    _, c1, _ = bias_terms(res, d, BiasBandwidths(l=2, m=0))
    assert c1[0] == pytest.approx(raw / d_matrix(res, d)[0, 0], rel=1e-8)


def test_infer_selects_corrections(rng):
    d = factor_panel(rng, 12, 10)
    res = fit(d, r=1)
    rep = infer(res, d, corrections=("b",), kind="robust")
    np.testing.assert_allclose(rep.beta_tilde, rep.beta_hat + rep.b_hat)
    np.testing.assert_allclose(rep.std_errors ** 2, np.diag(rep.vcov))
    assert rep.to_dict()["vcov_kind"] == "robust"
    with pytest.raises(ValueError):
        infer(res, d, corrections=("x",))


def test_z_test_examples():
    assert z_test(_report([1.0], [[0.25]]), 1.0) == [(0.0, False)]
    z, reject = z_test(_report([2.0], [[0.25]]), 1.0, 0.05)[0]
    assert z == pytest.approx(2.0) and reject
    with pytest.raises(ZeroStdErr):
        z_test(_report([1.0], [[0.0]]))


def test_long_run_without_lags():
    phi, se = long_run_effect(0, [], _report([0.5], [[0.04]]))
    assert phi == 0.5 and se == pytest.approx(0.2)


def test_long_run_persistence_example():
    rep = _report([0.622e-2, 0.966], [[1e-6, 0.0], [0.0, 1e-6]])
    phi, _ = long_run_effect(0, [1], rep)
    assert phi == pytest.approx(0.183, abs=0.001)
    with pytest.raises(UnitRoot):
        long_run_effect(0, [1], _report([0.1, 1.0], np.eye(2)))


@given(st.floats(-2, 2), st.floats(-0.9, 0.4), st.floats(-0.4, 0.4))
def test_delta_method_matches_finite_differences(b, g1, g2):
    vcov = np.diag([0.3, 0.2, 0.1])
    rep = _report([b, g1, g2], vcov)
    _, se = long_run_effect(0, [1, 2], rep)
    phi = lambda v: v[0] / (1 - v[1] - v[2])  # noqa: E731
    v0, h = np.array([b, g1, g2]), 1e-6
    grad = np.array([(phi(v0 + h * e) - phi(v0 - h * e)) / (2 * h) for e in np.eye(3)])
    ref = np.sqrt(grad @ vcov @ grad)
    assert se == pytest.approx(ref, rel=1e-4, abs=1e-9)


def test_rule_of_thumb():
    assert rule_of_thumb_m(100) == 4
    assert rule_of_thumb_m(24) == 3
    with pytest.raises(ValueError):
        BiasBandwidths(l=-1)
