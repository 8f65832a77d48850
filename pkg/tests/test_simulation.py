import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifepanel import simulation as sim
from ifepanel.errors import NoConvergence, PatternInfeasible, StudyFailed
from ifepanel.simulation import (DgpConfig, StudyOptions, apply_pattern, draw_errors, generate,
                                 pattern_mask, run_study, table_csv)

FAST = StudyOptions(select_factors=False)


@given(st.sampled_from(["1", "2", "3"]), st.sampled_from([0.0, 0.2, 0.4]),
       st.integers(10, 30), st.integers(6, 20), st.integers(0, 1000))
def test_drop_count_exact(pattern, psi, n, t, seed):
    dropped = apply_pattern(pattern, psi, n, t, seed)
    assert len(dropped) == round(n * t * psi)


def test_pattern_two_example():
    mask = pattern_mask("2", 0.2, 10, 4, 0)
    lost = ~mask.all(axis=1)
    assert lost.sum() == 4 and (~mask).sum() == 8
    assert not mask[lost][:, 2:].any() and mask[lost][:, :2].all()


def test_pattern_three_keeps_contiguous_window():
    mask = pattern_mask("3", 0.4, 20, 10, 1)
    for row in mask[~mask.all(axis=1)]:
        idx = np.flatnonzero(row)
        assert np.all(np.diff(idx) == 1)


def test_pattern_one_example():
    mask = pattern_mask("1", 0.4, 10, 10, 2)
    assert (~mask).sum() == 40
    assert mask.any(axis=0).all() and mask.any(axis=1).all()


def test_infeasible_patterns():
    assert apply_pattern("2", 0.0, 10, 4) == frozenset()
    with pytest.raises(PatternInfeasible):
        pattern_mask("2", 0.6, 10, 4)
    with pytest.raises(PatternInfeasible):
        pattern_mask("1", 0.9, 3, 3)


def test_balanced_draws_identical_across_patterns():
    panels = [generate(DgpConfig(12, 8, 0.0, p), rep=3)[0] for p in "123"]
    for d in panels[1:]:
        np.testing.assert_array_equal(d.y, panels[0].y)
        np.testing.assert_array_equal(d.x, panels[0].x)
    assert panels[0].n_obs == 96


@pytest.mark.parametrize("config", ["i", "ii", "iii", "iv"])
def test_error_variance_is_four(config):
    rng = np.random.default_rng(0)
    e = draw_errors(config, 100, 10_000, rng, burn_in=200)
    assert 3.9 <= e.var() <= 4.1


def test_ar_autocorrelation():
    e = draw_errors("iv", 20, 10_000, np.random.default_rng(1))
    r = np.mean([np.corrcoef(row[1:], row[:-1])[0, 1] for row in e])
    assert abs(r - 0.5) < 0.02


def test_sizes_scale_with_psi():
    cfg = DgpConfig(24, 12, 0.2, "1")
    d, truth = generate(cfg)
    assert (cfg.n_units, cfg.n_periods) == (30, 15)
    assert d.n_obs == 30 * 15 - len(truth.dropped)


def test_seed_determinism_across_workers():
    cfg = DgpConfig(20, 10, 0.2, "1", "iv", seed=5)
    a = run_study(cfg, 4, FAST)
    b = run_study(cfg, 4, StudyOptions(select_factors=False, workers=2))
    assert a == b
    assert [r.beta_tilde for r in a.records] == [r.beta_tilde for r in b.records]


def test_study_with_selection_reports_all_estimators():
    m = run_study(DgpConfig(20, 12, seed=1), 2, StudyOptions(pa_permutations=9))
    assert set(m.mean_r_hat) == set(sim.ESTIMATORS)
    assert 0.0 <= m.size_at_5pct <= 1.0
    text = table_csv([(DgpConfig(20, 12, seed=1), m)])
    assert text.splitlines()[0].split(",") == list(sim.TABLE_HEADER)


def test_failures_abort_study(monkeypatch):
    real_fit = sim.fit

    def flaky(panel, opts):
        if panel.y[0, 0] > 0:
            raise NoConvergence("forced")
        return real_fit(panel, opts)

    monkeypatch.setattr(sim, "fit", flaky)
    with pytest.raises(StudyFailed):
        run_study(DgpConfig(10, 6), 6, FAST)


def test_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(10, 10, psi=1.0)
    with pytest.raises(ValueError):
        run_study(DgpConfig(10, 10), 0)
