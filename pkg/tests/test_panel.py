import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifepanel.errors import DataError, DuplicateCell, NonFinite, RaggedRow, ShapeMismatch
from ifepanel.panel import (MaskedMatrix, ObsIndex, PanelData, demean_two_way, from_long_records,
                            projection_d, projection_d_perp, read_csv, two_way_within, write_csv)
from ifepanel.simulation import pattern_mask

from conftest import random_mask


def _dense_two_way(values, mask):
    ii, tt = np.nonzero(mask)
    n_units, n_periods = mask.shape
    design = np.zeros((ii.size, n_units + n_periods))
    design[np.arange(ii.size), ii] = 1.0
    design[np.arange(ii.size), n_units + tt] = 1.0
    target = values[mask]
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    out = np.zeros_like(values)
    out[mask] = target - design @ coef
    return out


def test_complete_records_give_balanced_panel():
    recs = [(u, p, 1.0 + u + p, [float(u * p)]) for u in (0, 1) for p in (1, 2)]
    d = from_long_records(recs)
    assert (d.n_units, d.n_periods, d.n_obs) == (2, 2, 4)
    assert d.is_balanced


def test_single_hole():
    recs = [("a", 1, 1.0, [1.0]), ("a", 2, 2.0, [0.5]), ("b", 1, 3.0, [2.0])]
    d = from_long_records(recs)
    assert d.n_obs == 3
    assert (~d.mask).sum() == 1
    assert not d.mask[1, 1]


def test_keys_sorted_regardless_of_record_order(rng):
    recs = [(u, p, rng.standard_normal(), [rng.standard_normal()]) for u in range(4) for p in range(3)]
    a = from_long_records(recs)
    b = from_long_records(list(reversed(recs)))
    np.testing.assert_array_equal(a.y, b.y)
    assert a.unit_keys == (0, 1, 2, 3)


def test_pattern_two_records():
    mask = pattern_mask("2", 0.2, 10, 4, 3)
    recs = [(i, t, 1.0, [1.0]) for i in range(10) for t in range(4) if mask[i, t]]
    d = from_long_records(recs)
    assert d.n_obs == 32
    short = d.mask.sum(axis=1) == 2
    assert short.sum() == 4
    assert d.mask[short][:, :2].all()


def test_record_errors():
    with pytest.raises(DuplicateCell):
        from_long_records([(0, 0, 1.0, [1.0]), (0, 0, 2.0, [1.0])])
    with pytest.raises(RaggedRow):
        from_long_records([(0, 0, 1.0, [1.0]), (0, 1, 2.0, [1.0, 2.0])])
    with pytest.raises(NonFinite):
        from_long_records([(0, 0, float("nan"), [1.0])])
    with pytest.raises(DataError):
        from_long_records([])


def test_empty_rows_are_dropped_with_report():
    mask = np.ones((3, 4), bool)
    mask[1] = False
    d = PanelData.from_arrays(np.ones((3, 4)), np.ones((3, 4)), mask)
    assert d.n_units == 2 and d.unit_keys == (0, 2)
    assert d.construction_report


def test_observed_sets_agree(rng):
    mask = random_mask(rng, 5, 4)
    d = PanelData.from_arrays(rng.standard_normal((5, 4)), rng.standard_normal((5, 4)), mask)
    obs = set(d.observed)
    assert len(obs) == d.n_obs
    assert all(d.mask[o.unit, o.period] for o in obs)
    rows = {ObsIndex(i, int(t)) for i, ts in enumerate(d.unit_rows) for t in ts}
    cols = {ObsIndex(int(i), t) for t, is_ in enumerate(d.period_columns) for i in is_}
    assert rows == cols == obs


def test_projection_examples(rng):
    m = rng.standard_normal((3, 3))
    full = PanelData.from_arrays(m, m)
    np.testing.assert_array_equal(projection_d(m, full).values, m)
    mask = np.ones((3, 3), bool)
    mask[1, 2] = False
    ones = projection_d(np.ones((3, 3)), mask).values
    assert ones.sum() == 8 and ones[1, 2] == 0
    mask = random_mask(rng, 3, 3)
    np.testing.assert_array_equal(projection_d(m, mask).values, m * mask)
    with pytest.raises(ShapeMismatch):
        projection_d(np.ones((2, 3)), mask)


@given(st.integers(0, 2**32 - 1), st.integers(1, 7), st.integers(1, 7))
def test_projection_idempotent_and_complementary(seed, n, t):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, t))
    mask = rng.random((n, t)) > 0.4
    p = projection_d(a, mask).values
    np.testing.assert_array_equal(projection_d(p, mask).values, p)
    np.testing.assert_array_equal(p + projection_d_perp(a, mask).values, a)


def test_within_balanced_closed_form(rng):
    y = rng.standard_normal((6, 5))
    d = PanelData.from_arrays(y, rng.standard_normal((6, 5)))
    expected = y - y.mean(axis=1, keepdims=True) - y.mean(axis=0, keepdims=True) + y.mean()
    np.testing.assert_allclose(two_way_within(d).y, expected, atol=1e-12)


def test_within_removes_additive_effects(rng):
    mask = random_mask(rng, 7, 6)
    y = rng.standard_normal(7)[:, None] + rng.standard_normal(6)[None, :]
    d = PanelData.from_arrays(y, rng.standard_normal((7, 6)), mask)
    assert np.abs(two_way_within(d).y).max() < 1e-9


def test_within_matches_dummy_regression(rng):
    mask = random_mask(rng, 5, 4, 0.3)
    y = rng.standard_normal((5, 4))
    d = PanelData.from_arrays(y, rng.standard_normal((5, 4)), mask)
    np.testing.assert_allclose(two_way_within(d).y, _dense_two_way(d.y, mask), atol=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(2, 8))
def test_within_orthogonal_and_idempotent(seed, n, t):
    rng = np.random.default_rng(seed)
    mask = random_mask(rng, n, t)
    d = PanelData.from_arrays(rng.standard_normal((n, t)), rng.standard_normal((n, t)), mask)
    w = two_way_within(d)
    bound = 10 * 1e-10 * np.sqrt(d.n_obs)
    assert np.abs(w.y.sum(axis=1)).max() < bound
    assert np.abs(w.y.sum(axis=0)).max() < bound
    again = two_way_within(w)
    assert np.abs(again.y - w.y).max() <= 1e-9
    assert set(w.observed) == set(d.observed)


def test_demean_reports_no_convergence(rng):
    from ifepanel.errors import NoConvergence
    mask = random_mask(rng, 6, 6, 0.5)
    with pytest.raises(NoConvergence):
        demean_two_way(rng.standard_normal((6, 6)), mask, tol=1e-300, max_iter=2)


def test_csv_round_trip(tmp_path, rng):
    mask = random_mask(rng, 4, 3)
    d = PanelData.from_arrays(rng.standard_normal((4, 3)), rng.standard_normal((4, 3, 2)), mask,
                              unit_keys=["a", "b", "c", "d"], period_keys=[2001, 2002, 2003],
                              regressor_names=["x1", "x2"])
    path = tmp_path / "panel.csv"
    write_csv(d, path)
    back = read_csv(path)
    np.testing.assert_array_equal(back.y, d.y)
    np.testing.assert_array_equal(back.x, d.x)
    assert back.regressor_names == ("x1", "x2")
    assert back.period_keys == (2001, 2002, 2003)


def test_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,time,y,x\n1,1,1,1\n")
    with pytest.raises(DataError):
        read_csv(path)


def test_masked_matrix_zero_fill():
    mm = MaskedMatrix(np.arange(6.0).reshape(2, 3), np.array([[1, 0, 1], [1, 1, 0]], bool))
    np.testing.assert_array_equal(mm.zero_filled(), [[0, 0, 2], [3, 4, 0]])
