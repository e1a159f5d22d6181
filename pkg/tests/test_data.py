import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ldbart.data import (
    ColumnTransform,
    DataError,
    Dataset,
    GroupingMeta,
    load_csv,
    parse_meta,
    standardize,
)


def write(tmp_path, csv, meta):
    (tmp_path / "d.csv").write_text(csv)
    (tmp_path / "d.meta").write_text(meta)
    return tmp_path / "d.csv", tmp_path / "d.meta"


CSV = "x1,x2,y\n0.1,1.0,2.5\n0.4,2.0,3.5\n0.9,0.5,1.0\n"


def test_load_two_groups(tmp_path):
    paths = write(tmp_path, CSV, "x1: current\nx2: past(1)\ny: response(continuous)\n")
    ds, meta = load_csv(*paths)
    assert ds.P == 2 and ds.n == 3
    assert meta.t == 2
    assert meta.P_current == 1
    assert list(meta.past_sizes) == [1]
    assert ds.names == ("x1", "x2")
    np.testing.assert_array_equal(ds.y, [2.5, 3.5, 1.0])
    np.testing.assert_array_equal(ds.X[:, 1], [1.0, 2.0, 0.5])


def test_column_order_preserved(tmp_path):
    csv = "b,y,a\n1,0,3\n2,1,4\n"
    paths = write(tmp_path, csv, "a: current\nb: current\ny: response(binary)\n")
    ds, _ = load_csv(*paths)
    assert ds.names == ("b", "a")
    assert ds.outcome == "binary"


def test_unmapped_column(tmp_path):
    paths = write(tmp_path, CSV, "x1: current\ny: response(continuous)\n")
    with pytest.raises(DataError, match="unmapped column"):
        load_csv(*paths)


def test_non_binary_response(tmp_path):
    csv = "x1,y\n0.1,0\n0.2,1\n0.3,2\n"
    paths = write(tmp_path, csv, "x1: current\ny: response(binary)\n")
    with pytest.raises(DataError, match="non-binary response"):
        load_csv(*paths)


def test_non_numeric_cell(tmp_path):
    csv = "x1,y\n0.1,0\nabc,1\n"
    paths = write(tmp_path, csv, "x1: current\ny: response(continuous)\n")
    with pytest.raises(DataError, match="non-numeric"):
        load_csv(*paths)


def test_missing_cell(tmp_path):
    csv = "x1,y\n0.1,0\n,1\n"
    paths = write(tmp_path, csv, "x1: current\ny: response(continuous)\n")
    with pytest.raises(DataError):
        load_csv(*paths)


def test_constant_column(tmp_path):
    csv = "x1,x2,y\n1,0.1,0\n1,0.2,1\n"
    paths = write(tmp_path, csv, "x1: current\nx2: current\ny: response(continuous)\n")
    with pytest.raises(DataError, match="constant"):
        load_csv(*paths)


def test_meta_column_missing_from_csv(tmp_path):
    paths = write(tmp_path, CSV, "x1: current\nx2: current\nx3: current\ny: response(continuous)\n")
    with pytest.raises(DataError, match="x3"):
        load_csv(*paths)


def test_declared_time(tmp_path):
    paths = write(tmp_path, CSV,
                  "@time: 4  # response at visit 4\nx1: current\nx2: past(2)\ny: response(continuous)\n")
    _, meta = load_csv(*paths)
    assert meta.t == 4
    assert list(meta.past_sizes) == [0, 1, 0]
    assert meta.label(0) == "current" and meta.label(1) == "past(2)"


def test_past_not_before_response(tmp_path):
    paths = write(tmp_path, CSV, "@time: 2\nx1: current\nx2: past(2)\ny: response(continuous)\n")
    with pytest.raises(DataError):
        load_csv(*paths)


@pytest.mark.parametrize("text", [
    "x1: current\n",                                      # no response
    "x1: later\ny: response(continuous)\n",               # bad label
    "x1: current\nx1: current\ny: response(binary)\n",    # duplicate
    "y: response(continuous)\nz: response(binary)\n",     # two responses
    "x1: past(0)\ny: response(continuous)\n",
])
def test_bad_meta(text):
    with pytest.raises(DataError):
        parse_meta(text)


def test_dataset_rejects_nan():
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan, 1.0]]), np.array([1.0]))


def test_standardize_endpoints():
    ds = Dataset(np.array([[0.0], [1.0]]), np.array([0.0, 10.0]))
    out, rec = standardize(ds)
    np.testing.assert_array_equal(out.y, [-0.5, 0.5])
    assert (rec.lo, rec.hi) == (0.0, 10.0)
    np.testing.assert_array_equal(out.X, ds.X)


def test_standardize_degenerate():
    ds = Dataset(np.arange(3.0)[:, None], np.array([5.0, 5.0, 5.0]))
    with pytest.raises(DataError, match="degenerate response"):
        standardize(ds)


@given(arrays(float, st.integers(2, 40),
              elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)))
def test_standardize_round_trip(y):
    if y.max() == y.min():
        return
    ds = Dataset(np.zeros((len(y), 1)), y)
    out, rec = standardize(ds)
    assert out.y.min() == pytest.approx(-0.5) and out.y.max() == pytest.approx(0.5)
    np.testing.assert_allclose(rec.inverse(out.y), y, rtol=1e-12, atol=1e-12 * np.abs(y).max())


@given(st.integers(1, 8), st.lists(st.integers(1, 8), min_size=1, max_size=30))
def test_group_sizes_sum_to_P(t, raw):
    time = np.array([1 + (k - 1) % t for k in raw])
    meta = GroupingMeta(t, time)
    assert meta.P_current + meta.past_sizes.sum() == meta.P == len(raw)


def test_all_current():
    meta = GroupingMeta.all_current(3)
    assert meta.t == 1 and meta.P_current == 3 and len(meta.past_sizes) == 0


def test_column_transform_maps_ranks():
    X = np.array([[3.0, 0.0], [1.0, 1.0], [2.0, 0.0], [10.0, 1.0]])
    ct = ColumnTransform.fit(X)
    U = ct.transform(X)
    np.testing.assert_allclose(U[:, 0], [2 / 3, 0.0, 1 / 3, 1.0])
    np.testing.assert_allclose(U[:, 1], [0.0, 1.0, 0.0, 1.0])
    # clamping outside the training range, interpolation inside
    np.testing.assert_allclose(ct.transform([[-5.0, 0.5], [6.0, 2.0]]), [[0.0, 0.5], [2 / 3 + (3 / 7) / 3, 1.0]])


def test_binary_column_cut_at_half():
    X = np.array([[0.0], [1.0], [1.0], [0.0]])
    assert ColumnTransform.fit(X).cutpoints()[0].tolist() == [0.5]


@settings(max_examples=30)
@given(st.integers(2, 400), st.integers(1, 120))
def test_cutpoints_inside_range(m, n_cuts):
    ct = ColumnTransform.fit(np.linspace(0, 1, m)[:, None])
    cuts = ct.cutpoints(n_cuts)[0]
    assert 1 <= len(cuts) <= n_cuts
    assert np.all(cuts > 0) and np.all(cuts < 1)
    assert np.all(np.diff(cuts) > 0)


def test_transform_round_trip_dict():
    X = np.random.default_rng(0).random((20, 3))
    ct = ColumnTransform.fit(X)
    ct2 = ColumnTransform.from_dict(ct.to_dict())
    np.testing.assert_array_equal(ct.transform(X), ct2.transform(X))
