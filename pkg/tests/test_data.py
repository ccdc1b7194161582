import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survscore.data import (
    CATEGORICAL, CONTINUOUS, SplitSpec, SurvivalDataset, load_dataset, split_dataset, split_sizes, summarize,
    write_dataset,
)
from survscore.errors import DataIOError, SchemaError, SplitError, ValidationError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, "time,status,age\n5,1,40\n2,0,50\n9,1,60\n")
    ds = load_dataset(p, "time", "status", {"age": CONTINUOUS})
    assert ds.n == 3 and ds.n_events == 2
    np.testing.assert_array_equal(ds.times, [5, 2, 9])


def test_bad_status_names_row(tmp_path):
    p = _write(tmp_path, "time,status,age\n5,1,40\n2,2,50\n")
    with pytest.raises(ValidationError, match="row 1"):
        load_dataset(p, "time", "status", {"age": CONTINUOUS})


def test_missing_cell_rejected_with_row_and_column(tmp_path):
    p = _write(tmp_path, "time,status,age,sex\n5,1,40,F\n2,0,,M\n")
    with pytest.raises(ValidationError, match=r"row 1.*'age'"):
        load_dataset(p, "time", "status", {"age": CONTINUOUS, "sex": CATEGORICAL})


def test_impute_policy(tmp_path):
    p = _write(tmp_path, "time,status,age,sex\n5,1,40,F\n2,0,,M\n3,1,60,F\n4,0,50,\n")
    ds = load_dataset(p, "time", "status", {"age": CONTINUOUS, "sex": CATEGORICAL}, missing_policy="impute")
    assert ds.covariates["age"][1] == 50.0
    assert ds.covariates["sex"][3] == "F"


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(DataIOError):
        load_dataset(tmp_path / "nope.csv", "time", "status", {})


def test_missing_column(tmp_path):
    p = _write(tmp_path, "time,status\n5,1\n")
    with pytest.raises(SchemaError):
        load_dataset(p, "time", "status", {"age": CONTINUOUS})


def test_split_sizes_floor_allocation():
    assert split_sizes(100, (0.7, 0.1, 0.2)) == (70, 10, 20)
    assert split_sizes(101, (0.7, 0.1, 0.2)) == (71, 10, 20)


def _toy(n, seed=0):
    rng = np.random.default_rng(seed)
    return SurvivalDataset(rng.exponential(size=n), (rng.random(n) < 0.7).astype(int),
                           {"x": rng.standard_normal(n)}, {"x": CONTINUOUS})


def test_split_deterministic_and_sized():
    ds = _toy(100)
    a = split_dataset(ds, SplitSpec((0.7, 0.1, 0.2), seed=3))
    b = split_dataset(ds, SplitSpec((0.7, 0.1, 0.2), seed=3))
    assert [p.n for p in a] == [70, 10, 20]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.row_ids, y.row_ids)


def test_split_empty_partition_is_error():
    with pytest.raises(SplitError):
        split_dataset(_toy(50), SplitSpec((1.0, 0.0, 0.0)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(20, 200), seed=st.integers(0, 2**31), a=st.floats(0.3, 0.7), b=st.floats(0.05, 0.25))
def test_split_partitions_rows(n, seed, a, b):
    ds = SurvivalDataset(np.arange(n, dtype=float), np.ones(n, dtype=int), {"x": np.zeros(n)}, {"x": CONTINUOUS})
    ratios = (a, b, 1 - a - b)
    if min(split_sizes(n, ratios)) == 0:
        return
    parts = split_dataset(ds, SplitSpec(ratios, seed))
    ids = np.concatenate([p.row_ids for p in parts])
    assert sorted(ids.tolist()) == list(range(n))


def test_summarize_examples():
    s = summarize(SurvivalDataset([1, 2, 3], [1, 1, 0], {}, {}))
    assert s.n_events == 2 and s.median_survival_among_events == 1.5
    assert summarize(SurvivalDataset([1, 2], [0, 0], {}, {})).median_survival_among_events is None
    assert summarize(SurvivalDataset([7], [1], {}, {})).median_survival_among_events == 7


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e6, allow_nan=False), st.integers(0, 1),
                          st.floats(-1e9, 1e9, allow_nan=False), st.sampled_from(["a", "b c", "é"])),
                min_size=1, max_size=30))
def test_write_load_roundtrip(tmp_path_factory, rows):
    t, s, x, g = map(list, zip(*rows))
    ds = SurvivalDataset(t, s, {"x": x, "g": g}, {"x": CONTINUOUS, "g": CATEGORICAL})
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(ds, p)
    back = load_dataset(p, "time", "status", ds.schema)
    np.testing.assert_array_equal(back.times, ds.times)
    np.testing.assert_array_equal(back.status, ds.status)
    np.testing.assert_array_equal(back.covariates["x"], ds.covariates["x"])
    assert list(back.covariates["g"]) == list(ds.covariates["g"])
    assert summarize(back).n_events == int(np.sum(s))
