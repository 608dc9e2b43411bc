import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rcae2e.dataset import (
    STD_FLOOR,
    AlignmentError,
    EmptyInputError,
    ParseError,
    RunDataset,
    SchemaError,
    StandardizationStats,
    WindowSizeError,
    load_runs,
    stack_array,
    stack_windows,
    standardize,
    unstack,
    window_matrix,
    write_runs,
)


def _write(path, text):
    path.write_text(text)
    return path


def test_load_shapes(tmp_path):
    lines = ["run,timestamp,a,b,c"]
    for r in (1, 2):
        for t in range(1, 5):
            lines.append(f"{r},{t},{r},{t},{r * t}")
    data = load_runs(_write(tmp_path / "x.csv", "\n".join(lines) + "\n"))
    assert (data.n_runs, data.n_sensors, data.n_timestamps) == (2, 3, 4)
    assert data.sensor_names == ("a", "b", "c")
    np.testing.assert_array_equal(data.runs[1][2], [2, 4, 6, 8])


def test_rows_in_any_order(tmp_path):
    text = "run,timestamp,a\n2,2,5\n1,2,3\n2,1,4\n1,1,1\n"
    data = load_runs(_write(tmp_path / "x.csv", text))
    assert data.run_ids == ("1", "2")
    np.testing.assert_array_equal(data.as_array()[:, 0, :], [[1, 3], [4, 5]])


def test_ragged_runs_rejected(tmp_path):
    lines = ["run,timestamp,a"] + [f"1,{t},0" for t in range(1, 5)] + [f"2,{t},0" for t in range(1, 4)]
    with pytest.raises(AlignmentError):
        load_runs(_write(tmp_path / "x.csv", "\n".join(lines)))


def test_header_only_rejected(tmp_path):
    with pytest.raises(EmptyInputError):
        load_runs(_write(tmp_path / "x.csv", "run,timestamp,a,b\n"))


def test_bad_cells(tmp_path):
    with pytest.raises(ParseError):
        load_runs(_write(tmp_path / "x.csv", "run,timestamp,a\n1,1,abc\n"))
    with pytest.raises(ParseError):
        load_runs(_write(tmp_path / "y.csv", "run,timestamp,a\n1,1,nan\n"))
    with pytest.raises(ParseError, match="duplicate"):
        load_runs(_write(tmp_path / "z.csv", "run,timestamp,a\n1,1,0\n1,1,2\n"))
    with pytest.raises(SchemaError):
        load_runs(_write(tmp_path / "w.csv", "timestamp,a\n1,0\n"))


def test_directory_of_files(tmp_path):
    _write(tmp_path / "a.csv", "run,timestamp,s\n1,1,1\n1,2,2\n")
    _write(tmp_path / "b.csv", "run,timestamp,s\n10,1,3\n10,2,4\n")
    data = load_runs(tmp_path)
    assert data.run_ids == ("1", "10")


def test_write_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = RunDataset(runs=tuple(rng.normal(size=(3, 7)) for _ in range(2)),
                      sensor_names=("x", "y", "z"), run_ids=("0", "1"))
    write_runs(data, tmp_path / "d.csv")
    back = load_runs(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.as_array(), data.as_array())


def test_standardize_example():
    data = RunDataset(runs=(np.array([[1.0, 2.0, 3.0]]),), sensor_names=("a",), run_ids=("0",))
    out, stats = standardize(data)
    # population stddev of [1, 2, 3] is sqrt(2/3); (3 - 2) / sqrt(2/3) = 1.22474...
    np.testing.assert_allclose(out.runs[0][0], [-np.sqrt(1.5), 0.0, np.sqrt(1.5)], atol=1e-12)
    assert round(float(out.runs[0][0][2]), 4) == 1.2247
    assert stats.mean[0] == 2.0


def test_constant_sensor_clamped():
    data = RunDataset(runs=(np.array([[5.0, 5.0, 5.0]]),), sensor_names=("a",), run_ids=("0",))
    out, stats = standardize(data)
    assert stats.stddev[0] == STD_FLOOR
    np.testing.assert_array_equal(out.runs[0], 0.0)


def test_identity_stats():
    x = np.random.default_rng(1).normal(size=(2, 5))
    data = RunDataset(runs=(x,), sensor_names=("a", "b"), run_ids=("0",))
    stats = StandardizationStats(mean=np.zeros(2), stddev=np.ones(2), sensor_names=("a", "b"))
    out, _ = standardize(data, stats)
    np.testing.assert_array_equal(out.runs[0], x)


def test_stats_json_round_trip(tmp_path):
    stats = StandardizationStats(mean=np.array([1.5, -2.0]), stddev=np.array([0.5, 3.0]), sensor_names=("p", "q"))
    stats.save(tmp_path / "s.json")
    back = StandardizationStats.load(tmp_path / "s.json")
    assert back.sensor_names == ("p", "q")
    np.testing.assert_array_equal(back.mean, stats.mean)
    np.testing.assert_array_equal(back.stddev, stats.stddev)


def test_window_count_and_layout():
    data = RunDataset(runs=(np.arange(10.0).reshape(2, 5),), sensor_names=("a", "b"), run_ids=("0",))
    ws = stack_windows(data, 2)
    assert [w.t for w in ws] == [2, 3, 4, 5]
    small = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(window_matrix(small, 2), [[1, 3, 2, 4]])
    np.testing.assert_array_equal(window_matrix(small, 1), small.T)
    assert stack_array(data, 3).shape == (1, 3, 6)


def test_window_size_checked():
    with pytest.raises(WindowSizeError):
        window_matrix(np.zeros((2, 3)), 4)


@given(
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)),
           elements=st.floats(-1e3, 1e3, allow_nan=False)),
    st.integers(1, 9),
)
def test_unstack_inverts_window_matrix(run, t_w):
    t_w = min(t_w, run.shape[1])
    np.testing.assert_array_equal(unstack(window_matrix(run, t_w), run.shape[0]), run)


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 12)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_standardized_moments(run):
    data = RunDataset(runs=(run,), sensor_names=tuple(f"s{i}" for i in range(run.shape[0])), run_ids=("0",))
    out, stats = standardize(data)
    z = out.runs[0]
    # constant sensors divide rounding error by the floor; only check real variation
    varied = run.std(axis=1) > 1e-6
    np.testing.assert_allclose(z[varied].mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(z[varied].std(axis=1), 1.0, rtol=1e-6)
