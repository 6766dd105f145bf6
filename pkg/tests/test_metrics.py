import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from uwbfusion.metrics import (
    TRACE_COLUMNS,
    TraceRecord,
    compute_stats,
    export_trace,
    finite_trace,
    format_kv,
    mean_speed,
    parse_kv,
    read_trace,
    stats_from_errors,
    summarize,
    write_summary,
    yaw_errors,
)
from uwbfusion.quaternion import yaw_quat


def record(t, est, truth=(0.0, 0.0, 0.0), vel=(0.0, 0.0, 0.0), att=(1.0, 0.0, 0.0, 0.0)):
    return TraceRecord(t, tuple(truth), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0),
                       tuple(est), tuple(vel), tuple(att), tuple(float(k) for k in range(12)))


def test_constant_offset():
    stats = stats_from_errors(np.tile([0.1, -0.2, 0.05], (50, 1)))
    np.testing.assert_allclose(stats.rmse, [0.1, 0.2, 0.05])
    np.testing.assert_allclose(stats.sd, 0.0, atol=1e-15)
    np.testing.assert_allclose(stats.max_abs, [0.1, 0.2, 0.05])


def test_zero_error():
    stats = stats_from_errors(np.zeros((10, 3)))
    assert all(v == 0.0 for k, v in stats.as_dict().items() if k != "n_samples")


def test_symmetric_error():
    err = np.array([[0.1, 0.1, 0.1], [-0.1, -0.1, -0.1]] * 5)
    stats = stats_from_errors(err)
    np.testing.assert_allclose(stats.rmse, 0.1)
    np.testing.assert_allclose(stats.sd, 0.1)
    assert abs(stats.mean_qx) < 1e-15


def test_too_few_samples():
    with pytest.raises(ValueError):
        stats_from_errors(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        compute_stats([])


errors = arrays(np.float64, st.tuples(st.integers(2, 40), st.just(3)), elements=st.floats(-5, 5))


@given(errors)
def test_rmse_decomposes_into_bias_and_spread(err):
    s = stats_from_errors(err)
    mean = np.array([s.mean_qx, s.mean_qy, s.mean_qz])
    np.testing.assert_allclose(s.rmse ** 2, mean ** 2 + s.sd ** 2, rtol=1e-9, atol=1e-12)
    assert np.all(s.max_abs >= s.rmse - 1e-12)


@settings(max_examples=50)
@given(errors, st.randoms(use_true_random=False))
def test_stats_ignore_sample_order(err, rnd):
    idx = list(range(len(err)))
    rnd.shuffle(idx)
    a, b = stats_from_errors(err), stats_from_errors(err[idx])
    np.testing.assert_allclose(a.rmse, b.rmse, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(a.max_abs, b.max_abs)


def test_compute_stats_uses_estimate_minus_truth():
    trace = [record(0.0, (1.1, 2.0, 0.9), truth=(1.0, 2.0, 1.0)), record(0.02, (1.1, 2.0, 0.9), truth=(1.0, 2.0, 1.0))]
    stats = compute_stats(trace)
    assert stats.mean_qx == pytest.approx(0.1)
    assert stats.mean_qz == pytest.approx(-0.1)


def test_trace_round_trip(tmp_path):
    trace = [record(0.02 * k, (0.1 * k, 1.0 / 3.0, math.pi), vel=(k, 0.0, -1e-300)) for k in range(5)]
    path = export_trace(trace, tmp_path / "trace.csv")
    assert read_trace(path) == trace


def test_trace_header_schema(tmp_path):
    path = export_trace([record(0.0, (0, 0, 0))], tmp_path / "t.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header == TRACE_COLUMNS
    assert header[:4] == ["timestamp", "truth_position_x", "truth_position_y", "truth_position_z"]
    assert "est_attitude_w" in header and "cov_diag_11" in header
    assert header[-4:] == ["accepted", "gated", "dropped", "diverged"]


def test_trace_with_wrong_header_is_rejected(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,x\n0,1\n")
    with pytest.raises(ValueError):
        read_trace(bad)


def test_summary_files(tmp_path):
    stats = stats_from_errors([[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0]])
    txt, kv = write_summary(stats, tmp_path, label="static", extra={"seed": 3})
    assert "static" in txt.read_text() and "0.100" in txt.read_text()
    values = parse_kv(kv.read_text())
    assert values["e_qx"] == 0.1 and values["seed"] == 3 and values["n_samples"] == 2


def test_kv_round_trip_is_exact():
    values = {"a": 1.0 / 3.0, "b": 7, "c": "far_anchor"}
    assert parse_kv(format_kv(values)) == values


def test_summarize_has_one_aligned_row():
    lines = summarize(stats_from_errors(np.ones((3, 3))), "run").splitlines()
    assert len(lines[1]) == len(lines[2])


def test_speed_yaw_and_finiteness_helpers():
    trace = [record(0.0, (0, 0, 0), vel=(0.3, 0.4, 0.0), att=tuple(yaw_quat(0.1))),
             record(0.02, (0, 0, 0), vel=(0.0, 0.0, 0.1), att=tuple(yaw_quat(-0.2)))]
    assert mean_speed(trace) == pytest.approx(0.3)
    np.testing.assert_allclose(yaw_errors(trace), [0.1, 0.2], atol=1e-12)
    assert finite_trace(trace)
    assert not finite_trace([record(0.0, (math.nan, 0, 0))])
