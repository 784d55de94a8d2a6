import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_hmm.errors import EmptyInputError, FormatError, ParseError
from spectral_hmm.timeseries import TimeSeries, load_series, periodogram


def naive_dft_power(y, grid):
    n = len(y)
    t = np.arange(n)
    out = []
    for h in range(n // 2):
        s = sum(y[k] * np.exp(-2j * np.pi * h * t[k] / grid) for k in range(n))
        out.append(abs(s) ** 2)
    return np.array(out)


def test_timeseries_validation():
    with pytest.raises(EmptyInputError):
        TimeSeries([])
    with pytest.raises(FormatError):
        TimeSeries([1.0, np.nan])
    with pytest.raises(FormatError):
        TimeSeries([1.0], sample_rate=0)
    ts = TimeSeries([1, 2, 3], sample_rate=4, t0=8)
    assert np.array_equal(ts.times, [8, 9, 10])
    assert ts.seconds[0] == 2.0


def test_load_two_columns_infers_rate(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("time,value\n0,1.0\n0.25,2.0\n0.5,3.0\n")
    ts = load_series(p)
    assert ts.sample_rate == 4.0
    assert np.array_equal(ts.values, [1.0, 2.0, 3.0])


def test_load_headerless_and_single_column(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("\n".join(str(v) for v in np.arange(1314.0)) + "\n")
    ts = load_series(p, sample_rate=4)
    assert len(ts) == 1314 and ts.sample_rate == 4
    with pytest.raises(FormatError):
        load_series(p)


def test_load_ignores_extra_columns(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("t,value,state\n0,1.5,1\n1,2.5,2\n")
    ts = load_series(p)
    assert np.array_equal(ts.values, [1.5, 2.5])


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n0,1\na,b\n")
    with pytest.raises(ParseError, match="row 3"):
        load_series(bad)
    uneven = tmp_path / "uneven.csv"
    uneven.write_text("0,1\n1,2\n2.5,3\n")
    with pytest.raises(FormatError, match="non-uniform"):
        load_series(uneven)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(EmptyInputError):
        load_series(empty)


def test_load_time_offset(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,value\n2.0,1\n2.5,2\n3.0,3\n")
    ts = load_series(p)
    assert ts.sample_rate == 2.0 and ts.t0 == 4


def test_periodogram_constant_series():
    spec = periodogram(np.full(64, 3.0))
    assert spec.power[0] == pytest.approx((64 * 3.0) ** 2)
    assert np.all(spec.power[1:] < 1e-10)


def test_periodogram_aligned_cosine():
    t = np.arange(64)
    spec = periodogram(np.cos(2 * np.pi * 8 / 64 * t))
    assert int(np.argmax(spec.power)) == 8
    assert spec.freqs.size == 32 and spec.freqs[8] == 8 / 64


def test_periodogram_matches_naive_dft():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(37)
    for grid in (37, 50):
        spec = periodogram(y, total_len=grid)
        np.testing.assert_allclose(spec.power, naive_dft_power(y, grid), rtol=1e-8)


def test_periodogram_errors():
    with pytest.raises(EmptyInputError):
        periodogram([])
    with pytest.raises(ValueError):
        periodogram(np.ones(10), total_len=5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=80), st.floats(-50, 50))
def test_periodogram_nonnegative_and_shift_invariant(values, c):
    y = np.array(values)
    a = periodogram(y).power
    b = periodogram(y + c).power
    assert np.all(a >= 0)
    scale = 1e-9 * max(1.0, (np.abs(y).sum() + abs(c) * y.size) ** 2)
    np.testing.assert_allclose(a[1:], b[1:], atol=scale)
