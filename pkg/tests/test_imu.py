import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaitid.errors import DegenerateInputError, FormatError, ParseError
from gaitid.features import featurize_many
from gaitid.imu import (GYRO_GAIN, SEGMENT_LENGTH, GaitProfile, GaitSegment, ImuStream,
                        ImuWindow, default_profiles, load_segments, load_stream,
                        resample_rate, resample_to_length, save_segments, save_stream,
                        synthesize_gait, window_stream)


def write(tmp_path, text, name="s.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ------------------------------------------------------------------ CSV ---

def test_header_only_csv_gives_empty_stream(tmp_path):
    s = load_stream(write(tmp_path, "t,ax,ay,az,gx,gy,gz\n"))
    assert s.n_samples == 0 and s.axes == 6


def test_300_rows_at_100hz(tmp_path):
    rows = "\n".join(f"{i / 100},{i},0,0,0,0,0" for i in range(300))
    s = load_stream(write(tmp_path, "t,ax,ay,az,gx,gy,gz\n" + rows + "\n"))
    assert s.n_samples == 300
    assert s.rate_hz == pytest.approx(100.0)
    assert s.times[-1] - s.times[0] == pytest.approx(2.99)


def test_nan_row_reports_line_number(tmp_path):
    text = "t,ax,ay,az\n0,1,2,3\n0.01,NaN,2,3\n"
    with pytest.raises(ParseError) as err:
        load_stream(write(tmp_path, text))
    assert err.value.line == 3
    assert "3" in str(err.value)


def test_malformed_field_and_width(tmp_path):
    with pytest.raises(ParseError) as err:
        load_stream(write(tmp_path, "t,ax,ay,az\n0,1,2,3\n0.01,x,2,3\n"))
    assert err.value.line == 3
    with pytest.raises(ParseError) as err:
        load_stream(write(tmp_path, "t,ax,ay,az\n0,1,2\n"))
    assert err.value.line == 2


def test_bad_header_and_axis_mismatch(tmp_path):
    with pytest.raises(ParseError):
        load_stream(write(tmp_path, "time,x,y,z\n"))
    with pytest.raises(ParseError):
        load_stream(write(tmp_path, "t,ax,ay,az\n0,1,2,3\n"), axes=6)


def test_jitter_beyond_one_percent_is_rejected(tmp_path):
    ok = "t,ax,ay,az\n0,0,0,0\n0.01,0,0,0\n0.02005,0,0,0\n0.03,0,0,0\n"
    assert load_stream(write(tmp_path, ok)).n_samples == 4
    bad = "t,ax,ay,az\n0,0,0,0\n0.01,0,0,0\n0.0215,0,0,0\n0.03,0,0,0\n"
    with pytest.raises(FormatError):
        load_stream(write(tmp_path, bad), rate_hz=100)


def test_label_column(tmp_path):
    s = load_stream(write(tmp_path, "t,ax,ay,az,label\n0,1,2,3,7\n0.01,1,2,3,7\n"))
    assert s.label == 7
    with pytest.raises(ParseError):
        load_stream(write(tmp_path, "t,ax,ay,az,label\n0,1,2,3,7\n0.01,1,2,3,8\n"))


# ----------------------------------------------------------- resampling ---

def test_resample_identity_and_ramp():
    x = np.random.default_rng(0).normal(size=(6, 128))
    assert np.array_equal(resample_to_length(x, 128), x)
    ramp = resample_to_length(np.arange(100.0), 128)
    assert ramp[0] == 0.0 and ramp[-1] == 99.0
    assert np.allclose(ramp, np.linspace(0, 99, 128), atol=1e-12)


def test_resample_sine_close_to_analytic():
    t = np.linspace(0, 1, 100)
    out = resample_to_length(np.sin(2 * np.pi * 2 * t), 128)
    err = np.abs(out - np.sin(2 * np.pi * 2 * np.linspace(0, 1, 128))).max()
    # linear interpolation error bound: h^2 / 8 * max|f''|, h = 1/99, f'' peak (4 pi)^2
    bound = (1 / 99) ** 2 / 8 * (4 * np.pi) ** 2
    assert bound == pytest.approx(2.0140e-3, rel=1e-4)
    assert err <= bound
    assert err > 0.9 * bound     # the bound is nearly attained on this grid


def test_resample_too_short():
    with pytest.raises(DegenerateInputError):
        resample_to_length([1.0], 128)


def test_resample_rate_doubles_samples():
    x = np.sin(np.arange(150) / 50 * 2 * np.pi)[None]
    y = resample_rate(x, 50, 100)
    assert y.shape == (1, 300)
    assert np.allclose(y[0, ::2], x[0])


# ------------------------------------------------------------ windowing ---

@pytest.mark.parametrize("seconds,window,hop,count", [(9, 3, 3, 3), (9, 3, 1, 7), (2, 3, 1, 0)])
def test_window_counts(seconds, window, hop, count):
    s = ImuStream(100, np.zeros((seconds * 100, 6)))
    wins = window_stream(s, window, hop)
    assert len(wins) == count
    assert all(w.n_samples == window * 100 for w in wins)


# ------------------------------------------------------------ synthesis ---

def test_single_harmonic_is_pure_sinusoid():
    p = GaitProfile(2.0, tuple(((1.0, 0.0),) for _ in range(6)), 0.0, 0)
    s = synthesize_gait(p, 4.0, seed=3)
    t = s.times
    basis = np.column_stack([np.sin(4 * np.pi * t), np.cos(4 * np.pi * t)])
    for c in range(6):
        coef, *_ = np.linalg.lstsq(basis, s.data[:, c], rcond=None)
        assert np.abs(basis @ coef - s.data[:, c]).max() < 1e-12
        gain = GYRO_GAIN if c >= 3 else 1.0
        assert np.hypot(*coef) == pytest.approx(gain)


def test_synthesis_is_deterministic():
    p = GaitProfile.default()
    a, b = synthesize_gait(p, 5, seed=11), synthesize_gait(p, 5, seed=11)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, synthesize_gait(p, 5, seed=12).data)


def test_default_profiles_are_separable():
    profiles = default_profiles()
    assert len({p.step_hz for p in profiles}) == 24
    means = []
    for p in profiles:
        wins = window_stream(synthesize_gait(p, 12, seed=p.class_id), 3, 1)
        means.append(featurize_many(wins).mean(axis=0).ravel())
    means = np.array(means)
    dist = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert dist[~np.eye(24, dtype=bool)].min() > 0


def test_profile_validation():
    with pytest.raises(ValueError):
        GaitProfile(3.5, GaitProfile.default().harmonics)
    with pytest.raises(ValueError):
        GaitProfile(2.0, GaitProfile.default().harmonics, noise_sigma=-1)


# ------------------------------------------------------ segments-binary ---

def test_segments_binary_format_errors(tmp_path):
    path = tmp_path / "x.gaitseg"
    seg = GaitSegment(np.ones((6, 128), dtype=np.float32), None, 3)
    save_segments([seg], path)
    raw = path.read_bytes()
    assert raw[:4] == b"GAIT"
    (tmp_path / "t.gaitseg").write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        load_segments(tmp_path / "t.gaitseg")
    (tmp_path / "m.gaitseg").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError) as err:
        load_segments(tmp_path / "m.gaitseg")
    assert err.value.offset == 0


def test_segment_shape_is_enforced():
    with pytest.raises(FormatError):
        GaitSegment(np.zeros((6, 100)))


# ----------------------------------------------------------- properties ---

f32 = st.floats(-1e4, 1e4, allow_nan=False, width=32)


@given(st.integers(2, 300))
def test_resample_is_idempotent_at_target_length(n):
    x = np.random.default_rng(n).normal(size=(3, n))
    once = resample_to_length(x, n)
    assert np.array_equal(once, x)
    assert np.array_equal(resample_to_length(once, n), once)


@given(st.integers(1, 5), st.integers(20, 80), st.integers(0, 60))
def test_hop_equal_to_window_partitions_stream(k, win, extra):
    n = k * win + extra
    data = np.arange(n * 3, dtype=np.float64).reshape(n, 3)
    s = ImuStream(100, data)
    wins = window_stream(s, win / 100, win / 100)
    assert len(wins) == n // win
    joined = np.concatenate([w.data.T for w in wins])
    assert np.array_equal(joined, data[:len(joined)])


profiles_st = st.builds(
    lambda step, amps, sigma, axes: GaitProfile(
        step, tuple(tuple((a, 0.3 * i) for i, a in enumerate(amps)) for _ in range(axes)),
        sigma, 0),
    st.floats(1.0, 3.0), st.lists(st.floats(0, 2), min_size=1, max_size=4),
    st.floats(0, 1), st.sampled_from([3, 6]))


@given(profiles_st, st.floats(0.5, 5.0), st.sampled_from([50.0, 100.0]), st.integers(0, 2**32 - 1))
def test_synthesized_streams_are_valid(profile, duration, rate, seed):
    s = synthesize_gait(profile, duration, rate, seed)
    assert s.n_samples == int(round(duration * rate))
    assert s.axes == profile.axes
    assert np.all(np.isfinite(s.data))
    assert np.allclose(np.diff(s.times), 1 / rate)


@given(st.lists(st.tuples(st.lists(f32, min_size=3 * 128, max_size=3 * 128),
                          st.one_of(st.none(), st.integers(0, 0xFFFE))),
                max_size=4),
       st.sampled_from([50.0, 100.0]))
def test_segments_binary_round_trip(tmp_path_factory, items, rate):
    path = tmp_path_factory.mktemp("seg") / "s.gaitseg"
    segs = [GaitSegment(np.array(v, dtype=np.float32).reshape(3, 128), None, lab)
            for v, lab in items]
    save_segments(segs, path, rate)
    back, back_rate = load_segments(path)
    assert back_rate == rate
    assert len(back) == len(segs)
    for a, b in zip(segs, back):
        assert np.array_equal(a.data, b.data) and a.label == b.label
    if segs:
        stream = load_stream(path, "segments-binary")
        expect = np.concatenate([s.data.T for s in segs])
        assert np.array_equal(stream.data, expect)
        assert stream.n_samples == SEGMENT_LENGTH * len(segs)


@given(st.integers(0, 200), st.sampled_from([3, 6]), st.sampled_from([50.0, 100.0]),
       st.one_of(st.none(), st.integers(0, 23)), st.integers(0, 2**32 - 1))
def test_csv_round_trip(tmp_path_factory, n, axes, rate, label, seed):
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    data = np.random.default_rng(seed).normal(size=(n, axes))
    s = ImuStream(rate, data, 0.0, label)
    save_stream(s, path)
    back = load_stream(path, rate_hz=rate)
    assert np.array_equal(back.data, s.data)
    # labels live in data rows, so an empty file cannot carry one
    assert back.label == (label if n else None) and back.axes == axes


def test_window_rejects_non_finite():
    with pytest.raises(FormatError):
        ImuWindow(0, 100, np.full((3, 10), np.inf))
