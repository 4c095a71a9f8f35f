"""IMU data model, file I/O, resampling, windowing and synthetic gait.

Streams hold samples row-wise (``n_samples x axes``, the CSV layout);
windows and segments hold them channel-wise (``axes x n_samples``), which is
the layout every downstream numeric routine expects.
"""

import csv
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DegenerateInputError, FormatError, ParseError

AXIS_NAMES = ("ax", "ay", "az", "gx", "gy", "gz")
CANONICAL_RATE_HZ = 100.0
SEGMENT_LENGTH = 128
GYRO_GAIN = 2.0
RATE_TOLERANCE = 0.01

SEGMENTS_MAGIC = b"GAIT"
SEGMENTS_VERSION = 1
NO_LABEL = 0xFFFF


class ImuSample(NamedTuple):
    t: float
    ax: float
    ay: float
    az: float
    gx: Optional[float] = None
    gy: Optional[float] = None
    gz: Optional[float] = None


def _check_axes(axes):
    if axes not in (3, 6):
        raise FormatError(f"axes must be 3 or 6, got {axes}")


@dataclass(frozen=True, eq=False)
class ImuStream:
    """Uniformly sampled IMU recording.

    ``data`` has shape ``(n_samples, axes)`` with columns in ``AXIS_NAMES``
    order. Timestamps are implicit: ``t0 + i / rate_hz``.
    """

    rate_hz: float
    data: np.ndarray
    t0: float = 0.0
    label: Optional[int] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            if data.size == 0:
                data = data.reshape(0, 6)
            else:
                raise FormatError(f"stream data must be 2-D, got shape {data.shape}")
        if not self.rate_hz > 0:
            raise FormatError(f"rate_hz must be positive, got {self.rate_hz}")
        _check_axes(data.shape[1])
        if not np.all(np.isfinite(data)):
            raise FormatError("stream contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def axes(self):
        return self.data.shape[1]

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def duration(self):
        """Covered time, ``n_samples / rate_hz``."""
        return self.n_samples / self.rate_hz

    @property
    def times(self):
        return self.t0 + np.arange(self.n_samples) / self.rate_hz

    def samples(self):
        for t, row in zip(self.times, self.data):
            yield ImuSample(float(t), *map(float, row))

    def with_data(self, data, label=...):
        return ImuStream(self.rate_hz, data, self.t0,
                         self.label if label is ... else label)


@dataclass(frozen=True, eq=False)
class ImuWindow:
    start_t: float
    rate_hz: float
    data: np.ndarray  # (channels, n_samples)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise FormatError(f"window data must be 2-D, got shape {data.shape}")
        _check_axes(data.shape[0])
        if not np.all(np.isfinite(data)):
            raise FormatError("window contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def axes(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.rate_hz


@dataclass(frozen=True, eq=False)
class GaitSegment:
    data: np.ndarray  # (channels, 128)
    source_interval: Optional[tuple] = None
    label: Optional[int] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[1] != SEGMENT_LENGTH:
            raise FormatError(
                f"segment must be channels x {SEGMENT_LENGTH}, got {data.shape}")
        _check_axes(data.shape[0])
        object.__setattr__(self, "data", data)

    @property
    def axes(self):
        return self.data.shape[0]

    def as_window(self, rate_hz=CANONICAL_RATE_HZ):
        start = self.source_interval[0] if self.source_interval else 0.0
        return ImuWindow(start, rate_hz, self.data)


@dataclass(frozen=True)
class GaitProfile:
    """Parameters of one synthetic walker.

    ``harmonics[c]`` lists ``(amplitude, phase)`` pairs for channel ``c``;
    entry ``k`` drives the ``(k + 1) * step_hz`` component. Amplitudes are in
    accelerometer units; gyro channels are scaled by ``GYRO_GAIN``.
    """

    step_hz: float
    harmonics: tuple
    noise_sigma: float = 0.0
    class_id: Optional[int] = None

    def __post_init__(self):
        if not 1.0 <= self.step_hz <= 3.0:
            raise ValueError(f"step_hz must lie in [1, 3], got {self.step_hz}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        _check_axes(len(self.harmonics))
        harmonics = tuple(tuple((float(a), float(p)) for a, p in ch)
                          for ch in self.harmonics)
        object.__setattr__(self, "harmonics", harmonics)

    @property
    def axes(self):
        return len(self.harmonics)

    @classmethod
    def default(cls, axes=6, noise_sigma=0.05):
        """Walker with identical harmonic content on every channel."""
        chans = tuple(((1.0, 0.0), (0.3, 0.5)) for _ in range(axes))
        return cls(2.0, chans, noise_sigma, 0)


def default_profiles(n_classes=24, axes=6, noise_sigma=0.5, seed=0):
    """Return ``n_classes`` mutually distinct walker profiles.

    Step frequencies are evenly spread over the usual walking cadence of
    1.4-2.6 Hz and every channel gets its own three-harmonic mix.
    """
    rng = np.random.default_rng(seed)
    steps = np.linspace(1.4, 2.6, n_classes)
    rng.shuffle(steps)
    profiles = []
    for cls in range(n_classes):
        chans = []
        for _ in range(axes):
            amps = (rng.uniform(0.3, 1.0), rng.uniform(0.05, 0.6),
                    rng.uniform(0.0, 0.3))
            phases = rng.uniform(0, 2 * np.pi, size=3)
            chans.append(tuple(zip(amps, phases)))
        profiles.append(GaitProfile(float(steps[cls]), tuple(chans),
                                    noise_sigma, cls))
    return profiles


def synthesize_gait(profile, duration_s, rate_hz=CANONICAL_RATE_HZ, seed=0,
                    label=...):
    """Render a profile into an ``ImuStream``.

    The seed picks a start phase and the noise realisation, so two seeds
    give two different recordings of the same walker.
    """
    if not duration_s > 0:
        raise ValueError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz + rng.uniform(0, 1.0 / profile.step_hz)
    out = np.empty((n, profile.axes))
    for c, harmonics in enumerate(profile.harmonics):
        gain = GYRO_GAIN if c >= 3 else 1.0
        sig = np.zeros(n)
        for k, (amp, phase) in enumerate(harmonics, start=1):
            sig += amp * np.sin(2 * np.pi * k * profile.step_hz * t + phase)
        out[:, c] = gain * sig
    if profile.noise_sigma > 0:
        out += rng.normal(0.0, profile.noise_sigma, size=out.shape)
    return ImuStream(rate_hz, out, 0.0,
                     profile.class_id if label is ... else label)


def idle_stream(duration_s, rate_hz=CANONICAL_RATE_HZ, axes=6, noise_sigma=0.0,
                seed=0):
    """Standing-still recording: zeros plus optional sensor noise."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate_hz))
    data = rng.normal(0.0, noise_sigma, size=(n, axes)) if noise_sigma else np.zeros((n, axes))
    return ImuStream(rate_hz, data)


def concat_streams(streams, label=None):
    rate = streams[0].rate_hz
    if any(s.rate_hz != rate for s in streams):
        raise FormatError("cannot concatenate streams with different rates")
    return ImuStream(rate, np.concatenate([s.data for s in streams]),
                     streams[0].t0, label)


def resample_to_length(series, n):
    """Linearly resample the last axis of ``series`` to ``n`` points.

    The output grid spans the first to the last input sample, so both
    endpoints are reproduced exactly.
    """
    x = np.asarray(series, dtype=np.float64)
    length = x.shape[-1]
    if length < 2 or n < 2:
        raise DegenerateInputError(
            f"resampling needs >= 2 input and output points, got {length} -> {n}")
    if length == n:
        return x.copy()
    pos = np.linspace(0.0, length - 1, n)
    i0 = np.minimum(np.floor(pos).astype(np.int64), length - 2)
    frac = pos - i0
    return x[..., i0] * (1.0 - frac) + x[..., i0 + 1] * frac


def resample_rate(data, src_rate, dst_rate):
    """Resample channel-wise ``data`` from ``src_rate`` to ``dst_rate``.

    The output covers the same time span at the new rate; samples past the
    last input sample hold its value.
    """
    data = np.asarray(data, dtype=np.float64)
    if src_rate == dst_rate:
        return data
    n_in = data.shape[-1]
    n_out = int(round(n_in * dst_rate / src_rate))
    t_in = np.arange(n_in) / src_rate
    t_out = np.arange(n_out) / dst_rate
    return np.stack([np.interp(t_out, t_in, ch) for ch in data])


def window_stream(stream, window_s, hop_s):
    """Cut ``stream`` into fixed-length windows starting every ``hop_s``.

    A trailing partial window is dropped; a stream shorter than one window
    yields an empty list.
    """
    if not hop_s > 0:
        raise ValueError("hop_s must be positive")
    n_win = int(round(window_s * stream.rate_hz))
    if n_win < 1:
        raise ValueError("window_s is shorter than one sample")
    windows = []
    k = 0
    while True:
        start = int(round(k * hop_s * stream.rate_hz))
        if start + n_win > stream.n_samples:
            break
        windows.append(ImuWindow(stream.t0 + start / stream.rate_hz,
                                 stream.rate_hz,
                                 stream.data[start:start + n_win].T))
        k += 1
    return windows


# ---------------------------------------------------------------- CSV ----

def _format_float(x):
    return repr(float(x))


def save_stream(stream, path):
    """Write ``stream`` as CSV with columns ``t,ax,...[,label]``."""
    cols = ["t", *AXIS_NAMES[:stream.axes]]
    if stream.label is not None:
        cols.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for t, row in zip(stream.times, stream.data):
            rec = [_format_float(t), *map(_format_float, row)]
            if stream.label is not None:
                rec.append(str(stream.label))
            writer.writerow(rec)


def _parse_header(header, axes):
    names = [h.strip().lower() for h in header]
    has_label = bool(names) and names[-1] == "label"
    value_names = names[1:-1] if has_label else names[1:]
    if not names or names[0] != "t" or tuple(value_names) not in (
            AXIS_NAMES[:3], AXIS_NAMES):
        raise ParseError(f"unexpected header {header!r}", line=1)
    if axes is not None and len(value_names) != axes:
        raise ParseError(f"header has {len(value_names)} axes, expected {axes}",
                         line=1)
    return len(value_names), has_label


def _load_csv(path, rate_hz, axes):
    times, rows = [], []
    label = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header", line=1) from None
        n_axes, has_label = _parse_header(header, axes)
        width = 1 + n_axes + int(has_label)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != width:
                raise ParseError(f"expected {width} fields, got {len(rec)}", line=lineno)
            try:
                vals = [float(c) for c in rec[:1 + n_axes]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", line=lineno)
            if has_label:
                cell = rec[-1].strip()
                try:
                    row_label = int(cell) if cell else None
                except ValueError:
                    raise ParseError(f"bad label {cell!r}", line=lineno) from None
                if len(rows) == 0:
                    label = row_label
                elif row_label != label:
                    raise ParseError("stream mixes labels", line=lineno)
            times.append(vals[0])
            rows.append(vals[1:])

    t = np.asarray(times)
    if t.size >= 2:
        dt = np.diff(t)
        if rate_hz is None:
            rate_hz = 1.0 / float(np.median(dt))
        expected = 1.0 / rate_hz
        bad = np.flatnonzero(np.abs(dt - expected) > RATE_TOLERANCE * expected)
        if bad.size:
            raise FormatError(
                f"timestamp spacing {dt[bad[0]]:.6g} s at row {bad[0] + 2} "
                f"deviates more than 1% from {expected:.6g} s")
    if rate_hz is None:
        rate_hz = CANONICAL_RATE_HZ
    data = np.asarray(rows, dtype=np.float64).reshape(-1, n_axes)
    t0 = float(t[0]) if t.size else 0.0
    return ImuStream(float(rate_hz), data, t0, label)


# ---------------------------------------------------- segments-binary ----

_SEG_HEADER = struct.Struct("<4sHBfI")


def save_segments(segments, path, rate_hz=CANONICAL_RATE_HZ):
    """Write segments in the little-endian ``GAIT`` binary format."""
    segments = list(segments)
    axes = segments[0].axes if segments else 6
    with open(path, "wb") as fh:
        fh.write(_SEG_HEADER.pack(SEGMENTS_MAGIC, SEGMENTS_VERSION, axes,
                                  rate_hz, len(segments)))
        for seg in segments:
            if seg.axes != axes:
                raise FormatError("all segments must share one axis count")
            fh.write(np.ascontiguousarray(seg.data, dtype="<f4").tobytes())
            label = NO_LABEL if seg.label is None else int(seg.label)
            fh.write(struct.pack("<H", label))


def load_segments(path):
    """Read a ``GAIT`` file; returns ``(segments, rate_hz)``.

    Segment data come back as float32, so a save/load round trip is exact.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SEG_HEADER.size:
        raise FormatError("truncated header", offset=len(raw))
    magic, version, axes, rate, count = _SEG_HEADER.unpack_from(raw, 0)
    if magic != SEGMENTS_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != SEGMENTS_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if axes not in (3, 6):
        raise FormatError(f"bad axis count {axes}", offset=6)
    block = axes * SEGMENT_LENGTH * 4
    off = _SEG_HEADER.size
    segments = []
    for i in range(count):
        if off + block + 2 > len(raw):
            raise FormatError(f"truncated segment {i}", offset=off)
        data = np.frombuffer(raw, dtype="<f4", count=axes * SEGMENT_LENGTH,
                             offset=off).reshape(axes, SEGMENT_LENGTH).astype(np.float32)
        (label,) = struct.unpack_from("<H", raw, off + block)
        t0 = i * SEGMENT_LENGTH / rate
        segments.append(GaitSegment(data, (t0, t0 + SEGMENT_LENGTH / rate),
                                    None if label == NO_LABEL else label))
        off += block + 2
    return segments, float(rate)


def load_stream(path, format="csv", rate_hz=None, axes=None):
    """Load an ``ImuStream`` from CSV or from a segments-binary file.

    For segments-binary input the segments are concatenated in file order;
    the stream label is kept only when every segment shares it.
    """
    if format == "csv":
        return _load_csv(path, rate_hz, axes)
    if format == "segments-binary":
        segments, rate = load_segments(path)
        if axes is not None and segments and segments[0].axes != axes:
            raise FormatError(f"file has {segments[0].axes} axes, expected {axes}")
        if not segments:
            return ImuStream(rate, np.zeros((0, axes or 6)))
        labels = {s.label for s in segments}
        data = np.concatenate([s.data.T for s in segments])
        return ImuStream(rate, data, 0.0, labels.pop() if len(labels) == 1 else None)
    raise ValueError(f"unknown format {format!r}")
