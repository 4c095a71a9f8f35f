"""Spectral featurization of IMU windows.

Each channel of a window is reduced to 13 numbers (see ``FEATURE_NAMES``):
three moments of the mean-removed signal, the dominant non-DC bin of a
Welch-averaged 16-point power spectrum (its frequency and log power) and the
log power of bins 1..8. Stacking channels column-wise gives the 13 x axes
grid the CNN consumes.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, ModeError, ShapeError, SizeError
from .imu import AXIS_NAMES, CANONICAL_RATE_HZ, resample_rate

FFT_LENGTH = 16
WELCH_HOP = 8
N_FEATURES = 13
LOG_EPS = 1e-10
MIN_SAMPLES = 64

FEATURE_NAMES = ("rms", "skew", "kurtosis", "dom_freq", "dom_log_power",
                 *(f"log_p{k}" for k in range(1, FFT_LENGTH // 2 + 1)))


@dataclass(frozen=True, eq=False)
class Spectrum:
    bins: np.ndarray   # (..., N/2 + 1) complex
    power: np.ndarray  # (..., N/2 + 1), |X[k]|^2 / N

    @property
    def n(self):
        return 2 * (self.bins.shape[-1] - 1)


_bitrev_cache = {}


def _bit_reverse(n):
    idx = _bitrev_cache.get(n)
    if idx is None:
        bits = n.bit_length() - 1
        idx = np.array([int(format(i, f"0{bits}b")[::-1], 2) for i in range(n)])
        _bitrev_cache[n] = idx
    return idx


def fft_radix2(x):
    """Full complex DFT of the last axis via iterative radix-2 DIT.

    Uses the ``exp(-2j*pi*k*n/N)`` convention. Length must be a power of two.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise SizeError(f"FFT length must be a power of two, got {n}")
    a = x[..., _bit_reverse(n)].astype(np.complex128)
    lead = a.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        w = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = a.reshape(*lead, n // m, m)
        even = blocks[..., :half]
        odd = blocks[..., half:] * w
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        m *= 2
    return a


def real_fft(frame):
    """One-sided spectrum of real frames (last axis, length a power of two >= 8)."""
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    if n < 8 or n & (n - 1):
        raise SizeError(f"real_fft needs a power-of-two length >= 8, got {n}")
    bins = fft_radix2(frame)[..., :n // 2 + 1]
    # exact for real input; the butterflies can leave -0.0 or rounding dust
    bins[..., 0] = bins[..., 0].real
    bins[..., -1] = bins[..., -1].real
    power = (bins.real ** 2 + bins.imag ** 2) / n
    return Spectrum(bins, power)


def welch_power(x, nfft=FFT_LENGTH, hop=WELCH_HOP):
    """Mean periodogram over rectangular frames of ``nfft`` samples every ``hop``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < nfft:
        raise DegenerateInputError(f"need at least {nfft} samples, got {x.shape[-1]}")
    frames = sliding_window_view(x, nfft, axis=-1)[..., ::hop, :]
    return real_fft(frames).power.mean(axis=-2)


def _channel_features(x, rate_hz):
    """Features for each row of ``x`` (channels x samples) -> (channels, 13)."""
    if x.shape[-1] < MIN_SAMPLES:
        raise DegenerateInputError(
            f"need at least {MIN_SAMPLES} samples per channel, got {x.shape[-1]}")
    scale = np.maximum(1.0, np.abs(x).max(axis=-1))
    x = x - x.mean(axis=-1, keepdims=True)
    var = np.mean(x ** 2, axis=-1)
    rms = np.sqrt(var)
    flat = rms <= 1e-12 * scale
    safe = np.where(flat, 1.0, var)
    skew = np.where(flat, 0.0, np.mean(x ** 3, axis=-1) / safe ** 1.5)
    kurt = np.where(flat, 0.0, np.mean(x ** 4, axis=-1) / safe ** 2 - 3.0)

    power = welch_power(x)
    band = power[..., 1:]
    k = 1 + np.argmax(band, axis=-1)
    dom_power = np.take_along_axis(power, k[..., None], axis=-1)[..., 0]
    silent = band.max(axis=-1) <= 0
    dom_freq = np.where(silent, 0.0, k * rate_hz / FFT_LENGTH)
    dom_power = np.where(silent, 0.0, dom_power)

    return np.column_stack([rms, skew, kurt, dom_freq,
                            np.log10(dom_power + LOG_EPS),
                            np.log10(band + LOG_EPS)])


def axis_features(samples, rate_hz=CANONICAL_RATE_HZ):
    """The 13 features of a single channel, in ``FEATURE_NAMES`` order."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("axis_features expects a 1-D channel")
    return _channel_features(x[None, :], rate_hz)[0]


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """13 x axes feature matrix; row = feature, column = axis."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape not in ((N_FEATURES, 3), (N_FEATURES, 6)):
            raise ShapeError(f"feature grid must be 13x3 or 13x6, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature grid contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def axes(self):
        return self.values.shape[1]

    def flatten(self):
        return self.values.reshape(-1)

    @classmethod
    def from_flat(cls, vec, axes=6):
        return cls(np.asarray(vec, dtype=np.float64).reshape(N_FEATURES, axes))


def feature_columns(axes=6):
    """Column names of a flattened grid (row-major: feature, then axis)."""
    return [f"{f}_{a}" for f in FEATURE_NAMES for a in AXIS_NAMES[:axes]]


def _canonical(window, rate_hz):
    return resample_rate(window.data, window.rate_hz, rate_hz)


def featurize(window, rate_hz=CANONICAL_RATE_HZ):
    """Feature grid of one window, resampled to ``rate_hz`` first if needed."""
    data = _canonical(window, rate_hz)
    return FeatureGrid(_channel_features(data, rate_hz).T)


def featurize_many(windows, rate_hz=CANONICAL_RATE_HZ):
    """Stack of feature grids, shape ``(n_windows, 13, axes)``.

    Windows of equal shape are processed in one vectorised pass.
    """
    windows = list(windows)
    if not windows:
        return np.zeros((0, N_FEATURES, 6))
    data = [_canonical(w, rate_hz) for w in windows]
    shapes = {d.shape for d in data}
    if len(shapes) == 1:
        stack = np.stack(data)
        b, c, n = stack.shape
        feats = _channel_features(stack.reshape(b * c, n), rate_hz)
        return feats.reshape(b, c, N_FEATURES).transpose(0, 2, 1)
    return np.stack([_channel_features(d, rate_hz).T for d in data])


def energy_report(window, rate_hz=CANONICAL_RATE_HZ):
    """Total non-DC Welch power of the accelerometer and gyro triples."""
    if window.axes != 6:
        raise ModeError("energy_report needs a 6-axis window")
    data = _canonical(window, rate_hz)
    data = data - data.mean(axis=-1, keepdims=True)
    band = welch_power(data)[:, 1:].sum(axis=-1)
    return {"accel": float(band[:3].sum()), "gyro": float(band[3:].sum())}
