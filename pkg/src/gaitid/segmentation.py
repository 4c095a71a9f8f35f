"""Walking-period detection and two-step gait segmentation.

Used on the data-preparation path only: streams are scored window by window,
walking stretches are cut out, step peaks are picked on the dominant channel
and every run of three consecutive peaks becomes one 128-sample segment.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .errors import DegenerateInputError
from .imu import (CANONICAL_RATE_HZ, SEGMENT_LENGTH, GaitSegment, resample_rate,
                  resample_to_length, window_stream)
from .tinycnn import Adam, softmax

MIN_WINDOW_SAMPLES = 64
STEP_BAND_HZ = (1.0, 3.0)
SMOOTH_SAMPLES = 5


@dataclass(frozen=True)
class Interval:
    start_t: float
    end_t: float
    kind: str = "walking"

    def __post_init__(self):
        if not self.end_t > self.start_t:
            raise ValueError(f"empty interval [{self.start_t}, {self.end_t}]")

    @property
    def duration(self):
        return self.end_t - self.start_t


@dataclass(frozen=True, eq=False)
class PeakList:
    indices: np.ndarray
    prominences: np.ndarray

    def __len__(self):
        return len(self.indices)


def dominant_channel(data):
    """Row of ``data`` (channels x samples) with the largest variance."""
    return int(np.argmax(np.var(data, axis=-1)))


# ----------------------------------------------------- walking scores ----

def _autocorr_peak(x, rate_hz):
    """Largest normalised autocorrelation over lags of one 1-3 Hz period.

    Lags leaving fewer than a quarter of the window overlapping are skipped.
    """
    n = len(x)
    lo = int(np.ceil(rate_hz / STEP_BAND_HZ[1]))
    hi = min(int(np.floor(rate_hz / STEP_BAND_HZ[0])), n - n // 4)
    best = 0.0
    for k in range(lo, hi + 1):
        a, b = x[:-k], x[k:]
        denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
        if denom > 0:
            best = max(best, float(np.dot(a, b) / denom))
    return best


def _band_ratio(x, rate_hz):
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / rate_hz)
    total = power[1:].sum()
    if total <= 0:
        return 0.0
    band = (freqs >= STEP_BAND_HZ[0]) & (freqs <= STEP_BAND_HZ[1])
    return float(power[band].sum() / total)


def heuristic_score(data, rate_hz):
    """Mean of step-lag autocorrelation and 1-3 Hz band-power share.

    Both terms are ratios, so the score ignores the signal's scale.
    """
    x = data[dominant_channel(data)]
    x = x - x.mean()
    if not np.any(x):
        return 0.0
    score = 0.5 * (_autocorr_peak(x, rate_hz) + _band_ratio(x, rate_hz))
    return float(np.clip(score, 0.0, 1.0))


class WalkingDetector:
    """Small 1-D CNN scoring a window's dominant channel as walking or not.

    conv(8 filters, kernel 9, same) -> ReLU -> conv(8, 9) -> ReLU
    -> global average pool -> dense 2 -> softmax. The input is standardised
    per window, which makes the score scale-free like the heuristic.
    """

    filters = 8
    kernel = 9

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        f, k = self.filters, self.kernel

        def he(shape, fan_in):
            lim = np.sqrt(6.0 / fan_in)
            return rng.uniform(-lim, lim, size=shape)

        self.params = [he((k, f), k), np.zeros(f),
                       he((k * f, f), k * f), np.zeros(f),
                       he((f, 2), f), np.zeros(2)]

    @staticmethod
    def _prep(x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        x = x - x.mean(axis=1, keepdims=True)
        std = x.std(axis=1, keepdims=True)
        return np.divide(x, std, out=np.zeros_like(x), where=std > 0)

    def _cols(self, h):
        pad = self.kernel // 2
        hp = np.pad(h, ((0, 0), (pad, pad), (0, 0)))
        win = sliding_window_view(hp, self.kernel, axis=1)  # (B, n, C, k)
        return win.transpose(0, 1, 3, 2).reshape(h.shape[0], h.shape[1], -1)

    def _forward(self, x):
        w1, b1, w2, b2, w3, b3 = self.params
        c1 = self._cols(x[:, :, None])
        z1 = c1 @ w1 + b1
        a1 = np.maximum(z1, 0)
        c2 = self._cols(a1)
        z2 = c2 @ w2 + b2
        a2 = np.maximum(z2, 0)
        g = a2.mean(axis=1)
        return g @ w3 + b3, (c1, z1, c2, z2, g)

    def predict_proba(self, x):
        return softmax(self._forward(self._prep(x))[0])[:, 1]

    def loss_and_grads(self, x, y):
        x = self._prep(x)
        w1, b1, w2, b2, w3, b3 = self.params
        out, (c1, z1, c2, z2, g) = self._forward(x)
        p = softmax(out)
        bsz, n = x.shape
        loss = -np.mean(np.log(p[np.arange(bsz), y] + 1e-300))
        d = p.copy()
        d[np.arange(bsz), y] -= 1
        d /= bsz
        gw3, gb3 = g.T @ d, d.sum(0)
        da2 = np.repeat((d @ w3.T)[:, None, :] / n, n, axis=1)
        dz2 = da2 * (z2 > 0)
        gw2 = c2.reshape(-1, c2.shape[-1]).T @ dz2.reshape(-1, self.filters)
        gb2 = dz2.sum((0, 1))
        dc2 = (dz2 @ w2.T).reshape(bsz, n, self.kernel, self.filters)
        # col-to-image: column j of output t reads padded position t + j
        pad = self.kernel // 2
        da1 = np.zeros((bsz, n + 2 * pad, self.filters))
        for j in range(self.kernel):
            da1[:, j:j + n] += dc2[:, :, j]
        da1 = da1[:, pad:pad + n]
        dz1 = da1 * (z1 > 0)
        gw1 = c1.reshape(-1, self.kernel).T @ dz1.reshape(-1, self.filters)
        gb1 = dz1.sum((0, 1))
        return float(loss), [gw1, gb1, gw2, gb2, gw3, gb3]

    def fit(self, x, y, epochs=15, batch_size=32, lr=3e-3, seed=0):
        rng = np.random.default_rng(seed)
        opt = Adam(lr)
        y = np.asarray(y)
        for _ in range(epochs):
            order = rng.permutation(len(y))
            for s in range(0, len(y), batch_size):
                idx = order[s:s + batch_size]
                _, grads = self.loss_and_grads(x[idx], y[idx])
                opt.step(self.params, grads)
        return self


def detector_training_set(n_per_class=600, n=100, rate_hz=CANONICAL_RATE_HZ, seed=0):
    """Single-channel walking / non-walking windows for ``WalkingDetector``."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate_hz
    walk = []
    for _ in range(n_per_class):
        f = rng.uniform(1.0, 3.0)
        sig = sum(rng.uniform(0.0, 1.0) * np.sin(2 * np.pi * k * f * t + rng.uniform(0, 6.3))
                  for k in (2, 3))
        sig = sig + rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * f * t + rng.uniform(0, 6.3))
        walk.append(sig + rng.normal(0, rng.uniform(0.0, 0.5), n))
    rest = []
    for i in range(n_per_class):
        kind = i % 4
        if kind == 0:
            x = rng.normal(0, 10 ** rng.uniform(-4, 0), n)
        elif kind == 1:
            x = np.cumsum(rng.normal(0, 1, n))
        elif kind == 2:
            x = np.zeros(n)
            x[rng.integers(0, n)] = rng.uniform(1, 5)
            x = uniform_filter1d(x, rng.integers(3, 15)) + rng.normal(0, 0.05, n)
        else:
            x = np.zeros(n) if i % 8 == 3 else rng.normal(0, 1e-3, n)
        rest.append(x)
    X = np.asarray(walk + rest)
    y = np.r_[np.ones(n_per_class, int), np.zeros(n_per_class, int)]
    return X, y


@lru_cache(maxsize=1)
def default_detector():
    """The learned detector trained once, deterministically, on synthetic data."""
    X, y = detector_training_set()
    return WalkingDetector(seed=0).fit(X, y)


def score_walking(window, method="heuristic", detector=None):
    """Probability-like score in [0, 1] that ``window`` shows walking."""
    if window.n_samples < MIN_WINDOW_SAMPLES:
        raise DegenerateInputError(
            f"walking score needs >= {MIN_WINDOW_SAMPLES} samples, got {window.n_samples}")
    if method == "heuristic":
        return heuristic_score(window.data, window.rate_hz)
    if method == "learned":
        data = resample_rate(window.data, window.rate_hz, CANONICAL_RATE_HZ)
        det = detector or default_detector()
        return float(np.clip(det.predict_proba(data[dominant_channel(data)])[0], 0, 1))
    raise ValueError(f"unknown method {method!r}")


def extract_walking_intervals(stream, threshold=0.5, min_duration_s=2.0,
                              method="heuristic", window_s=1.0, hop_s=0.5,
                              detector=None):
    """Walking stretches of ``stream`` as sorted, disjoint intervals.

    Windows scoring at or above ``threshold`` are kept; the time spans they
    cover are merged when they overlap or touch, then short runs dropped.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    spans = []
    for win in window_stream(stream, window_s, hop_s):
        if score_walking(win, method, detector) < threshold:
            continue
        start, end = win.start_t, win.start_t + win.duration
        if spans and start <= spans[-1][1] + 1e-9:
            spans[-1][1] = end
        else:
            spans.append([start, end])
    return [Interval(s, e) for s, e in spans if e - s >= min_duration_s - 1e-9]


# ---------------------------------------------------------------- peaks ---

def detect_step_peaks(samples, rate_hz=CANONICAL_RATE_HZ, min_distance_s=0.25,
                      prominence_frac=0.3):
    """Step peaks on the smoothed dominant channel.

    Candidates are local maxima of a 5-sample moving average whose
    prominence exceeds ``prominence_frac`` times the channel's range. The
    minimum spacing is enforced greedily, most prominent peak first.
    """
    data = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if data.shape[1] < rate_hz:
        raise DegenerateInputError("peak detection needs at least 1 s of samples")
    x = uniform_filter1d(data[dominant_channel(data)], SMOOTH_SAMPLES, mode="nearest")
    span = x.max() - x.min()
    empty = PeakList(np.zeros(0, dtype=np.int64), np.zeros(0))
    if span <= 0:
        return empty
    idx, props = find_peaks(x, prominence=0)
    prom = props["prominences"]
    keep = prom > prominence_frac * span
    idx, prom = idx[keep], prom[keep]
    if idx.size == 0:
        return empty

    min_dist = min_distance_s * rate_hz
    chosen = []
    for i in np.argsort(-prom, kind="stable"):
        if all(abs(idx[i] - idx[j]) >= min_dist for j in chosen):
            chosen.append(i)
    chosen = np.sort(np.asarray(chosen))
    return PeakList(idx[chosen].astype(np.int64), prom[chosen])


def split_two_step_segments(samples, peaks, cv_max=0.2, t0=0.0,
                            rate_hz=CANONICAL_RATE_HZ, label=None):
    """Resample every peak[i]..peak[i+2] span to a 128-sample ``GaitSegment``.

    A segment is dropped when its two step gaps deviate from the median
    gap by a coefficient of variation above ``cv_max``.
    """
    data = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    idx = np.asarray(getattr(peaks, "indices", peaks), dtype=np.int64)
    if len(idx) < 3:
        return []
    gaps = np.diff(idx).astype(np.float64)
    med = float(np.median(gaps))
    segments = []
    for i in range(len(idx) - 2):
        pair = gaps[i:i + 2]
        cv = np.sqrt(np.mean((pair - med) ** 2)) / med
        if cv > cv_max:
            continue
        a, b = idx[i], idx[i + 2]
        seg = resample_to_length(data[:, a:b + 1], SEGMENT_LENGTH)
        segments.append(GaitSegment(seg, (t0 + a / rate_hz, t0 + b / rate_hz), label))
    return segments


def segment_stream(stream, threshold=0.5, min_duration_s=2.0, cv_max=0.2,
                   method="heuristic", min_distance_s=0.25, prominence_frac=0.3):
    """Full data-prep path: walking intervals -> peaks -> two-step segments."""
    segments = []
    for iv in extract_walking_intervals(stream, threshold, min_duration_s, method):
        a = int(round((iv.start_t - stream.t0) * stream.rate_hz))
        b = min(stream.n_samples, int(round((iv.end_t - stream.t0) * stream.rate_hz)))
        chunk = stream.data[a:b].T
        if chunk.shape[1] < stream.rate_hz:
            continue
        peaks = detect_step_peaks(chunk, stream.rate_hz, min_distance_s, prominence_frac)
        segments += split_two_step_segments(chunk, peaks, cv_max, iv.start_t,
                                            stream.rate_hz, stream.label)
    return segments
