"""Sliding-window identification over a live sample stream.

The engine keeps the newest samples in a ring buffer. Once a full window is
buffered it classifies the window every ``1 / inferences_per_second``
seconds, averages the last K probability vectors and reports ``UNKNOWN``
whenever the averaged top probability stays below the confidence gate.
"""

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ModeError
from .features import featurize
from .imu import CANONICAL_RATE_HZ, ImuWindow

UNKNOWN = "unknown"


@dataclass(eq=False)
class PredictionEvent:
    t: float
    raw_probs: np.ndarray
    smoothed_probs: np.ndarray
    smoothed_label: object   # class id or UNKNOWN
    confidence: float
    latency_ms: float

    def to_record(self, with_probs=False):
        rec = {"t": round(self.t, 6), "label": self.smoothed_label,
               "confidence": round(self.confidence, 6),
               "raw_label": int(np.argmax(self.raw_probs)),
               "latency_ms": round(self.latency_ms, 4)}
        if with_probs:
            rec["raw_probs"] = [round(float(p), 6) for p in self.raw_probs]
        return rec

    def same_decision(self, other):
        """Equality ignoring wall-clock latency."""
        return (self.t == other.t and self.smoothed_label == other.smoothed_label
                and np.array_equal(self.raw_probs, other.raw_probs)
                and np.array_equal(self.smoothed_probs, other.smoothed_probs))


def smooth(history, tau=0.6):
    """Average the probability vectors in ``history`` and gate the result.

    Returns ``(mean_probs, label)``; ``label`` is the argmax (lowest index on
    ties) or ``UNKNOWN`` when the top averaged probability is below ``tau``.
    """
    if len(history) == 0:
        raise ValueError("smoothing needs at least one probability vector")
    probs = np.mean(np.asarray(history, dtype=np.float64), axis=0)
    k = int(np.argmax(probs))
    return probs, (k if probs[k] >= tau else UNKNOWN)


class StreamEngine:
    """Ring buffer + sliding window + smoothing + confidence gate.

    ``model`` is anything with ``predict_proba(grids)``: float ``ModelParams``
    or an integer ``QuantModel``. Single owner: one producer pushes, one
    consumer steps.
    """

    def __init__(self, model, rate_hz=CANONICAL_RATE_HZ, axes=6, window_s=3.0,
                 inferences_per_second=4.0, tau=0.6, smooth_k=4, capacity=None,
                 t0=0.0):
        if axes not in (3, 6):
            raise ModeError(f"axes must be 3 or 6, got {axes}")
        self.hop_s = 1.0 / inferences_per_second
        if self.hop_s > window_s:
            raise ValueError("hop (1 / inferences_per_second) exceeds the window")
        if smooth_k < 1:
            raise ValueError("smooth_k must be >= 1")
        self.model = model
        self.rate_hz = float(rate_hz)
        self.axes = axes
        self.window_s = window_s
        self.tau = tau
        self.t0 = t0
        self.window_samples = int(round(window_s * rate_hz))
        self.capacity = max(int(capacity or 0), 2 * self.window_samples)
        self._buf = np.zeros((self.capacity, axes))
        self._write = 0
        self._total = 0
        self.history = deque(maxlen=smooth_k)
        self.last_emit_t = None

    @property
    def clock(self):
        """Stream time at the end of the newest buffered sample."""
        return self.t0 + self._total / self.rate_hz

    @property
    def buffered(self):
        return min(self._total, self.capacity)

    def buffer_contents(self, n=None):
        """The newest ``n`` buffered samples (default: all), oldest first."""
        n = self.buffered if n is None else min(n, self.buffered)
        idx = (self._write - n + np.arange(n)) % self.capacity
        return self._buf[idx]

    def push_samples(self, samples):
        """Append rows of ``samples``; the oldest are evicted on overflow."""
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.axes:
            raise ModeError(f"engine expects {self.axes}-axis samples, got shape {x.shape}")
        n = len(x)
        keep = x[-self.capacity:]
        idx = (self._write + np.arange(len(keep)) + (n - len(keep))) % self.capacity
        self._buf[idx] = keep
        self._write = (self._write + n) % self.capacity
        self._total += n
        return n

    def step(self, now_t=None):
        """Classify the newest window if one is due; otherwise return None."""
        now = self.clock if now_t is None else now_t
        if self.buffered < self.window_samples:
            return None
        if self.last_emit_t is not None and now - self.last_emit_t < self.hop_s - 1e-9:
            return None
        start = time.perf_counter()
        window = ImuWindow(now - self.window_s, self.rate_hz,
                           self.buffer_contents(self.window_samples).T)
        raw = np.asarray(self.model.predict_proba(featurize(window).values[None]))[0]
        latency = (time.perf_counter() - start) * 1e3
        self.history.append(raw)
        probs, label = smooth(self.history, self.tau)
        self.last_emit_t = now
        return PredictionEvent(now, raw, probs, label, float(probs.max()), latency)


def replay(engine, stream, speed=0.0, on_event=None):
    """Feed ``stream`` sample by sample, stepping after each one.

    ``speed`` 1 paces samples in real time, N runs N times faster and 0 runs
    as fast as possible. The events depend only on the samples, never on
    the pacing.
    """
    events = []
    wall0 = time.perf_counter()
    for i, row in enumerate(stream.data):
        if speed > 0:
            due = wall0 + (i + 1) / stream.rate_hz / speed
            delay = due - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        engine.push_samples(row)
        ev = engine.step()
        if ev is not None:
            events.append(ev)
            if on_event:
                on_event(ev)
    return events


def bench(model, n_windows=200, axes=6, rate_hz=CANONICAL_RATE_HZ, window_s=3.0,
          seed=0):
    """Per-window latency statistics in milliseconds.

    ``inference_*`` times the model alone on one grid; ``featurize_mean_ms``
    times feature extraction of one window.
    """
    rng = np.random.default_rng(seed)
    n = int(round(window_s * rate_hz))
    windows = [ImuWindow(0.0, rate_hz, rng.normal(0, 1, (axes, n))) for _ in range(n_windows)]
    feat_t, inf_t = [], []
    for w in windows:
        t = time.perf_counter()
        grid = featurize(w).values[None]
        feat_t.append(time.perf_counter() - t)
        t = time.perf_counter()
        model.predict_proba(grid)
        inf_t.append(time.perf_counter() - t)
    inf = np.asarray(inf_t) * 1e3
    return {"n_windows": n_windows,
            "inference_mean_ms": float(inf.mean()),
            "inference_p50_ms": float(np.percentile(inf, 50)),
            "inference_p95_ms": float(np.percentile(inf, 95)),
            "inference_max_ms": float(inf.max()),
            "featurize_mean_ms": float(np.mean(feat_t) * 1e3)}
