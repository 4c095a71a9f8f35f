"""Synthetic labelled feature datasets for desk-scale experiments."""

import numpy as np

from .features import featurize_many
from .imu import (CANONICAL_RATE_HZ, ImuWindow, default_profiles, synthesize_gait,
                  window_stream)
from .tinycnn import BACKGROUND


def profile_windows(profile, n_windows, window_s=3.0, hop_s=1.0,
                    rate_hz=CANONICAL_RATE_HZ, seed=0):
    duration = window_s + (n_windows - 1) * hop_s
    stream = synthesize_gait(profile, duration, rate_hz, seed=seed)
    return window_stream(stream, window_s, hop_s)[:n_windows]


def synthetic_dataset(profiles=None, windows_per_class=200, window_s=3.0,
                      hop_s=1.0, rate_hz=CANONICAL_RATE_HZ, seed=0):
    """Featurized windows for every profile -> ``(X, y)``.

    ``X`` has shape ``(n, 13, axes)``. Each profile is rendered from its own
    seed derived from ``seed`` and the class id, so datasets built with
    different seeds never share a noise realisation.
    """
    if profiles is None:
        profiles = default_profiles()
    X, y = [], []
    for p in profiles:
        sub = int(np.random.SeedSequence([seed, p.class_id]).generate_state(1)[0])
        wins = profile_windows(p, windows_per_class, window_s, hop_s, rate_hz, sub)
        X.append(featurize_many(wins))
        y.append(np.full(len(wins), p.class_id))
    return np.concatenate(X).astype(np.float32), np.concatenate(y)


def background_windows(n_windows, window_s=3.0, rate_hz=CANONICAL_RATE_HZ,
                       axes=6, seed=0):
    """Non-walking windows: silence, sensor noise and aperiodic drift.

    Cycles through the three kinds so each is equally represented; the
    first window is exact silence.
    """
    rng = np.random.default_rng(seed)
    n = int(round(window_s * rate_hz))
    wins = []
    for i in range(n_windows):
        kind = i % 3
        if kind == 0:
            sigma = 0.0 if i == 0 else 10 ** rng.uniform(-4, -1)
            data = rng.normal(0.0, sigma, size=(axes, n)) if sigma else np.zeros((axes, n))
        elif kind == 1:
            data = rng.normal(0.0, 10 ** rng.uniform(-2, 0.3), size=(axes, n))
        else:
            steps = rng.normal(0.0, 10 ** rng.uniform(-2, -0.5), size=(axes, n))
            data = np.cumsum(steps, axis=1)
        wins.append(ImuWindow(0.0, rate_hz, data))
    return wins


def background_dataset(n_windows, window_s=3.0, rate_hz=CANONICAL_RATE_HZ,
                       axes=6, seed=0):
    X = featurize_many(background_windows(n_windows, window_s, rate_hz, axes, seed))
    return X.astype(np.float32), np.full(len(X), BACKGROUND)
