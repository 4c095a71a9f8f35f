# From a window to a 13 x 6 feature grid
#
# Each axis contributes 13 numbers: rms, skewness, excess kurtosis, the
# dominant frequency, its log power, and the log power of eight FFT bins.
# The FFT is a radix-2 transform over 16-sample frames, averaged across
# frames that overlap by half.

# In[1]:

import numpy as np

from gaitid import default_profiles, featurize, real_fft, synthesize_gait, welch_power
from gaitid.features import FEATURE_NAMES
from gaitid.imu import window_stream

x = np.cos(2 * np.pi * 2 * np.arange(16) / 16)
print("power of a bin-2 cosine:", np.round(real_fft(x).power, 6))


# Welch averaging on a longer signal: a 25 Hz tone lands in bin 4
# (100 Hz / 16 = 6.25 Hz per bin).

# In[2]:

t = np.arange(300) / 100
p = welch_power(np.sin(2 * np.pi * 25 * t))
print("strongest bin", int(np.argmax(p)), "of", len(p))


# In[3]:

stream = synthesize_gait(default_profiles()[0], 6.0, seed=0)
window = window_stream(stream, 3.0, 1.0)[0]
grid = featurize(window)
print("grid shape", grid.values.shape)
print(f"{'feature':>12}  " + "  ".join(f"{a:>7}" for a in ("ax", "ay", "az", "gx", "gy", "gz")))
for name, row in zip(FEATURE_NAMES, grid.values):
    print(f"{name:>12}  " + "  ".join(f"{v:7.3f}" for v in row))
