# Synthetic walkers
#
# Each walker is a GaitProfile: a step frequency plus a few harmonics per
# axis. The 24 default profiles differ in cadence and harmonic shape, which
# is enough for the classifier to tell them apart.

# In[1]:

import tempfile
from pathlib import Path

import numpy as np

from gaitid import default_profiles, load_stream, save_stream, synthesize_gait
from gaitid.imu import AXIS_NAMES

profiles = default_profiles()
print(len(profiles), "walkers")
for p in profiles[:5]:
    print(f"class {p.class_id:2d}: {p.step_hz:.3f} steps/s, "
          f"{len(p.harmonics[0])} harmonics per axis")


# Render ten seconds of walker 3 at 100 Hz. Gyro channels carry a larger
# gain than the accelerometer channels.

# In[2]:

stream = synthesize_gait(profiles[3], 10.0, seed=0)
print(stream.n_samples, "samples,", stream.axes, "axes, label", stream.label)
for name, col in zip(AXIS_NAMES, stream.data.T):
    print(f"  {name}: rms {np.sqrt(np.mean(col ** 2)):.3f}")


# The same walker at 50 Hz covers the same ten seconds with half the samples.

# In[3]:

slow = synthesize_gait(profiles[3], 10.0, rate_hz=50, seed=0)
print(slow.n_samples, "samples at", slow.rate_hz, "Hz")


# Streams round-trip through CSV (t, ax..gz, label).

# In[4]:

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "walk.csv"
    save_stream(stream, path)
    back = load_stream(path)
    print(path.read_text().splitlines()[0])
    print("max round-trip error", np.abs(back.data - stream.data).max())
