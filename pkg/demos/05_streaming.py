# Streaming identification
#
# The engine buffers samples, classifies the latest three seconds four
# times per second, averages the last four outputs and reports "unknown"
# when the average is not confident. Here walker 5 walks, stands still,
# then walker 17 takes over.

# In[1]:

import numpy as np

from gaitid import StreamEngine, TrainConfig, default_profiles, replay, synthesize_gait, train
from gaitid.datasets import background_dataset, synthetic_dataset
from gaitid.imu import concat_streams, idle_stream

profiles = default_profiles()
X, y = synthetic_dataset(profiles, 60, seed=1)
Xb, yb = background_dataset(120, seed=3)
params, _ = train(np.concatenate([X, Xb]), np.concatenate([y, yb]), TrainConfig(epochs=8))


# In[2]:

stream = concat_streams([synthesize_gait(profiles[5], 8.0, seed=10, label=None),
                         idle_stream(6.0),
                         synthesize_gait(profiles[17], 8.0, seed=11, label=None)])
events = replay(StreamEngine(params), stream)
print(len(events), "events over", stream.duration, "s")


# Print one event per second. Windows that straddle a transition mix two
# regimes, so the label can flicker for a moment before settling.

# In[3]:

for ev in events[::4]:
    print(f"t={ev.t:5.2f}s  label={str(ev.smoothed_label):>7}  confidence {ev.confidence:.2f}  "
          f"({ev.latency_ms:.2f} ms)")
