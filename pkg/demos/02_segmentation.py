# Finding walking and cutting it into gait cycles
#
# A recording rarely starts mid-stride. Here five seconds of standing still
# surround ten seconds of walking; the segmenter should find the walk, detect
# steps inside it and cut two-step cycles resampled to 128 samples.

# In[1]:

import numpy as np

from gaitid import default_profiles, synthesize_gait
from gaitid.imu import ImuWindow, concat_streams, idle_stream
from gaitid.segmentation import (detect_step_peaks, extract_walking_intervals,
                                 score_walking, segment_stream)

walker = default_profiles()[8]
stream = concat_streams([idle_stream(5.0, noise_sigma=0.02, seed=1),
                         synthesize_gait(walker, 10.0, seed=2, label=None),
                         idle_stream(5.0, noise_sigma=0.02, seed=3)])
print(f"{stream.duration:.1f} s stream")


# Window scores: one-second windows, heuristic detector.

# In[2]:

for start in (2.0, 6.0, 10.0, 16.0):
    i = int(start * 100)
    w = ImuWindow(start, 100, stream.data[i:i + 100].T)
    print(f"t={start:4.1f}s  heuristic {score_walking(w):.2f}  "
          f"learned {score_walking(w, 'learned'):.2f}")


# In[3]:

intervals = extract_walking_intervals(stream)
for iv in intervals:
    print(f"walking from {iv.start_t:.1f} s to {iv.end_t:.1f} s")


# Step peaks inside the walking interval. Spacing should be close to
# 100 / step_hz samples.

# In[4]:

iv = intervals[0]
inside = stream.data[int(iv.start_t * 100):int(iv.end_t * 100)].T
peaks = detect_step_peaks(inside)
print(len(peaks), "peaks, median spacing", np.median(np.diff(peaks.indices)),
      "samples; expected", round(100 / walker.step_hz, 1))


# In[5]:

segments = segment_stream(stream)
print(len(segments), "two-step segments of shape", segments[0].data.shape)
for s in segments[:3]:
    print(f"  {s.source_interval[0]:.2f} s to {s.source_interval[1]:.2f} s")
