# Train the CNN, then run it in int8
#
# A reduced run (60 windows per walker, 8 epochs) keeps this script quick;
# the test suite trains the full-size configuration.

# In[1]:

import time

import numpy as np

from gaitid import (TrainConfig, calibrate, default_profiles, evaluate, memory_report,
                    quantize, train)
from gaitid.cli import format_memory
from gaitid.datasets import background_dataset, synthetic_dataset
from gaitid.quant import accuracy_delta

profiles = default_profiles()
X, y = synthetic_dataset(profiles, 60, seed=1)
Xb, yb = background_dataset(120, seed=3)
X_train, y_train = np.concatenate([X, Xb]), np.concatenate([y, yb])
X_test, y_test = synthetic_dataset(profiles, 20, seed=2)
print("train", X_train.shape, "test", X_test.shape)


# Non-walking windows carry the label -1 and are trained toward a flat
# output, so idle input later falls below the confidence gate.

# In[2]:

start = time.perf_counter()
params, history = train(X_train, y_train, TrainConfig(epochs=8))
print(f"trained {params.n_params:,} parameters in {time.perf_counter() - start:.1f} s")
for h in history:
    print(f"epoch {h['epoch']}: loss {h['train_loss']:.3f}  val_acc {h['val_acc']:.3f}")
print(evaluate(params, X_test, y_test).format().splitlines()[0])


# Post-training quantization: calibrate activation ranges on training
# windows, then compare both paths on the test set.

# In[3]:

qmodel = quantize(params, calibrate(params, X_train))
f_acc, q_acc, delta = accuracy_delta(params, qmodel, X_test, y_test)
print(f"float {f_acc:.4f}  int8 {q_acc:.4f}  drop {100 * delta:.2f} points")


# In[4]:

print(format_memory(memory_report(qmodel)))
