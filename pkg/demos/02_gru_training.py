"""
Training the recurrent head
===========================

The GRU head maps 1280-dim classifier features to a per-frame quality.
Here it learns a toy target (sigmoid of the running mean of feature 0),
which needs memory of every earlier frame.

Takes a minute or two on a laptop CPU.
"""

import numpy as np

from fetalkey import gru
from fetalkey.synthetic import running_mean_task

data = running_mean_task(120, seed=0)
train_set, val_set = data[:100], data[100:]
print("sequence lengths:", [len(x) for x, _ in data[:8]], "...")

# hidden size 32 keeps the demo quick; the library default is 128
model = gru.GruHeadModel.init(hidden=32, seed=0)
print("untrained val MSE:", gru.evaluate(model, val_set))

# %% finite-difference spot check of one gradient entry
x, y = train_set[0]
x = x[:5]
y = y[:5]
_, grads = gru.backward(model, x, y, seed=1)
eps = 1e-6
probe = model.copy()
probe.layer2.U[1, 3, 2] += eps
up = gru.loss(gru.forward(probe, x, mode="training", seed=1), y)
probe.layer2.U[1, 3, 2] -= 2 * eps
down = gru.loss(gru.forward(probe, x, mode="training", seed=1), y)
print("dL/dU analytic", grads["layer2.U"][1, 3, 2], "numeric", (up - down) / (2 * eps))

# %% train (lr 5e-4, weight decay 1e-5; patience shortened for the demo)
cfg = gru.TrainConfig(max_epochs=15, early_stop_patience=5)
best, history = gru.train(model, train_set, val_set, cfg,
                          progress=lambda e, tr, va: print(f"epoch {e:2d}  train {tr:.5f}  val {va:.5f}"))
print("best epoch", history.best_epoch, "stop:", history.stop_reason)

x, y = val_set[0]
pred = gru.forward(best, x)
print("target   ", np.round(y[:10], 3))
print("predicted", np.round(pred[:10], 3))
