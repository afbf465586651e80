"""Six-point dataset with one point moved off symmetry by delta.

The ReLU net first learns the linear solution and sits there; the plateau
gets longer as delta shrinks. Prints the time at which the loss leaves the
level of the best linear map. The escape time grows roughly like 1/delta.
For large delta the net then settles at a non-zero loss, and at delta 0.05
the loss spikes once after the escape before converging.

    python3 demos/plateau.py      # about a minute
"""
import numpy as np

from relulab.datasets import make_named
from relulab.dynamics import TrainConfig, train
from relulab.model import init_gaussian
from relulab.numkit import make_rng

cfg = TrainConfig(eta=0.025, steps=200000, snapshot_every=200000, monitors=())
for delta in (0.05, 0.1, 0.2):
    data = make_named("asym6", {"delta": delta})
    tr = train(init_gaussian(make_rng(1), [2, 100, 1], 1e-3, 0.0), data, cfg)
    t, loss = tr.time_array(), tr.loss_array()
    w = np.linalg.lstsq(data.inputs, data.targets, rcond=None)[0]
    level = 0.5 * np.mean((data.inputs @ w - data.targets) ** 2)
    reached = np.argmax(loss < 1.01 * level)
    below = np.flatnonzero(loss[reached:] < 0.99 * level)
    escape = f"{t[reached + below[0]]:7.1f}" if below.size else "   none"
    print(f"delta={delta:<5} linear level {level:.4f}  reached t={t[reached]:6.1f}  "
          f"escape t={escape}  final loss {loss[-1]:.2e}")
