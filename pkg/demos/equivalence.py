"""Leaky ReLU vs linear network on symmetric data.

Trains a two-layer leaky ReLU net and the linear net started from the
rescaled weights sqrt((a+1)/2) W(0) with learning rate eta (a+1)/2, then
prints the loss of both at matched times and the relative weight error.

    python3 demos/equivalence.py
"""
import numpy as np

from relulab.analysis import equivalence_report
from relulab.datasets import compute_stats, make_symmetric_gaussian
from relulab.dynamics import TrainConfig, integrate_linear, train
from relulab.model import init_gaussian
from relulab.numkit import make_rng

data = make_symmetric_gaussian(make_rng(0), 100, 5)
stats = compute_stats(data)
cfg = TrainConfig(eta=0.004, steps=12000, snapshot_every=100, monitors=())

for alpha in (0.0, 0.5):
    c = (alpha + 1) / 2
    net = init_gaussian(make_rng(1), [5, 60, 1], 1e-6, alpha)
    relu = train(net, data, cfg)
    lin = integrate_linear(net.scaled(np.sqrt(c)).replace(alpha=1.0), stats, cfg.with_(eta=cfg.eta * c))
    rep = equivalence_report(relu, lin, alpha)
    print(f"alpha={alpha}: max loss gap {rep.max_loss_gap:.2e}, max weight error {rep.max_weight_error:.2e}")
    for k in range(0, len(relu.losses), 2000):
        print(f"  step {k:6d}  relu {relu.losses[k]:.5f}  linear {lin.losses[k]:.5f}")
