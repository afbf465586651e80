"""Three-layer ReLU net on a linear teacher: the learned weights take a
block form. The first and last layers are rank one, the middle layer is
rank two with a positive and a negative block, and the net implements half
of the raw product of its weights.

    python3 demos/deep_structure.py   # about ten seconds
"""
import numpy as np

from relulab.analysis import structure_report
from relulab.datasets import make_symmetric_gaussian
from relulab.dynamics import TrainConfig, train
from relulab.model import init_gaussian
from relulab.numkit import make_rng

data = make_symmetric_gaussian(make_rng(0), 200, 10, teacher="linear")
net = init_gaussian(make_rng(1), [10, 50, 50, 1], 1e-2, 0.0)
tr = train(net, data, TrainConfig(eta=0.1, steps=10000, monitors=()))
rep = structure_report(tr.final)
print(f"final loss {tr.losses[-1]:.2e}")
print("numerical ranks", rep.numerical_ranks)
print(f"negative mass of the middle layer {rep.negative_mass[1]:.4f}")
print("block norm ratios", np.round(rep.pos_neg_ratio, 4))
print(f"effective coefficient {rep.effective_coefficient:.4f}")
