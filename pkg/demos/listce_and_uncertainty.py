"""
Grouped ListCE and uncertainty weighting
========================================

ListCE compares sigmoid scores normalised inside each group with the
normalised labels. Each level's loss is then weighted by a learned
uncertainty whose optimum sits at sigma^2 = loss.
"""

import math

import numpy as np
from scipy.optimize import minimize

from grouprank import build_partitions, hierarchical_loss, listce_level
from grouprank.core import sigmoid

logits = np.array([2.0, 0.5, -1.0, 0.3, 0.3, 0.3])
labels = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
codes = np.array([[0], [0], [0], [1], [1], [1]])
part = build_partitions(codes)[0]

loss, grad = listce_level(logits, labels, part)
print(f"level loss {loss:.4f}")
# the second group has equal logits and one positive: its term is log 3
print(f"equal-logit group term {listce_level(logits[3:], labels[3:], build_partitions(codes[3:])[0])[0]:.6f}"
      f" vs log 3 = {math.log(3):.6f}")

# driving the loss down makes normalised scores match the normalised labels
res = minimize(lambda s: listce_level(s, labels, part)[0], logits,
               jac=lambda s: listce_level(s, labels, part)[1], method="L-BFGS-B")
p = sigmoid(res.x)
for g in (slice(0, 3), slice(3, 6)):
    print("normalised scores", np.round(p[g] / p[g].sum(), 4), "labels", labels[g] / labels[g].sum())

# uncertainty weighting: optimum log sigma satisfies sigma^2 = level loss
level_losses = np.array([0.9, 0.4, 0.1])
res = minimize(lambda ls: hierarchical_loss(level_losses, ls)[0], np.zeros(3),
               jac=lambda ls: hierarchical_loss(level_losses, ls)[2], method="BFGS")
print("sigma^2 at optimum:", np.round(np.exp(2 * res.x), 6), "losses:", level_losses)
print("effective level weights 1/(2 sigma^2):", np.round(0.5 * np.exp(-2 * res.x), 3))
