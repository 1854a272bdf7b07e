"""
Which negatives to sample?
==========================

For an importance-sampled gradient estimate, the trace of its covariance
depends on the sampling distribution. With one hard negative, uniform
sampling wastes draws on easy negatives.
"""

import numpy as np

from grouprank import sampling_variance

grads = np.array([[6.0, 2.0], [0.2, -0.1], [0.1, 0.1], [-0.2, 0.05]])
diag = sampling_variance(grads, resolution=100)
print("per-negative gradient norms:", np.round(diag.per_negative_grad_norms, 3))
for name, (p, tv) in diag.candidates.items():
    print(f"{name:15s} Tr(V) = {tv:9.4f}   p = {np.round(p, 3)}")
# note: p proportional to the squared norm gives the same Tr(V) as uniform here;
# the minimiser of sum ||g_i||^2 / p_i is p proportional to the norm itself
