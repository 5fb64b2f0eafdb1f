"""Recover a 10-sparse vector from 200 noisy measurements in 500 dimensions.

Compares plain LinBreg (m=0) with the two-level variant (m=99).  Both start
at zero, so every parameter has to earn its way into the support.

    python demos/sparse_recovery.py
"""
import numpy as np

from bregml.experiments import RECOVERY, sparse_recovery

print(f"n={RECOVERY['n']}, d={RECOVERY['d']}, k_true={RECOVERY['k_true']}, "
      f"noise={RECOVERY['noise']}, {RECOVERY['steps']} steps\n")
print(f"{'method':<22}{'lam':>6}{'F1':>8}{'sparsity':>10}{'loss':>12}")
for label, m, lam in [("plain LinBreg", 0, 1.0), ("plain LinBreg", 0, 2.0),
                      ("two-level, m=99", 99, 1.0)]:
    res = [sparse_recovery(seed, m=m, lam=lam) for seed in range(5)]
    f1 = np.mean([r["f1"] for r in res])
    sp = np.mean([r["sparsity"] for r in res])
    loss = np.mean([r["loss"] for r in res])
    print(f"{label:<22}{lam:>6.1f}{f1:>8.3f}{sp:>10.3f}{loss:>12.2e}")

# With m=99 only one step in a hundred can add coordinates, so the support
# grows slowly while the coarse steps fit the values on it.
