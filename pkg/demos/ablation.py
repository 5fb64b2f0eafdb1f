"""Sparsity as a function of lambda and of the number of coarse steps m.

Two-blobs classification with a 32-unit hidden layer, 90% sparse start,
minibatches of 32, cosine step sizes.  Five seeds per setting.

    python demos/ablation.py
"""
import numpy as np

from bregml.experiments import ABLATION, blobs_training

SEEDS = range(5)


def summarize(runs):
    return (np.mean([r["sparsity"] for r in runs]), np.mean([r["accuracy"] for r in runs]))


print(f"{ABLATION['steps']} steps, batch {ABLATION['batch']}\n")
print("lambda sweep (m=99)")
for lam in (0.001, 0.005, 0.02):
    sp, acc = summarize([blobs_training(s, lam, 99) for s in SEEDS])
    print(f"  lam={lam:<6}  sparsity {sp:.3f}  accuracy {acc:.3f}")

print("m sweep (lam=0.005)")
for m in (0, 9, 99):
    sp, acc = summarize([blobs_training(s, 0.005, m) for s in SEEDS])
    print(f"  m={m:<3}  sparsity {sp:.3f}  accuracy {acc:.3f}")

sp, acc = summarize([blobs_training(s, 0.0, 0, dense=True) for s in SEEDS])
print(f"dense SGD reference  sparsity {sp:.3f}  accuracy {acc:.3f}")
