"""Look inside one run: phases, support size and FLOPs per step.

Uses a callback to watch the coarse phases.  The active set is fixed for
the length of each coarse phase, and the fine step that follows is the only
place where new coordinates can enter.

    python demos/inside_a_cycle.py
"""
import numpy as np

from bregml import MLConfig, RegularizerSpec, L1, initial_state, run, training_flop_ratio
from bregml.models import make_sparse_regression

prob, truth = make_sparse_regression(200, 500, 10, 0.05, seed=0)
L = float(np.linalg.eigvalsh(prob.X.T @ prob.X / prob.n)[-1])
spec = RegularizerSpec.uniform(prob.layout, L1(1.0))
cfg = MLConfig(m=19, tau=1.0 / L)

state, record, traces = run(prob, spec, cfg, initial_state(spec, np.zeros(500)), 200)

print(f"{'cycle':>5}{'coarse dim':>12}{'support after':>15}{'loss':>12}")
t = 0
for k, tr in enumerate(traces):
    t += tr.steps
    last = record.steps[t - 1]
    print(f"{k:>5}{tr.coarse_dim:>12}{last.nonzeros:>15}{last.loss:>12.3e}")

hits = np.sum((state.theta != 0) & (truth != 0))
print(f"\nfinal support {np.count_nonzero(state.theta)}, true positives {hits} of 10")
print(f"training FLOPs relative to dense SGD: {training_flop_ratio(record):.3f}")
