"""Two sequential designs on the SIR problem, starting from 20 x 5 runs.

imspe-lookahead: one run per step, looking three steps ahead to decide
whether replicating now beats opening a new site.  Ends with far fewer
unique sites than evaluations.

contour-sur+budget: targets the input where the mean infected fraction
crosses 0.5, and picks a replicate batch large enough to cut the variance
there by 10%.

    python3 demos/sequential_design.py
"""
import numpy as np

from replgp.kernels import Domain
from replgp.seq_design import (AcquisitionConfig, SequentialOptions, level_set_crossings,
                               run_sequential)
from replgp.sir import SIRSimulator

sim = SIRSimulator()
X0 = np.repeat(np.linspace(0, 1, 20), 5)[:, None]

for strategy in ("contour-sur+budget", "imspe-lookahead"):
    cfg = AcquisitionConfig.default(Domain.unit(1), threshold=0.5)
    log = run_sequential(sim, X0, strategy, 1000, cfg, SequentialOptions(seed=3))
    d = log.design
    print(f"\n{strategy}: {len(log.records) - 1} decisions, {d.n} unique sites, N={d.N}")
    busiest = np.argsort(d.counts)[::-1][:5]
    for i in sorted(busiest, key=lambda i: d.Xu[i, 0]):
        print(f"  x={d.Xu[i, 0]:.3f}  runs={d.counts[i]}")
    if strategy.startswith("contour"):
        print("  estimated crossing:", level_set_crossings(log.model, np.linspace(0, 1, 2001), 0.5))
