"""Quantile surfaces of the SIR output from replicated data.

The SIR output is skewed, so the Gaussian band around the mean misplaces
the tails.  Empirical quantiles at each design, smoothed by one GP per
level, track the reference quantiles instead.

    python3 demos/quantile_surfaces.py
"""
import numpy as np

from replgp.noise import fit_model
from replgp.quantile import fit_quantile_model, gaussian_predictive_quantile, predict_quantiles
from replgp.replication import compact
from replgp.sir import SIRConfig, build_dataset, reference_stats

cfg = SIRConfig()
design = compact(build_dataset(cfg, "replicated", n_unique=25, reps=100, seed=1))
ref = reference_stats(cfg, grid_size=11, reps=5000)
x = ref["x"][:, None]

qm = fit_quantile_model(design, [0.05, 0.5, 0.95])
Q = predict_quantiles(qm, x)
gauss = fit_model(design, "sk")
g05 = gaussian_predictive_quantile(gauss, x, 0.05)
g95 = gaussian_predictive_quantile(gauss, x, 0.95)

print("   x   ref q05  qgp q05  gauss q05 |  ref q95  qgp q95  gauss q95")
for i in range(x.shape[0]):
    print(f"{x[i, 0]:4.1f}  {ref['q05'][i]:8.3f} {Q[i, 0]:8.3f} {g05[i]:10.3f} | "
          f"{ref['q95'][i]:8.3f} {Q[i, 2]:8.3f} {g95[i]:10.3f}")
