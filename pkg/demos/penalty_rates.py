"""
How fast does the violation vanish as s grows?
==============================================

For the penalty lambda_k the maximal violation should decay like
s**(-1/(k-1)).  We run short sweeps for k = 2, 3, 4 with the lumped
scheme and fit log-log slopes.  The default sweep takes about a minute.
"""
import numpy as np

from chpenalty.harness import SweepConfig, fit_loglog_slope, run_sweep

cfg = SweepConfig(s_values=tuple(np.logspace(2, 6, 5)), k_values=(2, 3, 4))
records = run_sweep(cfg)

print(f"{'k':>2} {'s':>8} {'linf':>10} {'l1':>10} {'dofs':>6}")
for r in records:
    print(f"{r.k:>2} {r.s:8.0e} {r.linf:10.3e} {r.l1:10.3e} {r.dofs:6d}")

for k in cfg.k_values:
    fit = fit_loglog_slope(records, "linf", k)
    print(f"k={k}: slope {fit.slope:+.3f}, expected {-1 / (k - 1):+.3f}, r2 {fit.r_squared:.4f}")

# the same records can be written out for plotting:
#   from chpenalty.harness import write_outputs; write_outputs(records, "out")
