"""Trace pairings of oscillating profiles against their two-scale limits.

u = cos(2 pi x1/eps) cos(2 pi x1/eps^2) paired with
psi = (1 + x1^2) e^{x2} (1 + t) cos(2 pi y1) cos(2 pi z1); the limit is a
quarter of the integral of the slow factor.

    python3 demos/sigma_pairing.py
"""

import numpy as np

from reihom.sigma import (AxisFactor, SeparableProfile, SpaceTimeBox, TestFunction, cos_mode,
                          mean_convergence_check, norm_convergence_check, pairing_sweep)

box = SpaceTimeBox(1.0, 1.0, 1.0)
psi = TestFunction.build(lambda x: 1 + x**2, np.exp, lambda t: 1 + t,
                         mu1=cos_mode(), nu1=cos_mode(), box=box)
u = SeparableProfile(AxisFactor(None, cos_mode(), cos_mode()))
eps = [2.0**-k for k in range(1, 8)]

for title, recs in (("pairing", pairing_sweep(u, psi, eps, box)),
                    ("norm", norm_convergence_check(psi, eps, box)),
                    ("mean", mean_convergence_check(psi, eps, box=box))):
    print(title)
    for r in recs:
        print(f"  eps={r.epsilon:<10.6g} lhs={r.lhs:.10f} rhs={r.rhs:.10f} gap={r.gap:.2e}")
