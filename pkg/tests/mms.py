"""Manufactured solution for the homogenized branch, shared by flow tests.

psi = sin^2(pi x) sin^2(pi y), u = g(t) curl psi, p = g(t) cos(pi x) cos(pi y),
g = sin 2t.  The forcing is generated symbolically for a general anisotropic
tensor so the cross-component coupling is exercised.
"""

import numpy as np
import sympy as sp

from reihom.effective import from_voigt
from reihom.flow import DomainGrid, ForcingField, HomogenizedModel, run

VOIGT = np.array([[2.0, 0.3, 0.2, 0.1],
                  [0.3, 1.5, 0.25, 0.2],
                  [0.2, 0.25, 1.7, 0.3],
                  [0.1, 0.2, 0.3, 2.2]])


def build(voigt=VOIGT):
    q = from_voigt(voigt)
    x, y, t = sp.symbols("x y t")
    psi = sp.sin(sp.pi * x) ** 2 * sp.sin(sp.pi * y) ** 2
    g = sp.sin(2 * t)
    U = [g * sp.diff(psi, y), -g * sp.diff(psi, x)]
    P = g * sp.cos(sp.pi * x) * sp.cos(sp.pi * y)
    X = [x, y]
    f = []
    for k in range(2):
        e = sp.diff(U[k], t) + sum(U[j] * sp.diff(U[k], X[j]) for j in range(2)) + sp.diff(P, X[k])
        e -= sum(q[i, j, k, h] * sp.diff(U[h], X[i], X[j])
                 for i in range(2) for j in range(2) for h in range(2))
        f.append(e)
    fl = sp.lambdify((x, y, t), f, "numpy")
    ul = sp.lambdify((x, y, t), U, "numpy")
    return q, ForcingField(lambda a, b, c: fl(a, b, c), True, "mms"), ul


def l2_error(n, dt, T=0.5, scheme="bdf2", case=None):
    q, F, ul = case or build()
    g = DomainGrid(n, n, dt=dt, T_final=T)
    st = run(HomogenizedModel(q), F, g, scheme=scheme).snapshots[-1]
    xu, yu = g.u_faces()
    xv, yv = g.v_faces()
    eu = st.u - ul(xu, yu, st.t)[0]
    ev = st.v - ul(xv, yv, st.t)[1]
    return float(np.sqrt((np.sum(eu**2) + np.sum(ev**2)) * g.hx * g.hy))


def final_velocity(n, dt, T=0.5, scheme="bdf2", case=None):
    q, F, _ = case or build()
    g = DomainGrid(n, n, dt=dt, T_final=T)
    return run(HomogenizedModel(q), F, g, scheme=scheme).snapshots[-1].velocity()
