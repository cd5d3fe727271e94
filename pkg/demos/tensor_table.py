"""Effective tensors of the built-in families in Voigt form.

Rows and columns are ordered (11, 12, 21, 22) in the (i, k) / (j, h) pairs.
For the separable and layered families the tensor is also compared with the
laminate closed form: arithmetic means on the 11, 21, 22 diagonal entries,
harmonic means on the 12 entry.

    python3 demos/tensor_table.py [--n 16]
"""

import argparse

import numpy as np
from scipy.integrate import quad

from reihom.cells import solve_cells
from reihom.coeff import BUILTIN_FAMILIES, make_builtin, sample
from reihom.effective import assemble_q, assemble_q_energy_form, check_tensor, voigt


def laminate(b1=2.0, s1=1.0, b2=2.0, s2=1.0):
    c1 = lambda t: b1 + s1 * np.sin(2 * np.pi * t)
    c2 = lambda t: b2 + s2 * np.cos(2 * np.pi * t)
    m = quad(c1, 0, 1)[0] * quad(c2, 0, 1)[0]
    h = 1 / (quad(lambda t: 1 / c1(t), 0, 1)[0] * quad(lambda t: 1 / c2(t), 0, 1)[0])
    return np.diag([m, h, m, m])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=16)
    n = ap.parse_args().n
    np.set_printoptions(precision=6, suppress=True)
    for fam in BUILTIN_FAMILIES:
        fld = make_builtin(fam)
        sol = solve_cells(sample(fld, n, n))
        t = assemble_q(sol)
        rep = check_tensor(t, fld)
        gap = np.abs(t.q - assemble_q_energy_form(sol).q).max() / np.abs(t.q).max()
        print(f"{fam}  alpha0={rep.alpha0_estimate:.4f}  cond={rep.condition_number:.3f}  "
              f"two-formula gap={gap:.1e}")
        print(voigt(t.q))
        if fam in ("separable", "layered"):
            print(f"  laminate closed form deviation: {np.abs(voigt(t.q) - laminate()).max():.2e}")
        print()


if __name__ == "__main__":
    main()
