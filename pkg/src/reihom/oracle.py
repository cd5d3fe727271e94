"""Dense saddle-point oracle for the coupled cell problem.

Independent of the FFT machinery in :mod:`reihom.cells`: the trial space is
spanned by explicit real cos/sin modes evaluated on a midpoint grid of size
``2n``, the divergence constraints are imposed with Lagrange multipliers, and
the indefinite system is solved by dense factorization.  Intended for tests
at ``n <= 8``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .coeff import CellSampling, cell_nodes

MAX_ORACLE_N = 8


def _half_modes(n):
    h = n // 2 - 1
    out = []
    for k1 in range(0, h + 1):
        for k2 in range(-h, h + 1):
            if k1 > 0 or k2 > 0:
                out.append((k1, k2))
    return np.array(out, dtype=float)


def _basis(n, pts, with_constant=False):
    """Real trig basis and its gradient at points ``pts`` of shape (P, 2).

    Returns ``(phi, dphi)`` with shapes (P, B) and (2, P, B).
    """
    k = _half_modes(n)
    arg = 2 * np.pi * pts @ k.T
    c, s = np.cos(arg), np.sin(arg)
    phi = np.concatenate([c, s], axis=1)
    dphi = np.stack([np.concatenate([-2 * np.pi * k[:, d] * s, 2 * np.pi * k[:, d] * c], axis=1)
                     for d in range(2)])
    if with_constant:
        phi = np.concatenate([np.ones((len(pts), 1)), phi], axis=1)
        dphi = np.concatenate([np.zeros((2, len(pts), 1)), dphi], axis=2)
    return phi, dphi


def _grid(m):
    t = -0.5 + (np.arange(m) + 0.5) / m
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    return np.stack([g1.ravel(), g2.ravel()], axis=1)


def solve_cell_dense_oracle(sampling: CellSampling, idx):
    """Dense Lagrange-multiplier solve of the (i, k) cell problem.

    Returns ``(chi, eta)`` as nodal values on the uniform ``n_y`` / ``n_y x n_z``
    grids of :func:`reihom.coeff.cell_nodes`, shapes ``(2, n_y, n_y)`` and
    ``(2, n_y, n_y, n_z, n_z)``, plus the multiplier vector (div_y block first).
    """
    ny, nz = sampling.n_y, sampling.n_z
    if max(ny, nz) > MAX_ORACLE_N:
        raise ValueError(f"dense oracle limited to n <= {MAX_ORACLE_N} (got {ny}, {nz})")
    i0, k0 = (idx.i, idx.k) if hasattr(idx, "i") else idx
    fld = sampling.fld
    my, mz = 2 * ny, 2 * nz
    py, pz = _grid(my), _grid(mz)
    Py, Pz = len(py), len(pz)

    phi, dphi = _basis(ny, py)                        # chi basis (no constant)
    psi, _ = _basis(ny, py, with_constant=True)       # y-dependence of eta
    zeta, dzeta = _basis(nz, pz)                      # z basis
    nb, npsi, nzb = phi.shape[1], psi.shape[1], zeta.shape[1]

    yy = np.broadcast_to(py.T[:, :, None], (2, Py, Pz))
    zz = np.broadcast_to(pz.T[:, None, :], (2, Py, Pz))
    a = np.broadcast_to(fld(yy, zz), (2, 2, Py, Pz))  # a[i, l, y, z]
    wy, wz = 1.0 / Py, 1.0 / Pz

    abar = a.mean(axis=3)                             # (2, 2, Py)
    # chi-chi: sum_il abar_il d_l phi_a d_i phi_b
    Kcc = wy * np.einsum("ily,lya,iyb->ab", abar, dphi, dphi)
    # chi-eta: sum_il d_l phi_a psi_b mean_z(a_il d_i zeta_c)
    T1 = np.einsum("ilyz,izc->ilyc", a, dzeta) * wz
    Kce = wy * np.einsum("lya,yb,ilyc->abc", dphi, psi, T1).reshape(nb, npsi * nzb)
    # eta-eta: sum_y psi_b psi_b' T[y, c, c']
    T = np.zeros((Py, nzb, nzb))
    for i in range(2):
        for l in range(2):
            T += np.einsum("yzc,zd->ycd", a[i, l][:, :, None] * dzeta[l][None], dzeta[i]) * wz
    pp = (psi[:, :, None] * psi[:, None, :]).reshape(Py, -1)
    Kee = (wy * pp.T @ T.reshape(Py, -1)).reshape(npsi, npsi, nzb, nzb)
    Kee = Kee.transpose(0, 2, 1, 3).reshape(npsi * nzb, npsi * nzb)

    nc, ne = nb, npsi * nzb
    K1 = np.block([[Kcc, Kce], [Kce.T, Kee]])         # per velocity component
    nu = nc + ne
    # div_y chi tested with phi; div_z eta tested with psi x zeta
    Bc = [wy * phi.T @ dphi[k] for k in range(2)]                     # (nb, nb)
    Gpsi = wy * psi.T @ psi
    Bz = [wz * zeta.T @ dzeta[k] for k in range(2)]
    Be = [np.kron(Gpsi, Bz[k]) for k in range(2)]                     # (ne, ne)
    nlam = nb + ne
    N = 2 * nu + nlam
    M = np.zeros((N, N))
    for k in range(2):
        s = slice(k * nu, (k + 1) * nu)
        M[s, s] = K1
        B = np.zeros((nlam, nu))
        B[:nb, :nc] = Bc[k]
        B[nb:, nc:] = Be[k]
        M[2 * nu:, s] = B
        M[s, 2 * nu:] = B.T
    rhs = np.zeros(N)
    # A(theta_ik, grad v): flux a[i', i0] in component k0
    r_c = wy * np.einsum("ly,lya->a", abar[:, i0], dphi)
    r_e = wy * np.einsum("yb,yc->bc", psi, T1[:, i0].sum(axis=0)).ravel()
    rhs[k0 * nu:k0 * nu + nc] = r_c
    rhs[k0 * nu + nc:(k0 + 1) * nu] = r_e
    sol = sla.solve(M, rhs, assume_a="sym")

    ty, tz = cell_nodes(ny), cell_nodes(nz)
    gy = np.stack(np.meshgrid(ty, ty, indexing="ij"), axis=-1).reshape(-1, 2)
    gz = np.stack(np.meshgrid(tz, tz, indexing="ij"), axis=-1).reshape(-1, 2)
    phin, _ = _basis(ny, gy)
    psin, _ = _basis(ny, gy, with_constant=True)
    zetan, _ = _basis(nz, gz)
    chi = np.empty((2, ny, ny))
    eta = np.empty((2, ny, ny, nz, nz))
    for k in range(2):
        u = sol[k * nu:(k + 1) * nu]
        chi[k] = (phin @ u[:nc]).reshape(ny, ny)
        e = u[nc:].reshape(npsi, nzb)
        eta[k] = (psin @ e @ zetan.T).reshape(ny, ny, nz, nz)
    return chi, eta, sol[2 * nu:]
