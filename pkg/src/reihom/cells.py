"""Reiterated cell problems on Y x Z.

For each index pair (i, k) the corrector pair (chi_ik, eta_ik) solves

    A(grad_y chi + grad_z eta, grad_y v1 + grad_z v2) = A(theta_ik, grad_y v1 + grad_z v2)

for all divergence-free periodic test pairs, where
``A(G, H) = int_{YxZ} sum_{i,j,k} a_ij G^{jk} H^{ik}`` and ``theta_ik`` is the
constant matrix with entries ``delta_il delta_km``.  Gradients are stored with
the derivative index first: ``G[j, k] = d u^k / d y_j``.

chi is a truncated Fourier series on Y; eta is a truncated Fourier series on
Y x Z (so ``eta(y_p, .)`` is a divergence-free field on Z at every Y node).
Quadrature uses the 3/2-padded grid, which is exact for products of retained
modes with low-degree trigonometric coefficients.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .coeff import CellSampling, _sample_raw, MAX_SAMPLE_NODES
from .krylov import SolverError, pcg
from .spectral import (
    TWO_PI,
    Layout,
    dealiased_size,
    full_positions,
    project_div_free,
)

__all__ = [
    "CellRHSIndex",
    "CellSolution",
    "PeriodicVectorField2",
    "SolverError",
    "divergence_defect",
    "solve_cell_coupled",
    "solve_cell_sequential",
    "solve_cell_single_scale",
    "solve_cells",
    "save_cell_solution",
    "load_cell_solution",
]

INDEX_PAIRS = tuple(product(range(2), range(2)))


@dataclass(frozen=True)
class CellRHSIndex:
    """Zero-based (direction i, component k) of a cell right-hand side."""

    i: int
    k: int

    def __post_init__(self):
        if self.i not in (0, 1) or self.k not in (0, 1):
            raise ValueError(f"cell index out of range: ({self.i}, {self.k})")


def _as_index(idx) -> CellRHSIndex:
    return idx if isinstance(idx, CellRHSIndex) else CellRHSIndex(*idx)


@dataclass
class PeriodicVectorField2:
    """Real 2-component trigonometric field on (-1/2, 1/2)^2.

    ``coeffs`` has shape ``(2, n-1, n//2)`` in the compact layout of
    :mod:`reihom.spectral`.
    """

    n: int
    coeffs: np.ndarray
    div_free: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        lay = Layout((self.n, self.n))
        if self.coeffs.shape != (2,) + lay.shape:
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match n={self.n}")

    @classmethod
    def from_nodal(cls, values, div_free=False) -> "PeriodicVectorField2":
        values = np.asarray(values, dtype=float)
        n = values.shape[-1]
        lay = Layout((n, n))
        return cls(n, lay.analyze(values), div_free)

    @property
    def layout(self) -> Layout:
        return Layout((self.n, self.n))

    def nodal(self, m: int | None = None) -> np.ndarray:
        m = m or self.n
        return Layout((self.n, self.n), (m, m)).synthesize(self.coeffs)

    def divergence_coeffs(self) -> np.ndarray:
        lay = self.layout
        k1, k2 = lay.wavevector(0), lay.wavevector(1)
        return 1j * TWO_PI * (k1 * self.coeffs[0] + k2 * self.coeffs[1])

    def mean(self) -> np.ndarray:
        return self.coeffs[:, 0, 0].real.copy()

    def evaluate(self, y1, y2) -> np.ndarray:
        """Pointwise evaluation by direct summation (slow path)."""
        lay = self.layout
        s1 = np.asarray(y1, float)[..., None, None] + 0.5
        s2 = np.asarray(y2, float)[..., None, None] + 0.5
        k1, k2 = lay.wavevector(0), lay.wavevector(1)
        ph = np.exp(1j * TWO_PI * (k1 * s1 + k2 * s2)) * lay.weights
        return np.array([(ph * self.coeffs[c]).sum(axis=(-2, -1)).real for c in range(2)])


def divergence_defect(fld: PeriodicVectorField2) -> float:
    """Max-norm of the spectral divergence on the field's node grid."""
    div = fld.layout.synthesize(fld.divergence_coeffs())
    return float(np.abs(div).max()) if div.size else 0.0


def _quad_sampling(sampling: CellSampling) -> CellSampling:
    my, mz = dealiased_size(sampling.n_y), dealiased_size(sampling.n_z)
    return _sample_raw(sampling.fld, my, mz, max_nodes=16 * MAX_SAMPLE_NODES)


def _default_maxiter(sampling) -> int:
    return 10 * (sampling.n_y**2 + sampling.n_z**2)


class _CoupledOperator:
    """Galerkin operator of the joint (chi, eta) problem."""

    def __init__(self, sampling: CellSampling, quad: CellSampling | None = None):
        self.sampling = sampling
        ny, nz = sampling.n_y, sampling.n_z
        quad = quad if quad is not None else _quad_sampling(sampling)
        self.quad = quad
        my, mz = quad.n_y, quad.n_z
        self.ly = Layout((ny, ny), (my, my))
        self.l4 = Layout((ny, ny, nz, nz), (my, my, mz, mz))
        self.a = quad.a
        self.K = (self.ly.wavevector(0), self.ly.wavevector(1))
        self.L = (self.l4.wavevector(2), self.l4.wavevector(3))
        self.abar = quad.mean_viscosity()
        ksq = self.K[0] ** 2 + self.K[1] ** 2
        lsq = self.L[0] ** 2 + self.L[1] ** 2
        self._pc_chi = np.where(ksq > 0, 1.0 / (self.abar * TWO_PI**2 * np.where(ksq > 0, ksq, 1)), 0.0)
        self._pc_eta = np.where(lsq > 0, 1.0 / (self.abar * TWO_PI**2 * np.where(lsq > 0, lsq, 1)), 0.0)

    # gradients at quadrature nodes, G[j, k]
    def chi_gradient(self, chi):
        d = np.stack([1j * TWO_PI * self.K[j] * chi for j in range(2)])
        return self.ly.synthesize(d)

    def eta_gradient(self, eta):
        d = np.stack([1j * TWO_PI * self.L[j] * eta for j in range(2)])
        return self.l4.synthesize(d)

    def gradient(self, chi, eta):
        return self.eta_gradient(eta) + self.chi_gradient(chi)[..., None, None]

    def flux(self, G):
        a = self.a
        return np.stack([a[i, 0] * G[0] + a[i, 1] * G[1] for i in range(2)])

    def functional(self, F):
        """Riesz representers of v -> A-flux F paired with (grad_y v1, grad_z v2)."""
        Fh = self.l4.analyze(F)
        Fy = self.ly.analyze(F.mean(axis=(-2, -1)))
        r_chi = sum(-1j * TWO_PI * self.K[i] * Fy[i] for i in range(2))
        r_eta = sum(-1j * TWO_PI * self.L[i] * Fh[i] for i in range(2))
        return [project_div_free(r_chi, *self.K), project_div_free(r_eta, *self.L)]

    def apply(self, x):
        return self.functional(self.flux(self.gradient(*x)))

    def theta_flux(self, idx: CellRHSIndex):
        # F[i', k'] = a[i', i] delta_{k k'}
        F = np.zeros((2, 2) + self.a.shape[2:])
        F[:, idx.k] = self.a[:, idx.i]
        return F

    def rhs(self, idx: CellRHSIndex):
        return self.functional(self.theta_flux(idx))

    def precond(self, r):
        return [r[0] * self._pc_chi, r[1] * self._pc_eta]

    def dot(self, u, v):
        return float(self.ly.inner(u[0], v[0]) + self.l4.inner(u[1], v[1]))


@dataclass
class CellSolution:
    """Correctors (chi_ik, eta_ik) for every index pair.

    ``chi[(i, k)]`` has shape ``(2, n_y-1, n_y//2)``; ``eta[(i, k)]`` has shape
    ``(2, n_y-1, n_y-1, n_z-1, n_z//2)`` (compact spectral layouts).
    """

    sampling: CellSampling
    chi: dict
    eta: dict
    residual_norm: dict
    iterations: dict = field(default_factory=dict)
    tol: float = 1e-10
    _op: _CoupledOperator | None = field(default=None, repr=False, compare=False)

    @property
    def n_y(self) -> int:
        return self.sampling.n_y

    @property
    def n_z(self) -> int:
        return self.sampling.n_z

    @property
    def operator(self) -> _CoupledOperator:
        if self._op is None:
            self._op = _CoupledOperator(self.sampling)
        return self._op

    @property
    def field_key(self) -> str:
        return self.sampling.fld.key

    def chi_field(self, idx) -> PeriodicVectorField2:
        idx = _as_index(idx)
        return PeriodicVectorField2(self.n_y, self.chi[(idx.i, idx.k)], div_free=True)

    def eta_at(self, idx, p: tuple[int, int]) -> PeriodicVectorField2:
        """eta_ik(y_p, .) on Z at node p of the n_y grid."""
        idx = _as_index(idx)
        c = self.eta[(idx.i, idx.k)]
        ny = self.n_y
        # inverse transform in y only; the z half axis stays spectral
        full = np.zeros((2, ny, ny) + c.shape[3:], dtype=complex)
        pos = full_positions(ny, ny)
        full[:, pos[:, None], pos[None, :]] = c
        s = -0.5 + np.asarray(p) / ny + 0.5
        k = np.fft.fftfreq(ny, 1.0 / ny)
        ph = np.exp(1j * TWO_PI * (k[:, None] * s[0] + k[None, :] * s[1]))
        cz = np.einsum("ab,cabde->cde", ph, full)
        return PeriodicVectorField2(self.n_z, cz, div_free=True)

    def chi_nodal(self, idx) -> np.ndarray:
        return self.chi_field(idx).nodal()

    def eta_nodal(self, idx) -> np.ndarray:
        idx = _as_index(idx)
        lay = Layout((self.n_y, self.n_y, self.n_z, self.n_z))
        return lay.synthesize(self.eta[(idx.i, idx.k)])

    def total_gradient(self, idx) -> np.ndarray:
        """grad_y chi + grad_z eta at the quadrature nodes, shape (2, 2, my, my, mz, mz)."""
        idx = _as_index(idx)
        return self.operator.gradient(self.chi[(idx.i, idx.k)], self.eta[(idx.i, idx.k)])

    def energy(self, idx) -> float:
        """a((chi, eta), (chi, eta))."""
        op = self.operator
        G = self.total_gradient(idx)
        return float(np.sum(op.flux(G) * G) / G[0, 0].size)

    def gradient_norm_sq(self, idx) -> float:
        """||grad_y chi||^2 + ||grad_z eta||^2."""
        idx = _as_index(idx)
        op = self.operator
        gc = op.chi_gradient(self.chi[(idx.i, idx.k)])
        ge = op.eta_gradient(self.eta[(idx.i, idx.k)])
        return float(np.mean(gc**2, axis=(-2, -1)).sum() + np.mean(ge**2, axis=(-4, -3, -2, -1)).sum())


def solve_cell_coupled(sampling: CellSampling, idx, tol: float = 1e-10,
                       maxiter: int | None = None, operator: _CoupledOperator | None = None):
    """Solve the joint (chi_ik, eta_ik) problem by preconditioned CG.

    Returns ``(chi, eta, info)`` with compact spectral coefficient arrays and a
    dict holding the achieved relative residual and iteration count.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    idx = _as_index(idx)
    op = operator or _CoupledOperator(sampling)
    b = op.rhs(idx)
    res = pcg(op.apply, b, op.precond, op.dot, tol=tol,
              maxiter=maxiter or _default_maxiter(sampling), atol=RHS_FLOOR * op.abar)
    chi, eta = res.x
    return chi, eta, {"residual": res.residual, "iterations": res.iterations}


def solve_cells(sampling: CellSampling, tol: float = 1e-10, maxiter: int | None = None) -> CellSolution:
    """All four cell problems on a shared operator."""
    op = _CoupledOperator(sampling)
    chi, eta, resid, its = {}, {}, {}, {}
    for ik in INDEX_PAIRS:
        c, e, info = solve_cell_coupled(sampling, ik, tol, maxiter, operator=op)
        chi[ik], eta[ik] = c, e
        resid[ik], its[ik] = info["residual"], info["iterations"]
    return CellSolution(sampling, chi, eta, resid, its, tol, op)


# ---------------------------------------------------------------------------
# Single-cell problems with a general rank-4 coefficient C[i, k, j, h]:
#   int C[i,k,j,h] (G + grad u)^{jh} d_i v^k = 0 for divergence-free v.


class _CellOperator:
    """Batched divergence-free cell operator on one 2D cell."""

    def __init__(self, n: int, m: int, flux, batch_ndim: int, abar: float):
        self.lay = Layout((n, n), (m, m))
        self.K = (self.lay.wavevector(0), self.lay.wavevector(1))
        self.flux = flux
        self.batch_ndim = batch_ndim
        ksq = self.K[0] ** 2 + self.K[1] ** 2
        self.scale = abar
        self._pc = np.where(ksq > 0, 1.0 / (abar * TWO_PI**2 * np.where(ksq > 0, ksq, 1)), 0.0)

    def gradient(self, c):
        d = np.stack([1j * TWO_PI * self.K[j] * c for j in range(2)])
        return self.lay.synthesize(d)

    def functional(self, F):
        Fh = self.lay.analyze(F)
        r = sum(-1j * TWO_PI * self.K[i] * Fh[i] for i in range(2))
        return project_div_free(r, *self.K)

    def apply(self, x):
        return [self.functional(self.flux(self.gradient(x[0])))]

    def precond(self, r):
        return [r[0] * self._pc]

    def dot(self, u, v):
        keep = tuple(range(1, 1 + self.batch_ndim))
        return self.lay.inner(u[0], v[0], keep=keep)

    def bcast(self, s):
        s = np.asarray(s)
        return [s.reshape((1,) + s.shape + (1, 1))]


def _unit_theta(j, h, shape):
    G = np.zeros((2, 2) + shape)
    G[j, h] = 1.0
    return G


def _a_flux(a):
    def flux(G):
        return np.stack([a[i, 0] * G[0] + a[i, 1] * G[1] for i in range(2)])
    return flux


def _tensor_flux(C):
    def flux(G):
        return np.einsum("ikjh...,jh...->ik...", C, G)
    return flux


# Right-hand sides below this multiple of the coefficient scale are exact zeros
# polluted by roundoff (e.g. a pure gradient removed by the projection).
RHS_FLOOR = 1e-13


def _solve_batched(op: _CellOperator, rhs, tol, maxiter):
    res = pcg(op.apply, [rhs], op.precond, op.dot, bcast=op.bcast, tol=tol, maxiter=maxiter,
              atol=RHS_FLOOR * op.scale)
    return res.x[0], res


def solve_cell_single_scale(a_y: np.ndarray, n: int, idx, tol: float = 1e-10,
                            maxiter: int | None = None):
    """Divergence-constrained corrector for a coefficient that depends on y only.

    ``a_y`` holds a(y) at the dealiased quadrature nodes, shape ``(2, 2, m, m)``,
    or a rank-4 tensor ``(2, 2, 2, 2, m, m)``.  Returns compact coefficients of
    chi with ``A(grad chi, grad v) = A(theta_ik, grad v)``.
    """
    idx = _as_index(idx)
    m = a_y.shape[-1]
    flux = _a_flux(a_y) if a_y.ndim == 4 else _tensor_flux(a_y)
    if a_y.ndim == 4:
        abar = 0.5 * float(a_y[0, 0].mean() + a_y[1, 1].mean())
    else:
        abar = 0.25 * float(sum(a_y[i, k, i, k].mean() for i in range(2) for k in range(2)))
    op = _CellOperator(n, m, flux, 0, abar)
    rhs = op.functional(flux(_unit_theta(idx.i, idx.k, (m, m))))
    op.bcast = lambda s: [s]
    op.dot = lambda u, v: float(op.lay.inner(u[0], v[0]))
    c, res = _solve_batched(op, rhs, tol, maxiter or 10 * n * n)
    return c, {"residual": res.residual, "iterations": res.iterations}


@dataclass
class SequentialResult:
    chi: np.ndarray            # compact, (2, n_y-1, n_y//2)
    eta_nodes: np.ndarray      # eta at the quadrature Y nodes: (2, my, my, n_z-1, n_z//2)
    b: np.ndarray              # intermediate tensor B[i, k, j, h] at quadrature Y nodes
    residual: float
    iterations: int


def z_cell_tensor(sampling: CellSampling, tol: float = 1e-10, maxiter: int | None = None,
                  quad: CellSampling | None = None):
    """Step 1 of the two-step route: frozen-y Stokes problems on Z.

    Returns ``(B, eta_unit, info)`` where ``B[i, k, j, h, p1, p2]`` is the mean
    flux for unit gradient theta_jh at quadrature node y_p and ``eta_unit[j, h]``
    the corresponding z-correctors (compact in z).
    """
    quad = quad if quad is not None else _quad_sampling(sampling)
    nz, mz, my = sampling.n_z, quad.n_z, quad.n_y
    a = quad.a  # (2, 2, my, my, mz, mz)
    # batch axes: (unit gradient jh, y1, y2)
    a_b = a[:, :, None]
    flux = _a_flux(a_b)
    op = _CellOperator(nz, mz, flux, 3, quad.mean_viscosity())
    theta = np.zeros((2, 2, 4, my, my, mz, mz))
    for n_, (j, h) in enumerate(INDEX_PAIRS):
        theta[j, h, n_] = 1.0
    rhs = -op.functional(flux(theta))
    eta, res = _solve_batched(op, rhs, tol, maxiter or 10 * nz * nz)
    F = flux(theta + op.gradient(eta))          # (2, 2, 4, my, my, mz, mz)
    Fbar = F.mean(axis=(-2, -1))                # (2, 2, 4, my, my)
    B = Fbar.reshape(2, 2, 2, 2, my, my)
    eta_unit = eta.reshape((2, 2, 2) + eta.shape[2:])   # (k, j, h, my, my, ...)
    eta_unit = np.moveaxis(eta_unit, 0, 2)               # (j, h, k, ...)
    return B, eta_unit, {"residual": res.residual, "iterations": res.iterations}


def solve_cell_sequential(sampling: CellSampling, idx, tol: float = 1e-10,
                          maxiter: int | None = None, step1=None) -> SequentialResult:
    """Two-step route: z-cell tensor B(y), then the y-cell problem with B.

    eta is reconstructed as ``sum_jh (grad chi - theta_ik)^{jh} eta_unit_jh``.
    ``step1`` may carry a precomputed ``z_cell_tensor`` result.
    """
    idx = _as_index(idx)
    quad = _quad_sampling(sampling)
    if step1 is None:
        step1 = z_cell_tensor(sampling, tol, maxiter, quad=quad)
    B, eta_unit, info1 = step1
    ny, my = sampling.n_y, quad.n_y
    flux = _tensor_flux(B)
    abar = 0.25 * float(sum(B[i, k, i, k].mean() for i in range(2) for k in range(2)))
    op = _CellOperator(ny, my, flux, 0, abar)
    op.bcast = lambda s: [s]
    op.dot = lambda u, v: float(op.lay.inner(u[0], v[0]))
    rhs = op.functional(flux(_unit_theta(idx.i, idx.k, (my, my))))
    chi, res = _solve_batched(op, rhs, tol, maxiter or _default_maxiter(sampling))
    Gy = op.gradient(chi)                                 # (2, 2, my, my)
    Gy[idx.i, idx.k] -= 1.0                               # grad chi - theta_ik
    eta = np.einsum("jhpq,jhkpq...->kpq...", Gy, eta_unit)
    return SequentialResult(chi, eta, B, max(res.residual, info1["residual"]),
                            res.iterations + info1["iterations"])


def sequential_tensor(sampling: CellSampling, tol: float = 1e-10, maxiter: int | None = None):
    """Effective tensor q[i, j, k, h] through the two-step route."""
    quad = _quad_sampling(sampling)
    step1 = z_cell_tensor(sampling, tol, maxiter, quad=quad)
    B = step1[0]
    my = quad.n_y
    op = _CellOperator(sampling.n_y, my, _tensor_flux(B), 0, 1.0)
    q = np.zeros((2, 2, 2, 2))
    chis = {}
    for ik in INDEX_PAIRS:
        chis[ik] = solve_cell_sequential(sampling, ik, tol, maxiter, step1=step1).chi
    for (j, h) in INDEX_PAIRS:
        G = _unit_theta(j, h, (my, my)) - op.gradient(chis[(j, h)])
        F = _tensor_flux(B)(G).mean(axis=(-2, -1))   # F[i, k]
        for i, k in INDEX_PAIRS:
            q[i, j, k, h] = F[i, k]
    return q, B


# ---------------------------------------------------------------------------
# Binary dump.  Layout (little-endian):
#   magic b"RHCELL1\0", int64 n_y, int64 n_z, int64 key_len, key bytes,
#   then for each (i, k) in row-major order: residual (f64), chi real/imag
#   parts, eta real/imag parts, all float64 in C order.

_MAGIC = b"RHCELL1\0"


def save_cell_solution(sol: CellSolution, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    key = sol.field_key.encode()
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqq", sol.n_y, sol.n_z, len(key)))
        fh.write(key)
        for ik in INDEX_PAIRS:
            fh.write(struct.pack("<d", float(sol.residual_norm[ik])))
            for arr in (sol.chi[ik], sol.eta[ik]):
                fh.write(np.ascontiguousarray(arr.real, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(arr.imag, dtype="<f8").tobytes())
    tmp.replace(path)


def load_cell_solution(path, sampling: CellSampling, tol: float = 1e-10) -> CellSolution:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a cell-solution dump")
    ny, nz, klen = struct.unpack_from("<qqq", data, 8)
    off = 32
    key = data[off:off + klen].decode()
    off += klen
    if (ny, nz) != (sampling.n_y, sampling.n_z) or key != sampling.fld.key:
        raise ValueError(f"{path}: dump does not match the requested field/grid")
    ly = Layout((ny, ny))
    l4 = Layout((ny, ny, nz, nz))
    chi, eta, resid = {}, {}, {}
    for ik in INDEX_PAIRS:
        (resid[ik],) = struct.unpack_from("<d", data, off)
        off += 8
        out = []
        for shape in ((2,) + ly.shape, (2,) + l4.shape):
            cnt = int(np.prod(shape))
            re = np.frombuffer(data, "<f8", cnt, off).reshape(shape)
            off += 8 * cnt
            im = np.frombuffer(data, "<f8", cnt, off).reshape(shape)
            off += 8 * cnt
            out.append(re + 1j * im)
        chi[ik], eta[ik] = out
    return CellSolution(sampling, chi, eta, resid, {}, tol)


def cache_key(sampling: CellSampling, tol: float) -> str:
    s = f"{sampling.fld.key}|{sampling.n_y}|{sampling.n_z}|{tol!r}"
    return hashlib.sha256(s.encode()).hexdigest()[:16]
