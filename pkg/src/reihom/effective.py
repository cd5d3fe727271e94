"""Homogenized viscosity tensor q_ijkh and its structural checks.

Two assembly routes are provided.  The direct route uses

    q_ijkh = delta_kh <a_ij> - < sum_l a_il (grad_y chi_jh + grad_z eta_jh)^{lk} >,

the energy route uses ``q_ijkh = A(theta_ik - G_ik, theta_jh - G_jh)`` with
``G_ik`` the total corrector gradient.  Both are exact quadratures on the
dealiased cell grid; they agree up to the Galerkin residual.

The 4x4 matrix ``M[2*i + k, 2*j + h] = q[i, j, k, h]`` represents the quadratic
form ``xi -> sum q_ijkh xi_ik xi_jh``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .cells import INDEX_PAIRS, CellSolution
from .coeff import CellSampling, CoefficientField


class TensorError(ArithmeticError):
    """Assembled tensor is not positive definite."""


@dataclass(frozen=True)
class ThetaBasis:
    """The constant matrices theta_ik with entries delta_il delta_km."""

    def __getitem__(self, ik) -> np.ndarray:
        i, k = ik
        t = np.zeros((2, 2))
        t[i, k] = 1.0
        return t

    def __iter__(self):
        return (self[ik] for ik in INDEX_PAIRS)


def voigt(q: np.ndarray) -> np.ndarray:
    """4x4 quadratic-form matrix of a rank-4 tensor."""
    return np.asarray(q).transpose(0, 2, 1, 3).reshape(4, 4)


def from_voigt(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(2, 2, 2, 2).transpose(0, 2, 1, 3)


def isotropic_tensor(nu: float) -> np.ndarray:
    """nu * delta_ij delta_kh."""
    e = np.eye(2)
    return nu * np.einsum("ij,kh->ijkh", e, e)


def mean_tensor(abar: np.ndarray) -> np.ndarray:
    """delta_kh <a_ij>, the arithmetic-mean bound."""
    return np.einsum("ij,kh->ijkh", abar, np.eye(2))


@dataclass
class EffectiveTensor:
    q: np.ndarray
    alpha0_estimate: float
    field_key: str = ""
    n_y: int = 0
    n_z: int = 0
    method: str = "direct"
    abar: np.ndarray | None = field(default=None, repr=False)

    @property
    def matrix(self) -> np.ndarray:
        return voigt(self.q)

    def symmetrized(self) -> np.ndarray:
        """Tensor with the (i,k)<->(j,h) symmetry imposed exactly."""
        return 0.5 * (self.q + self.q.transpose(1, 0, 3, 2))

    def apply(self, xi: np.ndarray) -> np.ndarray:
        """(Q xi)_{ik} = sum_jh q_ijkh xi_jh."""
        return np.einsum("ijkh,jh->ik", self.q, xi)

    def form(self, xi: np.ndarray) -> float:
        return float(np.einsum("ijkh,ik,jh->", self.q, xi, xi))

    def to_csv(self) -> str:
        return tensor_csv(self.q)


def _alpha0(q: np.ndarray) -> float:
    m = voigt(q)
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())


def _finish(q, sol: CellSolution, method) -> EffectiveTensor:
    a0 = _alpha0(q)
    if not a0 > 0:
        raise TensorError(f"effective tensor is not positive definite (min eigenvalue {a0:.3e})")
    return EffectiveTensor(q, a0, sol.field_key, sol.n_y, sol.n_z, method,
                           sol.operator.a.mean(axis=(2, 3, 4, 5)))


def _check_match(sol: CellSolution, sampling: CellSampling | None):
    if sampling is not None and (sampling.fld.key != sol.field_key
                                 or (sampling.n_y, sampling.n_z) != (sol.n_y, sol.n_z)):
        raise ValueError("cell solution was computed on a different sampling")


def assemble_q(sol: CellSolution, sampling: CellSampling | None = None) -> EffectiveTensor:
    """Direct formula: mean coefficient minus mean corrector flux."""
    _check_match(sol, sampling)
    op = sol.operator
    abar = op.a.mean(axis=(2, 3, 4, 5))
    q = np.zeros((2, 2, 2, 2))
    for j, h in INDEX_PAIRS:
        F = op.flux(sol.total_gradient((j, h))).mean(axis=(2, 3, 4, 5))   # F[i, k]
        q[:, j, :, h] = (h == np.arange(2))[None, :] * abar[:, j][:, None] - F
    return _finish(q, sol, "direct")


def assemble_q_energy_form(sol: CellSolution, sampling: CellSampling | None = None) -> EffectiveTensor:
    """Energy formula A(theta_ik - G_ik, theta_jh - G_jh)."""
    _check_match(sol, sampling)
    op = sol.operator
    W = {}
    for ik in INDEX_PAIRS:
        G = -sol.total_gradient(ik)
        G[ik] += 1.0
        W[ik] = G
    q = np.zeros((2, 2, 2, 2))
    for (i, k) in INDEX_PAIRS:
        F = op.flux(W[(i, k)])
        for (j, h) in INDEX_PAIRS:
            q[i, j, k, h] = np.mean(np.sum(F * W[(j, h)], axis=(0, 1)))
    return _finish(q, sol, "energy")


@dataclass
class TensorReport:
    symmetry_defect: float
    alpha0_estimate: float
    condition_number: float
    upper_bound_gap: float        # max eigenvalue of (q - mean) form; <= 0 when the bound holds
    upper_bound_ok: bool
    alpha_ratio: float            # alpha0 / alpha of the field
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_tensor(t: EffectiveTensor, fld: CoefficientField | None = None,
                 abar: np.ndarray | None = None, tol: float = 1e-8) -> TensorReport:
    """Symmetry, coercivity and arithmetic-mean bound of an assembled tensor.

    The mean coefficient comes from ``abar``, else from the tensor's own
    provenance.  ``alpha_ratio`` is reported, not asserted.
    """
    q = np.asarray(t.q)
    sym = float(np.abs(q - q.transpose(1, 0, 3, 2)).max())
    m = voigt(q)
    ms = 0.5 * (m + m.T)
    ev = np.linalg.eigvalsh(ms)
    a0 = float(ev.min())
    cond = float(ev.max() / a0) if a0 > 0 else float("inf")
    abar = abar if abar is not None else t.abar
    if abar is None:
        gap, ok = float("nan"), False
    else:
        # eigen-directions of the difference form cover every 4x4 direction
        d = voigt(mean_tensor(abar))
        gap = float(np.linalg.eigvalsh(ms - 0.5 * (d + d.T)).max())
        ok = gap <= tol
    ratio = a0 / fld.alpha if fld is not None else float("nan")
    passed = sym <= tol and a0 > 0 and ok
    return TensorReport(sym, a0, cond, gap, ok, ratio, bool(passed))


def tensor_csv(q: np.ndarray) -> str:
    """16 rows (i, j, k, h one-based, value) in row-major index order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "k", "h", "value"])
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for h in range(2):
                    w.writerow([i + 1, j + 1, k + 1, h + 1, "%.17g" % q[i, j, k, h]])
    return buf.getvalue()


def read_tensor_csv(text: str) -> np.ndarray:
    q = np.zeros((2, 2, 2, 2))
    rows = list(csv.DictReader(io.StringIO(text)))
    if len(rows) != 16:
        raise ValueError(f"expected 16 tensor rows, got {len(rows)}")
    for r in rows:
        q[int(r["i"]) - 1, int(r["j"]) - 1, int(r["k"]) - 1, int(r["h"]) - 1] = float(r["value"])
    return q
