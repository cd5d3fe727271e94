"""Preconditioned conjugate gradients over tuples of arrays.

The unknown is a list of arrays ("parts").  ``dot`` returns either a scalar or
an array over independent batch members; ``bcast`` turns such an array into
per-part broadcastable factors so that a batch of decoupled systems can be
iterated at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    """Conjugate gradients failed (no convergence or loss of positivity)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class CGResult:
    x: list
    iterations: int
    residual: float  # worst relative residual over the batch


def _axpy(a, x, y):
    return [ai * xi + yi for ai, xi, yi in zip(a, x, y)]


def pcg(apply, b, precond, dot, bcast=None, tol=1e-10, maxiter=1000, atol=0.0) -> CGResult:
    """Solve ``apply(x) = b``; batch members with ``|b| <= atol`` return zero."""
    if bcast is None:
        def bcast(s):
            return [s] * len(b)

    bnorm = np.sqrt(dot(b, b))
    x = [np.zeros_like(bi) for bi in b]
    trivial = bnorm <= atol
    if np.all(trivial):
        return CGResult(x, 0, 0.0)
    safe_bnorm = np.where(trivial, 1.0, bnorm)
    if np.any(trivial):
        keep = bcast(np.where(trivial, 0.0, 1.0))
        b = [ki * bi for ki, bi in zip(keep, b)]

    def relres(r):
        return np.where(trivial, 0.0, np.sqrt(dot(r, r)) / safe_bnorm)

    r = [bi.copy() for bi in b]
    z = precond(r)
    p = [zi.copy() for zi in z]
    rz = dot(r, z)
    rel = relres(r)
    for it in range(1, maxiter + 1):
        q = apply(p)
        pq = dot(p, q)
        active = rel > tol
        if np.any(pq[active] <= 0) if np.ndim(pq) else (active and pq <= 0):
            raise SolverError("non-positive curvature in CG: operator is not coercive",
                              residual=float(np.max(rel)))
        alpha = np.where(active, rz / np.where(pq > 0, pq, 1.0), 0.0)
        al = bcast(alpha)
        x = _axpy(al, p, x)
        r = _axpy([-a for a in al], q, r)
        rel = relres(r)
        if np.all(rel <= tol):
            return CGResult(x, it, float(np.max(rel)))
        z = precond(r)
        rz_new = dot(r, z)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        rz = rz_new
        p = _axpy(bcast(beta), p, z)
    raise SolverError(f"CG did not converge in {maxiter} iterations "
                      f"(relative residual {float(np.max(rel)):.3e})", residual=float(np.max(rel)))
