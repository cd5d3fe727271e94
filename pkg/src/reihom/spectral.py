"""Truncated Fourier layout shared by the cell solvers.

Fields on a unit cell are real trigonometric polynomials with wavenumbers
``|k_j| <= n/2 - 1`` (the Nyquist mode is dropped so that differentiation is
exact).  Coefficients are stored in a compact real-FFT layout: every axis but
the last is a full axis of length ``n - 1`` ordered ``0..n/2-1, -(n/2-1)..-1``;
the last axis is a half axis ``0..n/2-1``.  With ``f(s) = sum c_k exp(2 pi i k.s)``
and ``s = y + 1/2`` we have ``c = rfftn(f_nodes) / n^d`` restricted to the
retained modes.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


def dealiased_size(n: int) -> int:
    """Quadrature grid size for the 3/2 rule."""
    return (3 * n) // 2


def full_wavenumbers(n: int) -> np.ndarray:
    h = n // 2
    return np.r_[0:h, -(h - 1):0].astype(float)


def half_wavenumbers(n: int) -> np.ndarray:
    return np.arange(n // 2, dtype=float)


def full_positions(n: int, m: int) -> np.ndarray:
    """Positions of the retained full-axis modes inside an FFT axis of length m."""
    h = n // 2
    return np.r_[0:h, m - (h - 1):m]


def half_positions(n: int) -> np.ndarray:
    return np.arange(n // 2)


class Layout:
    """Compact spectral layout over the trailing ``len(ns)`` axes.

    ``ns`` lists the mode counts per axis; the last axis is the half axis.
    ``ms`` lists the physical grid sizes used for synthesis/analysis.
    """

    def __init__(self, ns, ms=None):
        self.ns = tuple(int(n) for n in ns)
        self.ms = tuple(int(m) for m in (ms if ms is not None else ns))
        self.d = len(self.ns)
        for n, m in zip(self.ns, self.ms):
            if m < n - 1:
                raise ValueError("physical grid too small for the retained modes")
        self.wavenumbers = [full_wavenumbers(n) for n in self.ns[:-1]] + [half_wavenumbers(self.ns[-1])]
        self.shape = tuple(len(k) for k in self.wavenumbers)
        pos = [full_positions(n, m) for n, m in zip(self.ns[:-1], self.ms[:-1])]
        pos.append(half_positions(self.ns[-1]))
        self._ix = np.ix_(*pos)
        self._axes = tuple(range(-self.d, 0))
        self._rshape = self.ms[:-1] + (self.ms[-1] // 2 + 1,)
        self._norm = float(np.prod(self.ms))
        # Hermitian weights so that <c, c'> equals the cell integral of f f'.
        w = np.where(self.wavenumbers[-1] == 0, 1.0, 2.0)
        self.weights = w.reshape((1,) * (self.d - 1) + (-1,))

    def wavevector(self, axis: int) -> np.ndarray:
        """Wavenumbers along ``axis`` broadcast to the compact shape."""
        shp = [1] * self.d
        shp[axis] = -1
        return self.wavenumbers[axis].reshape(shp)

    def zeros(self, lead=()) -> np.ndarray:
        return np.zeros(tuple(lead) + self.shape, dtype=complex)

    def synthesize(self, c: np.ndarray, workers: int | None = None) -> np.ndarray:
        """Nodal values on the physical grid ``ms``."""
        full = np.zeros(c.shape[:-self.d] + self._rshape, dtype=complex)
        full[(Ellipsis,) + self._ix] = c
        return sfft.irfftn(full, s=self.ms, axes=self._axes, workers=workers) * self._norm

    def analyze(self, f: np.ndarray, workers: int | None = None) -> np.ndarray:
        """Retained coefficients of nodal values on the physical grid ``ms``."""
        full = sfft.rfftn(f, axes=self._axes, workers=workers)
        return full[(Ellipsis,) + self._ix] / self._norm

    def inner(self, a: np.ndarray, b: np.ndarray, keep=()) -> np.ndarray | float:
        """Real L2 inner product of the represented real fields."""
        prod = (np.conj(a) * b).real * self.weights
        axes = tuple(ax for ax in range(prod.ndim) if ax not in keep)
        return prod.sum(axis=axes)


def project_div_free(c: np.ndarray, k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
    """Leray projection of a 2-component coefficient array ``c[comp, ...]``.

    Modes with ``k = 0`` are zeroed.
    """
    ksq = k1 * k1 + k2 * k2
    with np.errstate(invalid="ignore", divide="ignore"):
        dot = np.where(ksq > 0, (k1 * c[0] + k2 * c[1]) / np.where(ksq > 0, ksq, 1.0), 0.0)
    out = np.empty_like(c)
    out[0] = np.where(ksq > 0, c[0] - k1 * dot, 0.0)
    out[1] = np.where(ksq > 0, c[1] - k2 * dot, 0.0)
    return out
