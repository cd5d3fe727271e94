"""Numerical diagnostics of reiterated two-scale convergence.

Test functions and analytic sequences are separable products over the three
axes ``x1``, ``x2`` and ``t``.  Along a space axis a factor reads
``slow(x) * fast(y) * faster(z)``; along the time axis it reads
``slow(t) * fast(tau)``.  The trace at scale eps substitutes ``y = x/eps``,
``tau = t/eps`` and ``z = x/eps**2``.

Because products of separable profiles stay separable, every pairing on
``Q = (0, Lx) x (0, Ly) x (0, T)`` factors into 1D integrals.  Traces are
integrated by composite Gauss-Legendre with panels no longer than the finest
period; limits are integrated per variable (Gauss-Legendre for slow factors,
periodic midpoint for cell factors, which is exact for trig polynomials of
low degree).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .flow import ResolutionError

CELL_POINTS = 512          # periodic midpoint rule on [0, 1) for cell means
SLOW_POINTS = 64           # Gauss-Legendre nodes for slow-only integrals
NODES_PER_PERIOD = 16      # Gauss-Legendre nodes per finest period in traces
MIN_PANELS = 64


def _mul(f, g):
    if f is None:
        return g
    if g is None:
        return f
    return lambda s: f(s) * g(s)


def _ev(f, s):
    return np.ones_like(s) if f is None else np.broadcast_to(f(s), np.shape(s)).astype(float)


@dataclass(frozen=True)
class AxisFactor:
    """``slow(x) * fast(x/eps) * faster(x/eps**2)``; ``None`` means 1."""

    slow: Callable | None = None
    fast: Callable | None = None
    faster: Callable | None = None

    def __mul__(self, other: "AxisFactor") -> "AxisFactor":
        return AxisFactor(_mul(self.slow, other.slow), _mul(self.fast, other.fast),
                          _mul(self.faster, other.faster))

    @property
    def oscillates(self) -> bool:
        return self.fast is not None or self.faster is not None

    def period(self, eps: float) -> float | None:
        """Finest period of the trace, or None when nothing oscillates."""
        if self.faster is not None:
            return eps * eps
        if self.fast is not None:
            return eps
        return None

    def trace(self, x, eps: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = _ev(self.slow, x)
        if self.fast is not None:
            out = out * _ev(self.fast, x / eps)
        if self.faster is not None:
            out = out * _ev(self.faster, x / eps**2)
        return out

    def __call__(self, x, y=0.0, z=0.0) -> np.ndarray:
        return _ev(self.slow, np.asarray(x, float)) * _ev(self.fast, np.asarray(y, float)) \
            * _ev(self.faster, np.asarray(z, float))

    def cell_average(self) -> "AxisFactor":
        """Slow factor times the cell means of the periodic factors."""
        c = cell_mean(self.fast) * cell_mean(self.faster)
        slow = self.slow
        return AxisFactor((lambda s: c * _ev(slow, s)) if slow is not None
                          else (lambda s: np.full(np.shape(s), c)))

    def sup_fast(self) -> float:
        """sup over the cell variables of |fast * faster|, by sampling."""
        s = (np.arange(CELL_POINTS) + 0.5) / CELL_POINTS
        a = np.abs(_ev(self.fast, s)).max()
        b = np.abs(_ev(self.faster, s)).max()
        return float(a * b)


@dataclass(frozen=True)
class SpaceTimeBox:
    """Q = (0, Lx) x (0, Ly) x (0, T)."""

    Lx: float = 1.0
    Ly: float = 1.0
    T: float = 1.0

    def lengths(self):
        return (self.Lx, self.Ly, self.T)


@dataclass(frozen=True)
class SeparableProfile:
    """u(x, t, y, tau, z) = scale * X1(x1, y1, z1) * X2(x2, y2, z2) * Tt(t, tau)."""

    x1: AxisFactor = AxisFactor()
    x2: AxisFactor = AxisFactor()
    t: AxisFactor = AxisFactor()
    scale: float = 1.0

    def __post_init__(self):
        if self.t.faster is not None:
            raise ValueError("the time axis has no eps^2 variable")

    @property
    def axes(self):
        return (self.x1, self.x2, self.t)

    def __mul__(self, other: "SeparableProfile") -> "SeparableProfile":
        return SeparableProfile(self.x1 * other.x1, self.x2 * other.x2, self.t * other.t,
                                self.scale * other.scale)

    @property
    def oscillates(self) -> bool:
        return any(a.oscillates for a in self.axes)

    def __call__(self, x1, x2, t, y1=0.0, y2=0.0, tau=0.0, z1=0.0, z2=0.0):
        return self.scale * self.x1(x1, y1, z1) * self.x2(x2, y2, z2) * self.t(t, tau)

    def trace(self, x1, x2, t, eps: float) -> np.ndarray:
        """psi^eps(x, t) = psi(x, t, x/eps, t/eps, x/eps^2), broadcast over inputs."""
        return self.scale * self.x1.trace(x1, eps) * self.x2.trace(x2, eps) * self.t.trace(t, eps)

    def cell_average(self) -> "SeparableProfile":
        return SeparableProfile(self.x1.cell_average(), self.x2.cell_average(),
                                self.t.cell_average(), self.scale)


class TestFunction(SeparableProfile):
    """Separable test function phi(x, t) * omega(tau) * mu(y) * nu(z).

    Built with :meth:`build`; the periodic factors are checked for
    1-periodicity and the slow factors for finiteness on the closed box.
    """

    __test__ = False   # not a pytest class

    @classmethod
    def build(cls, phi1=None, phi2=None, phit=None, mu1=None, mu2=None,
              nu1=None, nu2=None, omega=None, scale: float = 1.0,
              box: SpaceTimeBox | None = None) -> "TestFunction":
        out = cls(AxisFactor(phi1, mu1, nu1), AxisFactor(phi2, mu2, nu2),
                  AxisFactor(phit, omega), scale)
        out.validate(box or SpaceTimeBox())
        return out

    def validate(self, box: SpaceTimeBox):
        s = np.linspace(-1.0, 1.0, 97)
        for f in (self.x1.fast, self.x1.faster, self.x2.fast, self.x2.faster, self.t.fast):
            if f is not None and not np.allclose(_ev(f, s + 1.0), _ev(f, s), atol=1e-12, rtol=1e-10):
                raise ValueError("periodic factor is not 1-periodic")
        for a, L in zip(self.axes, box.lengths()):
            if not np.all(np.isfinite(_ev(a.slow, np.linspace(0.0, L, 257)))):
                raise ValueError("slow factor is not finite on the closed box")


def cos_mode(m: int = 1) -> Callable:
    """s -> cos(2 pi m s)."""
    return lambda s: np.cos(2 * np.pi * m * s)


def sin_mode(m: int = 1) -> Callable:
    return lambda s: np.sin(2 * np.pi * m * s)


# ---------------------------------------------------------------------------
# 1D quadrature


def cell_mean(f: Callable | None) -> float:
    """Mean over [0, 1) by the periodic midpoint rule."""
    if f is None:
        return 1.0
    s = (np.arange(CELL_POINTS) + 0.5) / CELL_POINTS
    return float(np.mean(_ev(f, s)))


def slow_integral(f: Callable | None, L: float) -> float:
    x, w = np.polynomial.legendre.leggauss(SLOW_POINTS)
    x = 0.5 * L * (x + 1.0)
    return float(0.5 * L * np.dot(w, _ev(f, x)))


def trace_nodes(L: float, period: float | None, nodes_per_period: int = NODES_PER_PERIOD):
    """Composite Gauss-Legendre nodes and weights on (0, L).

    Panels are no longer than ``period``; with ``nodes_per_period`` >= 8
    every finest oscillation is sampled at least eight times.
    """
    if nodes_per_period < 8:
        raise ResolutionError("at least 8 quadrature points per finest period are required")
    panels = MIN_PANELS if period is None else max(MIN_PANELS, math.ceil(L / period - 1e-9))
    g, w = np.polynomial.legendre.leggauss(nodes_per_period)
    h = L / panels
    left = h * np.arange(panels)
    x = (left[:, None] + 0.5 * h * (g[None, :] + 1.0)).ravel()
    return x, np.tile(0.5 * h * w, panels)


def trace_integral(a: AxisFactor, L: float, eps: float,
                   nodes_per_period: int = NODES_PER_PERIOD) -> float:
    x, w = trace_nodes(L, a.period(eps), nodes_per_period)
    return float(np.dot(w, a.trace(x, eps)))


def limit_integral(a: AxisFactor, L: float) -> float:
    """int_0^L slow * int_0^1 fast * int_0^1 faster."""
    return slow_integral(a.slow, L) * cell_mean(a.fast) * cell_mean(a.faster)


def _as_terms(u) -> list:
    if isinstance(u, SeparableProfile):
        return [u]
    return list(u)


def integrate_trace(u, eps: float, box: SpaceTimeBox = SpaceTimeBox(),
                    nodes_per_period: int = NODES_PER_PERIOD) -> float:
    """int_Q u^eps for a separable profile or a sum of them."""
    total = 0.0
    for p in _as_terms(u):
        v = p.scale
        for a, L in zip(p.axes, box.lengths()):
            v *= trace_integral(a, L, eps, nodes_per_period)
        total += v
    return total


def integrate_limit(u, box: SpaceTimeBox = SpaceTimeBox()) -> float:
    """int_Q int_Y int_T int_Z u for a separable profile or a sum of them."""
    total = 0.0
    for p in _as_terms(u):
        v = p.scale
        for a, L in zip(p.axes, box.lengths()):
            v *= limit_integral(a, L)
        total += v
    return total


def _times(u, psi):
    return [a * b for a in _as_terms(u) for b in _as_terms(psi)]


# ---------------------------------------------------------------------------
# records


@dataclass
class PairingRecord:
    epsilon: float
    lhs: float
    rhs: float
    gap: float = field(init=False)

    def __post_init__(self):
        self.gap = abs(self.lhs - self.rhs)
        if not all(map(math.isfinite, (self.lhs, self.rhs))):
            raise ArithmeticError(f"non-finite pairing at eps={self.epsilon}")


def records_csv(records: Sequence[PairingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "lhs", "rhs", "gap"])
    for r in records:
        w.writerow(["%.17g" % v for v in (r.epsilon, r.lhs, r.rhs, r.gap)])
    return buf.getvalue()


def gaps(records: Sequence[PairingRecord]) -> np.ndarray:
    return np.array([r.gap for r in records])


def strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


# ---------------------------------------------------------------------------
# operations


def pairing(u_eps, psi: SeparableProfile, epsilon: float, box: SpaceTimeBox = SpaceTimeBox(),
            nodes_per_period: int = NODES_PER_PERIOD) -> float:
    """int_Q u_eps psi^eps for ``u_eps`` the trace of separable profile(s) at ``epsilon``."""
    return integrate_trace(_times(u_eps, psi), epsilon, box, nodes_per_period)


def pairing_record(u, psi: SeparableProfile, epsilon: float,
                   box: SpaceTimeBox = SpaceTimeBox()) -> PairingRecord:
    """lhs from the trace of ``u`` at ``epsilon``; rhs the limit pairing with the profile."""
    return PairingRecord(epsilon, pairing(u, psi, epsilon, box), integrate_limit(_times(u, psi), box))


def pairing_sweep(u, psi: SeparableProfile, eps_list, box: SpaceTimeBox = SpaceTimeBox()):
    return [pairing_record(u, psi, e, box) for e in eps_list]


def pairing_on_grid(values: np.ndarray, xs: np.ndarray, ys: np.ndarray, times: np.ndarray,
                    psi: SeparableProfile, epsilon: float, cell_area: float,
                    min_points: int = 8) -> float:
    """int_Q u_eps psi^eps for gridded samples ``values[t, i, j]`` at ``(xs[i], ys[j])``.

    Space uses equal weights ``cell_area``; time uses the trapezoid rule over
    ``times``.  Oscillating factors must be sampled with at least
    ``min_points`` points per finest period.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    for a, c, name in ((psi.x1, xs, "x1"), (psi.x2, ys, "x2"), (psi.t, times, "t")):
        per = a.period(epsilon)
        if per is None or len(c) < 2:
            continue
        h = float(np.max(np.diff(np.unique(c))))
        if h > per / min_points * (1 + 1e-9):
            raise ResolutionError(
                f"trace along {name} needs spacing <= period/{min_points} = {per / min_points:.3g}, got {h:.3g}")
    tr = psi.scale * np.einsum("i,j->ij", psi.x1.trace(xs, epsilon), psi.x2.trace(ys, epsilon))
    inner = cell_area * np.einsum("tij,ij->t", values, tr) * psi.t.trace(times, epsilon)
    if len(times) == 1:
        return float(inner[0])
    return float(np.sum(0.5 * (inner[1:] + inner[:-1]) * np.diff(times)))


def mean_convergence_check(psi: SeparableProfile, eps_list, probe: SeparableProfile | None = None,
                           box: SpaceTimeBox = SpaceTimeBox()) -> list[PairingRecord]:
    """Weak convergence of the traces to the cell mean, tested against ``probe``.

    lhs = int_Q psi^eps g, rhs = int_Q psi~ g with psi~ the (y, tau, z)
    cell mean of psi.  ``probe`` must not oscillate (default g = 1).
    """
    g = probe if probe is not None else SeparableProfile()
    if g.oscillates:
        raise ValueError("the probe must be independent of the fast variables")
    rhs = integrate_limit(psi.cell_average() * g, box)
    return [PairingRecord(e, integrate_trace(psi * g, e, box), rhs) for e in eps_list]


def product_convergence_check(strong: SeparableProfile, weak, eps_list,
                              psi: SeparableProfile | None = None,
                              box: SpaceTimeBox = SpaceTimeBox()) -> list[PairingRecord]:
    """Pairing of ``strong^eps * weak^eps`` against ``psi^eps`` versus the limit pairing.

    Both factors are traces of fixed profiles, so the limit equals the
    cell mean of ``strong * weak * psi``.
    """
    psi = psi if psi is not None else SeparableProfile()
    prod = _times(_times(strong, weak), psi)
    rhs = integrate_limit(prod, box)
    return [PairingRecord(e, integrate_trace(prod, e, box), rhs) for e in eps_list]


def norm_convergence_check(psi: SeparableProfile, eps_list,
                           box: SpaceTimeBox = SpaceTimeBox()) -> list[PairingRecord]:
    """||psi^eps||_{L2(Q)} against ||psi||_{L2(Q x Y x T x Z)}."""
    sq = psi * psi
    rhs = math.sqrt(max(integrate_limit(sq, box), 0.0))
    return [PairingRecord(e, math.sqrt(max(integrate_trace(sq, e, box), 0.0)), rhs) for e in eps_list]


def trace_norm_bound(psi: SeparableProfile, box: SpaceTimeBox = SpaceTimeBox()) -> float:
    """|| sup over (y, tau, z) of |psi| ||_{L2(Q)}, an upper bound for every trace norm."""
    v = psi.scale**2
    for a, L in zip(psi.axes, box.lengths()):
        v *= slow_integral(_mul(a.slow, a.slow), L) * a.sup_fast() ** 2
    return math.sqrt(v)


def reduction_profile(psi: SeparableProfile, drop: str) -> SeparableProfile:
    """Profile with the eps^2 factors (``drop='z'``) or all fast factors (``drop='all'``) removed."""
    if drop == "z":
        return replace(psi, x1=AxisFactor(psi.x1.slow, psi.x1.fast), x2=AxisFactor(psi.x2.slow, psi.x2.fast))
    if drop == "all":
        return SeparableProfile(AxisFactor(psi.x1.slow), AxisFactor(psi.x2.slow),
                                AxisFactor(psi.t.slow), psi.scale)
    raise ValueError("drop must be 'z' or 'all'")
