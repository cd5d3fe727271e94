"""Two-scale correctors and the corrector error sweep.

With G_ik = d u0^k / d x_i the correctors are

    u1(x, t, y)    = - sum_ik G_ik(x, t) chi_ik(y),
    u2(x, t, y, z) = - sum_ik G_ik(x, t) eta_ik(y, z),

and the expansion ``u0 + eps u1(x/eps) + eps^2 u2(x/eps, x/eps^2)`` is compared
with the oscillatory solution on the same MAC grid.  Velocities are evaluated
on extended face sets (wall faces included) so that the gradient error is
taken with interior differences only; no boundary condition is imposed on the
expansion.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .cells import INDEX_PAIRS, CellSolution
from .flow import (
    DomainGrid,
    FlowState,
    ForcingField,
    HomogenizedModel,
    OscillatoryModel,
    RunResult,
    Stepper,
    check_resolution,
    run,
)
from .spectral import TWO_PI, Layout


class ProvenanceError(ValueError):
    """Cell solution and homogenized run come from different coefficient fields."""


# ---------------------------------------------------------------------------
# gradients of the homogenized velocity


def velocity_at_nodes(grid: DomainGrid, state: FlowState) -> np.ndarray:
    """Both components averaged to the (nx+1, ny+1) nodes; zero on walls."""
    nx, ny = grid.nx, grid.ny
    out = np.zeros((2, nx + 1, ny + 1))
    out[0, 1:nx, 1:ny] = 0.5 * (state.u[:, :-1] + state.u[:, 1:])
    out[1, 1:nx, 1:ny] = 0.5 * (state.v[:-1, :] + state.v[1:, :])
    return out


def gradient_at_nodes(grid: DomainGrid, state: FlowState) -> np.ndarray:
    """G[i, k] = d u^k / d x_i at the nodes, second-order differences."""
    w = velocity_at_nodes(grid, state)
    G = np.empty((2, 2) + w.shape[1:])
    for k in range(2):
        G[0, k], G[1, k] = np.gradient(w[k], grid.hx, grid.hy, edge_order=2)
    return G


def extended_u_faces(grid: DomainGrid):
    x = np.arange(grid.nx + 1) * grid.hx
    y = (np.arange(grid.ny) + 0.5) * grid.hy
    return x, y


def extended_v_faces(grid: DomainGrid):
    x = (np.arange(grid.nx) + 0.5) * grid.hx
    y = np.arange(grid.ny + 1) * grid.hy
    return x, y


def _nodes_to_u(Gn):
    return 0.5 * (Gn[..., :, :-1] + Gn[..., :, 1:])


def _nodes_to_v(Gn):
    return 0.5 * (Gn[..., :-1, :] + Gn[..., 1:, :])


def extend(grid: DomainGrid, state: FlowState):
    """Velocity on the extended face sets (wall faces hold 0)."""
    return np.pad(state.u, ((1, 1), (0, 0))), np.pad(state.v, ((0, 0), (1, 1)))


# ---------------------------------------------------------------------------
# fast tensor-grid evaluation of cell fields


def _phases(k, coords, scale):
    """exp(2 pi i k (x/scale + 1/2)) for coordinates x, shape (len(x), len(k))."""
    return np.exp(1j * TWO_PI * np.outer(np.asarray(coords) / scale + 0.5, k))


def chi_on_grid(sol: CellSolution, ik, xs, ys, epsilon) -> np.ndarray:
    """chi_ik(x/eps) on the tensor grid xs x ys, shape (2, len(xs), len(ys))."""
    lay = Layout((sol.n_y, sol.n_y))
    c = sol.chi[tuple(ik)] * lay.weights
    E1 = _phases(lay.wavenumbers[0], xs, epsilon)
    E2 = _phases(lay.wavenumbers[1], ys, epsilon)
    return np.einsum("ak,ckq,bq->cab", E1, c, E2).real


def eta_on_grid(sol: CellSolution, ik, xs, ys, epsilon) -> np.ndarray:
    """eta_ik(x/eps, x/eps^2) on the tensor grid, shape (2, len(xs), len(ys))."""
    lay = Layout((sol.n_y, sol.n_y, sol.n_z, sol.n_z))
    c = sol.eta[tuple(ik)] * lay.weights
    ky1, ky2, kz1, kz2 = lay.wavenumbers
    E1 = _phases(ky1, xs, epsilon)
    F1 = _phases(kz1, xs, epsilon**2)
    E2 = _phases(ky2, ys, epsilon)
    F2 = _phases(kz2, ys, epsilon**2)
    A = np.einsum("ak,am,ckqmn->caqn", E1, F1, c)
    return np.einsum("caqn,bq,bn->cab", A, E2, F2).real


# ---------------------------------------------------------------------------


@dataclass
class CorrectorFields:
    """Lazy correctors: homogenized snapshots plus cell-solution handles."""

    grid: DomainGrid
    snapshots: list
    cells: CellSolution
    _grads: dict = field(default_factory=dict, repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def grad_nodes(self, n: int) -> np.ndarray:
        if n not in self._grads:
            self._grads[n] = gradient_at_nodes(self.grid, self.snapshots[n])
        return self._grads[n]

    def grad_u0(self, n: int, x, y) -> np.ndarray:
        """Bilinear interpolation of G at arbitrary points, shape (2, 2) + x.shape."""
        xn = np.arange(self.grid.nx + 1) * self.grid.hx
        yn = np.arange(self.grid.ny + 1) * self.grid.hy
        G = self.grad_nodes(n)
        pts = np.stack(np.broadcast_arrays(x, y), axis=-1)
        out = np.empty((2, 2) + np.shape(pts)[:-1])
        for i, k in INDEX_PAIRS:
            out[i, k] = RegularGridInterpolator((xn, yn), G[i, k])(pts)
        return out

    def u1_at(self, n: int, x, y, epsilon):
        """Slow pointwise u1 by direct summation (no tables)."""
        G = self.grad_u0(n, x, y)
        out = 0.0
        for ik in INDEX_PAIRS:
            chi = self.cells.chi_field(ik).evaluate(np.asarray(x) / epsilon, np.asarray(y) / epsilon)
            out = out - G[ik] * chi
        return out

    def u2_at(self, n: int, x, y, epsilon):
        G = self.grad_u0(n, x, y)
        lay = Layout((self.cells.n_y,) * 2 + (self.cells.n_z,) * 2)
        s = [np.asarray(v, float)[..., None, None, None, None] for v in
             (x / epsilon + 0.5, y / epsilon + 0.5, x / epsilon**2 + 0.5, y / epsilon**2 + 0.5)]
        arg = sum(lay.wavevector(d) * s[d] for d in range(4))
        ph = np.exp(1j * TWO_PI * arg) * lay.weights
        out = 0.0
        for ik in INDEX_PAIRS:
            c = self.cells.eta[ik]
            eta = np.array([(ph * c[m]).sum(axis=(-4, -3, -2, -1)).real for m in range(2)])
            out = out - G[ik] * eta
        return out


def build_correctors(u0: RunResult, cells: CellSolution, field_key: str | None = None) -> CorrectorFields:
    """Correctors from a homogenized trajectory and the matching cell solution.

    The provenance check uses ``field_key`` when given, else the key recorded
    by the run (runs driven by a bare tensor array carry none).
    """
    field_key = field_key if field_key is not None else (u0.field_key or None)
    if field_key is not None and field_key != cells.field_key:
        raise ProvenanceError(f"homogenized run used field {field_key!r}, "
                              f"cells were solved for {cells.field_key!r}")
    return CorrectorFields(u0.grid, list(u0.snapshots), cells)


class _Tables:
    """chi and eta sampled at x/eps on both extended face sets."""

    def __init__(self, corr: CorrectorFields, epsilon: float):
        g, sol = corr.grid, corr.cells
        self.sets = {"u": extended_u_faces(g), "v": extended_v_faces(g)}
        self.chi, self.eta = {}, {}
        for name, comp in (("u", 0), ("v", 1)):
            xs, ys = self.sets[name]
            for ik in INDEX_PAIRS:
                self.chi[name, ik] = chi_on_grid(sol, ik, xs, ys, epsilon)[comp]
                self.eta[name, ik] = eta_on_grid(sol, ik, xs, ys, epsilon)[comp]


@dataclass
class Expansion:
    """Extended face values of u0, u1 and u2 for one snapshot."""

    u0: tuple
    u1: tuple
    u2: tuple
    epsilon: float

    def total(self) -> tuple:
        e = self.epsilon
        return tuple(a + e * b + e * e * c for a, b, c in zip(self.u0, self.u1, self.u2))


def evaluate_expansion(corr: CorrectorFields, epsilon: float, n: int = -1,
                       tables: _Tables | None = None, override_resolution: bool = False) -> Expansion:
    """u0 + eps u1 + eps^2 u2 on the extended face sets of snapshot ``n``."""
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if epsilon < 1:
        check_resolution(corr.grid, epsilon, override_resolution)
    n = n % len(corr.snapshots)
    tab = tables or _Tables(corr, epsilon)
    g = corr.grid
    Gn = corr.grad_nodes(n)
    Gf = {"u": _nodes_to_u(Gn), "v": _nodes_to_v(Gn)}
    u0 = extend(g, corr.snapshots[n])
    u1, u2 = [], []
    for name in ("u", "v"):
        a = np.zeros(Gf[name].shape[2:])
        b = np.zeros_like(a)
        for ik in INDEX_PAIRS:
            a -= Gf[name][ik] * tab.chi[name, ik]
            b -= Gf[name][ik] * tab.eta[name, ik]
        u1.append(a)
        u2.append(b)
    return Expansion(u0, tuple(u1), tuple(u2), epsilon)


def gradient_error_sq(grid: DomainGrid, eu: np.ndarray, ev: np.ndarray) -> float:
    """||grad e||^2 from extended face values, interior differences only."""
    hx, hy = grid.hx, grid.hy
    w = hx * hy
    s = np.sum((np.diff(eu, axis=0) / hx) ** 2) + np.sum((np.diff(ev, axis=1) / hy) ** 2)
    # cross derivatives live on nodes; wall columns/rows carry half weight
    d2u = np.diff(eu, axis=1) / hy                     # (nx+1, ny-1)
    d1v = np.diff(ev, axis=0) / hx                     # (nx-1, ny+1)
    wu = np.ones(d2u.shape[0])
    wu[[0, -1]] = 0.5
    wv = np.ones(d1v.shape[1])
    wv[[0, -1]] = 0.5
    s += np.sum(wu[:, None] * d2u**2) + np.sum(wv[None, :] * d1v**2)
    return float(w * s)


def l2_error_sq(grid: DomainGrid, a: FlowState, b: FlowState) -> float:
    return float(grid.hx * grid.hy * (np.sum((a.u - b.u) ** 2) + np.sum((a.v - b.v) ** 2)))


def _trapezoid(values, times) -> float:
    values, times = np.asarray(values, float), np.asarray(times, float)
    if len(values) < 2:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def expansion_errors(corr: CorrectorFields, dns: RunResult, epsilon: float,
                     override_resolution: bool = False):
    """(E_grad, E_L2) over Q with snapshot-trapezoid time quadrature."""
    times_h = corr.times
    times_d = np.array([s.t for s in dns.snapshots])
    if len(times_h) != len(times_d) or not np.allclose(times_h, times_d, rtol=0, atol=1e-12):
        raise ValueError("oscillatory and homogenized runs must share their output times")
    tab = _Tables(corr, epsilon)
    eg, el = [], []
    for n, s in enumerate(dns.snapshots):
        ex = evaluate_expansion(corr, epsilon, n, tab, override_resolution)
        ua, va = ex.total()
        ue, ve = extend(corr.grid, s)
        eg.append(gradient_error_sq(corr.grid, ue - ua, ve - va))
        el.append(l2_error_sq(corr.grid, s, corr.snapshots[n]))
    return np.sqrt(_trapezoid(eg, times_h)), np.sqrt(_trapezoid(el, times_h))


def parseval_audit(corr: CorrectorFields, epsilon: float, n: int = -1) -> tuple[float, float]:
    """Quadrature audit of int |u1|^2 over the eps-cells lying inside the domain.

    On each eps-cell the macroscopic gradient is frozen at the cell centre, so
    the integrand is eps-periodic there.  Returns the nodal face quadrature and
    the value from the Parseval Gram matrix ``<chi_ik . chi_jh>`` of the
    spectral coefficients; they differ only by quadrature error, which
    vanishes to rounding when every eps-cell holds a whole number of grid
    cells and is O(h/eps) otherwise.
    """
    g, sol = corr.grid, corr.cells
    n = n % len(corr.snapshots)
    px, py = int(np.floor(g.Lx / epsilon + 1e-9)), int(np.floor(g.Ly / epsilon + 1e-9))
    if px < 1 or py < 1:
        raise ValueError("no complete eps-cell fits in the domain")
    cx = (np.arange(px) + 0.5) * epsilon
    cy = (np.arange(py) + 0.5) * epsilon
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    Gp = corr.grad_u0(n, CX, CY).reshape(4, px, py)     # frozen gradients per cell
    w = g.hx * g.hy
    nodal = 0.0
    for name, comp, (xs, ys) in (("u", 0, extended_u_faces(g)), ("v", 1, extended_v_faces(g))):
        chis = np.stack([chi_on_grid(sol, ik, xs, ys, epsilon)[comp] for ik in INDEX_PAIRS])
        ix = np.floor(xs / epsilon + 1e-9).astype(int)
        iy = np.floor(ys / epsilon + 1e-9).astype(int)
        okx, oky = ix < px, iy < py
        # drop the closing wall face so each cell holds one full period of nodes
        okx &= xs < px * epsilon - 1e-12
        oky &= ys < py * epsilon - 1e-12
        G = Gp[:, ix[okx]][:, :, iy[oky]]
        u1 = -np.einsum("aij,aij->ij", G, chis[:, okx][:, :, oky])
        nodal += w * float(np.sum(u1**2))
    lay = Layout((sol.n_y, sol.n_y))
    gram = np.zeros((4, 4))
    for a, ik in enumerate(INDEX_PAIRS):
        for b, jh in enumerate(INDEX_PAIRS):
            gram[a, b] = lay.inner(sol.chi[ik], sol.chi[jh])
    spectral = epsilon**2 * float(np.einsum("apq,ab,bpq->", Gp, gram, Gp))
    return nodal, spectral


# ---------------------------------------------------------------------------
# sweep


@dataclass
class CorrectorRecord:
    epsilon: float
    E_grad: float
    E_L2: float
    nx: int
    dt: float
    wall_seconds: float
    error: str = ""


@dataclass
class CorrectorReport:
    records: list = field(default_factory=list)
    homogenized_seconds: float = 0.0

    def completed(self) -> list:
        return [r for r in self.records if not r.error]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "E_grad", "E_L2", "nx", "dt", "wall_seconds"])
        for r in self.completed():
            w.writerow(["%.17g" % r.epsilon, "%.17g" % r.E_grad, "%.17g" % r.E_L2, r.nx,
                        "%.17g" % r.dt, "%.6f" % r.wall_seconds])
        return buf.getvalue()

    def decreasing(self, attr: str = "E_grad") -> bool:
        vals = [getattr(r, attr) for r in self.completed()]
        return all(b < a for a, b in zip(vals, vals[1:]))


def corrector_sweep(cells: CellSolution, tensor, forcing: ForcingField, grid: DomainGrid,
                    epsilons, output_every: int = 5, override_resolution: bool = False,
                    homogenized: RunResult | None = None, log=None,
                    scheme: str = "bdf2") -> CorrectorReport:
    """DNS for each eps, expansion from one homogenized run, gradient/L2 errors.

    Epsilons are processed in strictly decreasing order.  A failing member is
    recorded with its error message and the sweep continues.
    """
    eps = sorted({float(e) for e in epsilons}, reverse=True)
    for e in eps:
        check_resolution(grid, e, override_resolution)
    fld = cells.sampling.fld
    t0 = time.perf_counter()
    if homogenized is None:
        homogenized = run(HomogenizedModel(tensor), forcing, grid, output_every=output_every,
                          scheme=scheme)
    corr = build_correctors(homogenized, cells)
    report = CorrectorReport(homogenized_seconds=time.perf_counter() - t0)
    for e in eps:
        t1 = time.perf_counter()
        try:
            model = OscillatoryModel(fld, e, override_resolution)
            dns = run(model, forcing, grid, output_every=output_every,
                      stepper=Stepper(model, grid, scheme=scheme))
            eg, el = expansion_errors(corr, dns, e, override_resolution)
            rec = CorrectorRecord(e, eg, el, grid.nx, dns.dt, time.perf_counter() - t1)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            rec = CorrectorRecord(e, float("nan"), float("nan"), grid.nx, grid.step_dt,
                                  time.perf_counter() - t1, f"{type(exc).__name__}: {exc}")
        if log:
            log(rec)
        report.records.append(rec)
    return report
