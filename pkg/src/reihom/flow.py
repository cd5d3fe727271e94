"""Unsteady 2D incompressible flow on a MAC grid over a rectangle.

Both viscosity models share one discrete bilinear form

    a_h(u, v) = sum_{ijkh} int C_ijkh(x) d_j u^h d_i v^k,

with ``C = a^eps (x) delta`` for the oscillatory model and ``C = q`` (constant)
for the homogenized one.  Gradient components live where they are native on the
staggered grid: ``d1 u`` and ``d2 v`` at cell centres, ``d2 u`` and ``d1 v`` at
grid nodes (no-slip ghost reflection at walls).  Every pairing is integrated
per cell with the coefficient taken at the cell centre; node quantities enter
through their four-corner average (mixed pairs) or the corner mean of the
products (node-node pairs).  The per-cell form dominates the continuous form
evaluated at averaged gradients, so a_h is symmetric and coercive whenever C is.

Time stepping: BDF2 viscosity with extrapolated advection (default) or
Crank-Nicolson viscosity with Adams-Bashforth advection, both after a
semi-implicit Euler start; advection in skew-symmetric form; incremental
pressure correction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coeff import CoefficientField
from .effective import EffectiveTensor, voigt

CFL_NUMBER = 0.4
CELLS_PER_PERIOD = 8


class FlowError(RuntimeError):
    """Numeric failure of a flow run (blow-up, CFL violation, singular solve)."""


class ResolutionError(ValueError):
    """Oscillatory grid does not resolve the eps^2 scale."""


# ---------------------------------------------------------------------------
# grid


@dataclass
class DomainGrid:
    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0
    dt: float = 1e-2
    T_final: float = 1.0
    u_ref: float = 1.0          # velocity scale for the CFL check at construction

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid needs nx, ny >= 8 (got {self.nx}, {self.ny})")
        if not (self.dt > 0 and self.T_final > 0 and self.Lx > 0 and self.Ly > 0):
            raise ValueError("dt, T_final, Lx, Ly must be positive")
        if self.dt > self.cfl_dt(self.u_ref) * (1 + 1e-12):
            raise ValueError(f"dt={self.dt:g} exceeds the CFL bound {self.cfl_dt(self.u_ref):g} "
                             f"(CFL {CFL_NUMBER}, velocity scale {self.u_ref:g})")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T_final / self.dt)))

    @property
    def step_dt(self) -> float:
        """Time step actually used: T_final split into n_steps equal steps."""
        return self.T_final / self.n_steps

    def cfl_dt(self, u_ref: float) -> float:
        return CFL_NUMBER * min(self.hx, self.hy) / max(u_ref, 1e-300)

    @property
    def nu_faces(self) -> int:
        return (self.nx - 1) * self.ny

    @property
    def nv_faces(self) -> int:
        return self.nx * (self.ny - 1)

    def centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def u_faces(self):
        x = np.arange(1, self.nx) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def v_faces(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(1, self.ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def nodes(self):
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def split(self, U: np.ndarray):
        nu = self.nu_faces
        return U[:nu].reshape(self.nx - 1, self.ny), U[nu:].reshape(self.nx, self.ny - 1)

    def join(self, u, v) -> np.ndarray:
        return np.concatenate([np.ravel(u), np.ravel(v)])


def check_resolution(grid: DomainGrid, epsilon: float, override: bool = False):
    """At least CELLS_PER_PERIOD cells per eps^2 period along both axes."""
    need_x = CELLS_PER_PERIOD * grid.Lx / epsilon**2
    need_y = CELLS_PER_PERIOD * grid.Ly / epsilon**2
    if (grid.nx < need_x - 1e-9 or grid.ny < need_y - 1e-9) and not override:
        raise ResolutionError(
            f"grid {grid.nx}x{grid.ny} violates the resolution rule nx >= 8*Lx/eps^2 "
            f"(needs {math.ceil(need_x - 1e-9)}x{math.ceil(need_y - 1e-9)} at eps={epsilon:g})")


# ---------------------------------------------------------------------------
# state, forcing, models


@dataclass
class FlowState:
    u: np.ndarray            # (nx-1, ny) x-velocity on interior vertical faces
    v: np.ndarray            # (nx, ny-1) y-velocity on interior horizontal faces
    p: np.ndarray            # (nx, ny) pressure, zero mean
    t: float = 0.0

    @classmethod
    def zero(cls, grid: DomainGrid) -> "FlowState":
        return cls(np.zeros((grid.nx - 1, grid.ny)), np.zeros((grid.nx, grid.ny - 1)),
                   np.zeros((grid.nx, grid.ny)), 0.0)

    def velocity(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    def divergence(self, grid: DomainGrid) -> np.ndarray:
        return divergence(grid, self.u, self.v)


def divergence(grid: DomainGrid, u, v) -> np.ndarray:
    up = np.pad(u, ((1, 1), (0, 0)))
    vp = np.pad(v, ((0, 0), (1, 1)))
    return np.diff(up, axis=0) / grid.hx + np.diff(vp, axis=1) / grid.hy


@dataclass
class ForcingField:
    """Body force f(x, y, t) -> (fx, fy), vectorized over arrays."""

    func: Callable
    smooth: bool = True
    name: str = "custom"

    def __call__(self, x, y, t):
        fx, fy = self.func(x, y, t)
        return np.broadcast_to(fx, np.shape(x)), np.broadcast_to(fy, np.shape(x))

    def on_faces(self, grid: DomainGrid, t: float) -> np.ndarray:
        xu, yu = grid.u_faces()
        xv, yv = grid.v_faces()
        fu = self(xu, yu, t)[0]
        fv = self(xv, yv, t)[1]
        out = grid.join(fu, fv).astype(float)
        if not np.all(np.isfinite(out)):
            raise FlowError(f"forcing '{self.name}' is not finite at t={t:g}")
        return out

    @classmethod
    def zero(cls) -> "ForcingField":
        return cls(lambda x, y, t: (0.0, 0.0), True, "zero")


@dataclass
class OscillatoryModel:
    """a^eps(x) = a(x/eps, x/eps^2), acting componentwise."""

    field: CoefficientField
    epsilon: float
    override_resolution: bool = False

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    def coefficients(self, grid: DomainGrid) -> np.ndarray:
        check_resolution(grid, self.epsilon, self.override_resolution)
        xc, yc = grid.centers()
        # cell coordinates live on (-1/2, 1/2)^2; periodicity makes the shift immaterial
        X = np.stack([xc, yc])
        a = np.broadcast_to(self.field(X / self.epsilon, X / self.epsilon**2), (2, 2) + xc.shape)
        return np.einsum("ij...,kh->ijkh...", a, np.eye(2))

    @property
    def alpha(self) -> float:
        return self.field.alpha


@dataclass
class HomogenizedModel:
    """Constant tensor q; the operator (Qz)^k = -sum q_ijkh d_i d_j z^h."""

    tensor: EffectiveTensor | np.ndarray

    @property
    def q(self) -> np.ndarray:
        t = self.tensor
        if isinstance(t, EffectiveTensor):
            return t.symmetrized()
        t = np.asarray(t, dtype=float)
        return 0.5 * (t + t.transpose(1, 0, 3, 2))

    def coefficients(self, grid: DomainGrid) -> np.ndarray:
        return np.broadcast_to(self.q[..., None, None], (2, 2, 2, 2, grid.nx, grid.ny)).copy()

    @property
    def alpha(self) -> float:
        return float(np.linalg.eigvalsh(voigt(self.q)).min())


def isotropic_coefficients(grid: DomainGrid, nu: float = 1.0) -> np.ndarray:
    e = np.eye(2)
    c = nu * np.einsum("ij,kh->ijkh", e, e)
    return np.broadcast_to(c[..., None, None], (2, 2, 2, 2, grid.nx, grid.ny)).copy()


# ---------------------------------------------------------------------------
# sparse operators


def _d1(n, h):
    """Forward difference from n-1 interior points (zero ends) to n cells."""
    return sp.diags([np.ones(n - 1), -np.ones(n - 1)], [0, -1], shape=(n, n - 1)) / h


def _ghost_diff(n, h):
    """Difference from n cell values to n+1 nodes with odd reflection at both ends."""
    D = sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n)).tolil()
    D[0, 0] = 2.0
    D[n, n - 1] = -2.0
    return D.tocsr() / h


def _embed_interior(n):
    """n+1 nodes from n-1 interior values (zero at both ends)."""
    return sp.eye(n + 1, n - 1, k=-1, format="csr")


def _kron(A, B):
    return sp.kron(A, B, format="csr")


@dataclass
class _Operators:
    grid: DomainGrid
    G: dict             # gradient component (j, h) -> (sparse operator, location "c" | "n")
    corners: list       # four centre<-node selection matrices
    D: sp.csr_matrix    # divergence, centres x faces


def build_operators(grid: DomainGrid) -> _Operators:
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    Ix, Iy = sp.identity(nx), sp.identity(ny)
    Zu = sp.csr_matrix((nx * ny, grid.nv_faces))
    Zv = sp.csr_matrix((nx * ny, grid.nu_faces))
    d1u = _kron(_d1(nx, hx), Iy)                        # centres <- u
    d2v = _kron(Ix, _d1(ny, hy))                        # centres <- v
    d2u = _kron(_embed_interior(nx), _ghost_diff(ny, hy))   # nodes <- u
    d1v = _kron(_ghost_diff(nx, hx), _embed_interior(ny))   # nodes <- v
    Nn = (nx + 1) * (ny + 1)
    G = {
        (0, 0): (sp.hstack([d1u, Zu], format="csr"), "c"),
        (1, 1): (sp.hstack([Zv, d2v], format="csr"), "c"),
        (1, 0): (sp.hstack([d2u, sp.csr_matrix((Nn, grid.nv_faces))], format="csr"), "n"),
        (0, 1): (sp.hstack([sp.csr_matrix((Nn, grid.nu_faces)), d1v], format="csr"), "n"),
    }
    corners = []
    for di in (0, 1):
        for dj in (0, 1):
            sx = sp.eye(nx, nx + 1, k=di, format="csr")
            sy = sp.eye(ny, ny + 1, k=dj, format="csr")
            corners.append(_kron(sx, sy))
    D = sp.hstack([d1u, d2v], format="csr")
    return _Operators(grid, G, corners, D)


def assemble_viscous(ops: _Operators, C: np.ndarray) -> sp.csr_matrix:
    """Stiffness matrix K with ``V^T K U = a_h(U, V)`` for coefficients C[i,j,k,h] at centres."""
    g = ops.grid
    w = g.hx * g.hy
    avg = sum(ops.corners) * 0.25
    K = None
    for ik, (Gv, lv) in ops.G.items():
        for jh, (Gu, lu) in ops.G.items():
            c = np.ravel(C[ik[0], jh[0], ik[1], jh[1]])
            if not np.any(c):
                continue
            if lv == "c" and lu == "c":
                term = Gv.T @ sp.diags(w * c) @ Gu
            elif lv == "n" and lu == "n":
                dc = sp.diags(0.25 * w * c)
                term = sum((S @ Gv).T @ dc @ (S @ Gu) for S in ops.corners)
            elif lv == "c":
                term = Gv.T @ sp.diags(w * c) @ (avg @ Gu)
            else:
                term = (avg @ Gv).T @ sp.diags(w * c) @ Gu
            K = term if K is None else K + term
    n = g.nu_faces + g.nv_faces
    return sp.csr_matrix((n, n)) if K is None else K.tocsr()


# ---------------------------------------------------------------------------
# advection in skew-symmetric form


def _central(n, h, ghost_sign):
    """Central difference on n points; neighbours beyond the ends are ghost_sign * edge value."""
    D = sp.diags([np.ones(n - 1), -np.ones(n - 1)], [1, -1], shape=(n, n)).tolil()
    D[0, 0] -= ghost_sign
    D[n - 1, n - 1] += ghost_sign
    return D.tocsr() / (2 * h)


class Advection:
    """N(u) w = (u . grad) w with central differences; b_h is its skew part."""

    def __init__(self, grid: DomainGrid):
        nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
        self.grid = grid
        Ix1, Iy1 = sp.identity(nx - 1), sp.identity(ny - 1)
        Ix, Iy = sp.identity(nx), sp.identity(ny)
        # u-faces: x-neighbours are wall values (0), y-neighbours ghost-reflected
        Dx_u = _kron(_central(nx - 1, hx, 0.0), Iy)
        Dy_u = _kron(Ix1, _central(ny, hy, -1.0))
        Dx_v = _kron(_central(nx, hx, -1.0), Iy1)
        Dy_v = _kron(Ix, _central(ny - 1, hy, 0.0))
        self.Dx = sp.block_diag([Dx_u, Dx_v], format="csr")
        self.Dy = sp.block_diag([Dy_u, Dy_v], format="csr")
        # advecting velocity interpolated to each face set
        # v -> u-faces: average over cells (i, i+1) and v-faces (j-1/2, j+1/2)
        ax = sp.diags([0.5 * np.ones(nx - 1)] * 2, [0, 1], shape=(nx - 1, nx))
        ay = sp.diags([0.5 * np.ones(ny - 1)] * 2, [0, -1], shape=(ny, ny - 1))
        v_to_u = _kron(ax, ay)
        bx = sp.diags([0.5 * np.ones(nx - 1)] * 2, [0, -1], shape=(nx, nx - 1))
        by = sp.diags([0.5 * np.ones(ny - 1)] * 2, [0, 1], shape=(ny - 1, ny))
        u_to_v = _kron(bx, by)
        nu, nv = grid.nu_faces, grid.nv_faces
        self.U1 = sp.bmat([[sp.identity(nu), None], [u_to_v, sp.csr_matrix((nv, nv))]], format="csr")
        self.U2 = sp.bmat([[sp.csr_matrix((nu, nu)), v_to_u], [None, sp.identity(nv)]], format="csr")

    def velocities(self, U):
        return self.U1 @ U, self.U2 @ U

    def apply(self, U, W) -> np.ndarray:
        a1, a2 = self.velocities(U)
        return a1 * (self.Dx @ W) + a2 * (self.Dy @ W)

    def apply_adjoint(self, U, W) -> np.ndarray:
        a1, a2 = self.velocities(U)
        return self.Dx.T @ (a1 * W) + self.Dy.T @ (a2 * W)

    def skew(self, U, W) -> np.ndarray:
        """S(U) W with b_h(U, W, Z) = hx hy Z . S(U) W."""
        return 0.5 * (self.apply(U, W) - self.apply_adjoint(U, W))


def trilinear_b(grid: DomainGrid, u, v, w, adv: Advection | None = None) -> float:
    """b_h(u, v, w) ~ sum_jk int u^j d_j v^k w^k, skew-symmetric in (v, w)."""
    adv = adv or Advection(grid)
    U, V, W = (x.velocity() if isinstance(x, FlowState) else np.asarray(x) for x in (u, v, w))
    return float(grid.hx * grid.hy * (W @ adv.skew(U, V)))


def bilinear_a_eps(grid: DomainGrid, u, v, model) -> float:
    """a_h(u, v) for a viscosity model (oscillatory or homogenized)."""
    U, V = (x.velocity() if isinstance(x, FlowState) else np.asarray(x) for x in (u, v))
    K = assemble_viscous(build_operators(grid), model.coefficients(grid))
    return float(V @ (K @ U))


def gradient_norm_sq(grid: DomainGrid, u) -> float:
    """Discrete ||grad u||^2 (the form with C = delta delta)."""
    U = u.velocity() if isinstance(u, FlowState) else np.asarray(u)
    K = assemble_viscous(build_operators(grid), isotropic_coefficients(grid))
    return float(U @ (K @ U))


def discrete_curl(grid: DomainGrid, psi_nodes: np.ndarray):
    """Velocity (d_y psi, -d_x psi) on faces from nodal psi; exactly divergence-free."""
    u = np.diff(psi_nodes[1:-1, :], axis=1) / grid.hy
    v = -np.diff(psi_nodes[:, 1:-1], axis=0) / grid.hx
    return u, v


# ---------------------------------------------------------------------------
# time integration


@dataclass
class LedgerRow:
    step: int
    time: float
    kinetic_energy: float
    dissipation: float
    power: float

    @property
    def values(self):
        return (self.step, self.time, self.kinetic_energy, self.dissipation, self.power)


@dataclass
class EnergyLedger:
    """Per-step kinetic energy, dissipation and forcing work.

    ``dissipation`` and ``power`` are integrated over the step (midpoint in
    time), so ``residual = dKE + dissipation - power`` per step.
    """

    rows: list = field(default_factory=list)

    def arrays(self):
        a = np.array([r.values for r in self.rows], dtype=float).reshape(-1, 5)
        return {k: a[:, n] for n, k in enumerate(("step", "time", "ke", "dissipation", "power"))}

    def residuals(self) -> np.ndarray:
        a = self.arrays()
        if len(a["ke"]) < 2:
            return np.zeros(0)
        return np.diff(a["ke"]) + a["dissipation"][1:] - a["power"][1:]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "time", "KE", "dissipation", "power"])
        for r in self.rows:
            w.writerow([r.step] + ["%.17g" % x for x in r.values[1:]])
        return buf.getvalue()


@dataclass
class RunResult:
    grid: DomainGrid
    snapshots: list
    ledger: EnergyLedger
    dt: float
    steps: int
    max_divergence: float
    field_key: str = ""          # coefficient provenance of the model, when known


SCHEMES = ("bdf2", "cn")


@dataclass
class History:
    """Previous time level needed by the two-step schemes."""

    U: np.ndarray
    N: np.ndarray


class Stepper:
    """Factorized operators for one (model, grid, dt, scheme) combination.

    ``scheme="bdf2"``: second-order backward differences for the viscous term
    with extrapolated advection 2 N^n - N^{n-1}; stiff modes are damped.
    ``scheme="cn"``: Crank-Nicolson viscosity with Adams-Bashforth advection.
    Both start with one semi-implicit Euler step (split in two half steps for
    ``cn`` so that the Crank-Nicolson matrix is reused).
    """

    def __init__(self, model, grid: DomainGrid, dt: float | None = None, coefficients=None,
                 scheme: str = "bdf2"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown time scheme {scheme!r}; choose from {SCHEMES}")
        self.grid = grid
        self.scheme = scheme
        self.dt = dt if dt is not None else grid.step_dt
        self.ops = build_operators(grid)
        C = coefficients if coefficients is not None else model.coefficients(grid)
        self.K = assemble_viscous(self.ops, C)
        self.w = grid.hx * grid.hy
        n = self.K.shape[0]
        I = sp.identity(n, format="csc") * self.w
        K = self.K.tocsc()
        # minimum-degree ordering on A + A^T suits these symmetric stencils
        def lu(A):
            return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
        if scheme == "cn":
            self._main = lu(I / self.dt + 0.5 * K)
            self._start = None
        else:
            self._main = lu(1.5 * I / self.dt + K)
            self._start = lu(I / self.dt + K)
        D = self.ops.D
        self._poisson = lu((D @ D.T).tocsc()[1:, 1:])
        self.adv = Advection(grid)

    def advection(self, U) -> np.ndarray:
        return self.adv.skew(U, U)

    def pressure_gradient(self, p) -> np.ndarray:
        return -(self.ops.D.T @ np.ravel(p))

    def project(self, U, tau):
        D = self.ops.D
        rhs = -(D @ U) / tau
        phi = np.zeros(D.shape[0])
        phi[1:] = self._poisson.solve(rhs[1:])
        return U + tau * (D.T @ phi), phi

    def _finish(self, state, Ut, tau, dt):
        g = self.grid
        Un, phi = self.project(Ut, tau)
        p = state.p.ravel() + phi
        p = (p - p.mean()).reshape(g.nx, g.ny)
        if not np.all(np.isfinite(Un)):
            raise FlowError(f"non-finite velocity at t={state.t + dt:g}: the run is unstable")
        u, v = g.split(Un)
        return FlowState(u.copy(), v.copy(), p, state.t + dt)

    def _euler(self, state, f, half: bool):
        g, dt, w = self.grid, self.dt, self.w
        U = state.velocity()
        frac = 0.5 if half else 1.0
        tau = frac * dt
        rhs_f = f.on_faces(g, state.t + tau) - self.advection(U) - self.pressure_gradient(state.p)
        if half:
            # (w/dt + K/2) u~ = w U/dt + (w/2) rhs_f  is backward Euler over dt/2
            Ut = self._main.solve(w * U / dt + 0.5 * w * rhs_f)
        else:
            Ut = self._start.solve(w * U / dt + w * rhs_f)
        return self._finish(state, Ut, tau, tau)

    def step(self, state: FlowState, f: ForcingField, hist: History | None = None):
        """Advance one step; returns (new state, history for the next step)."""
        g, dt, w = self.grid, self.dt, self.w
        U = state.velocity()
        N = self.advection(U)
        if hist is None:
            if self.scheme == "cn":
                new = self._euler(self._euler(state, f, True), f, True)
            else:
                new = self._euler(state, f, False)
            return new, History(U, N)
        gp = self.pressure_gradient(state.p)
        if self.scheme == "cn":
            Nx = 1.5 * N - 0.5 * hist.N
            fh = f.on_faces(g, state.t + 0.5 * dt)
            rhs = w * (U / dt - Nx + fh - gp) - 0.5 * (self.K @ U)
            new = self._finish(state, self._main.solve(rhs), dt, dt)
        else:
            Nx = 2.0 * N - hist.N
            fh = f.on_faces(g, state.t + dt)
            rhs = w * ((2.0 * U - 0.5 * hist.U) / dt - Nx + fh - gp)
            new = self._finish(state, self._main.solve(rhs), 2.0 * dt / 3.0, dt)
        return new, History(U, N)

    def energy(self, U) -> float:
        return 0.5 * self.w * float(U @ U)


def step(state: FlowState, model, f: ForcingField, grid: DomainGrid, stepper: Stepper | None = None,
         hist: History | None = None) -> FlowState:
    """One time step (builds a Stepper when none is supplied)."""
    stepper = stepper or Stepper(model, grid)
    return stepper.step(state, f, hist)[0]


def model_key(model) -> str:
    """Coefficient-field key behind a viscosity model ('' when unknown)."""
    if isinstance(model, OscillatoryModel):
        return model.field.key
    t = getattr(model, "tensor", None)
    return getattr(t, "field_key", "") or ""


def run(model, f: ForcingField, grid: DomainGrid, output_every: int | None = None,
        output_times=None, stepper: Stepper | None = None, cfl_limit: float = 1.0,
        scheme: str = "bdf2") -> RunResult:
    """Integrate from rest to T_final.

    Snapshots are stored every ``output_every`` steps (default: only the final
    state) or at the steps nearest to ``output_times``; the initial state is
    always included.
    """
    st = stepper or Stepper(model, grid, scheme=scheme)
    dt, n = st.dt, max(1, int(round(grid.T_final / st.dt)))
    if output_times is not None:
        keep = {int(round(t / dt)) for t in output_times}
    elif output_every:
        keep = set(range(0, n + 1, output_every)) | {n}
    else:
        keep = {n}
    keep.add(0)
    state = FlowState.zero(grid)
    snaps = [state]
    ledger = EnergyLedger([LedgerRow(0, 0.0, 0.0, 0.0, 0.0)])
    hist = None
    maxdiv = 0.0
    hmin = min(grid.hx, grid.hy)
    for s in range(1, n + 1):
        U0 = state.velocity()
        new, hist = st.step(state, f, hist)
        U1 = new.velocity()
        Um = 0.5 * (U0 + U1)
        fh = f.on_faces(grid, state.t + 0.5 * dt)
        diss = dt * float(Um @ (st.K @ Um))
        power = dt * st.w * float(fh @ Um)
        ledger.rows.append(LedgerRow(s, new.t, st.energy(U1), diss, power))
        umax = float(np.abs(U1).max()) if U1.size else 0.0
        if umax * dt / hmin > cfl_limit:
            raise FlowError(f"CFL number {umax * dt / hmin:.3g} exceeds {cfl_limit} at step {s}; "
                            "reduce dt")
        maxdiv = max(maxdiv, float(np.abs(new.divergence(grid)).max()))
        state = new
        if s in keep:
            snaps.append(state)
    return RunResult(grid, snaps, ledger, dt, n, maxdiv, model_key(model))


def snapshot_csv(grid: DomainGrid, state: FlowState) -> str:
    """Face and centre values with a grid header."""
    buf = io.StringIO()
    buf.write(f"# nx={grid.nx} ny={grid.ny} Lx={grid.Lx!r} Ly={grid.Ly!r} t={state.t!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["field", "i", "j", "x", "y", "value"])
    for name, arr, (X, Y) in (("u", state.u, grid.u_faces()), ("v", state.v, grid.v_faces()),
                              ("p", state.p, grid.centers())):
        for (i, j), val in np.ndenumerate(arr):
            w.writerow([name, i, j, "%.17g" % X[i, j], "%.17g" % Y[i, j], "%.17g" % val])
    return buf.getvalue()
