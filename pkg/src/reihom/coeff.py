"""Two-scale periodic viscosity coefficients a(y, z).

A coefficient field is a pure evaluator ``(y, z) -> a`` where ``y`` and ``z``
are arrays of shape ``(2, ...)`` holding points of R^2 and the result has shape
``(2, 2, ...)``.  Both variables are 1-periodic in each component; the
reference cells are Y = Z = (-1/2, 1/2)^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi

#: Largest ``n_y**2 * n_z**2`` accepted by :func:`sample`.
MAX_SAMPLE_NODES = 2**22

#: Relative tolerance for symmetry/periodicity defects in :func:`validate`.
VALIDATION_TOL = 1e-10

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


class CoefficientError(ValueError):
    """Raised for parameter sets that do not give a uniformly coercive field."""


@dataclass(frozen=True)
class SymMatrix2:
    a11: float
    a12: float
    a22: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.as_array())


@dataclass(frozen=True)
class CoefficientField:
    """Viscosity matrix field on Y x Z with declared bounds.

    ``alpha`` is a coercivity constant (a lower bound for the smallest
    eigenvalue over both cells) and ``sup_bound`` bounds every ``|a_ij|``.
    """

    evaluator: Evaluator = field(repr=False, compare=False)
    alpha: float
    sup_bound: float
    family_tag: str
    params: tuple = ()

    def __call__(self, y, z) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        return np.asarray(self.evaluator(y, z), dtype=float)

    def at(self, y, z) -> SymMatrix2:
        a = self(np.reshape(y, (2,)), np.reshape(z, (2,)))
        return SymMatrix2(float(a[0, 0]), float(a[0, 1]), float(a[1, 1]))

    def scaled(self, c: float) -> "CoefficientField":
        """Return the field ``c * a``."""
        if c <= 0:
            raise CoefficientError("scale factor must be positive")
        ev = self.evaluator
        return CoefficientField(
            lambda y, z: c * np.asarray(ev(y, z)),
            alpha=c * self.alpha,
            sup_bound=c * self.sup_bound,
            family_tag=self.family_tag,
            params=self.params + (("scale", c),),
        )

    @property
    def key(self) -> str:
        """Stable identifier used for caching and provenance checks."""
        return f"{self.family_tag}{self.params!r}"


def _iso(c: np.ndarray) -> np.ndarray:
    zero = np.zeros_like(c)
    return np.array([[c, zero], [zero, c]])


def _constant(params: dict) -> CoefficientField:
    if "matrix" in params:
        m = np.asarray(params["matrix"], dtype=float).reshape(2, 2)
    else:
        nu = float(params.get("nu", 1.0))
        m = nu * np.eye(2)
    if m[0, 1] != m[1, 0]:
        raise CoefficientError("constant matrix must be symmetric")
    lam = np.linalg.eigvalsh(m)
    if lam[0] <= 0:
        raise CoefficientError(f"constant matrix is not positive definite (min eig {lam[0]})")

    def ev(y, z):
        shape = np.broadcast_shapes(y.shape[1:], z.shape[1:])
        return np.broadcast_to(m.reshape(2, 2, *([1] * len(shape))), (2, 2) + shape).copy()

    return CoefficientField(ev, float(lam[0]), float(np.abs(m).max()), "constant",
                            (("a11", m[0, 0]), ("a12", m[0, 1]), ("a22", m[1, 1])))


def _single_scale(params: dict, on: str) -> CoefficientField:
    mean = float(params.get("mean", 2.0))
    amp = float(params.get("amp", 1.0))
    if mean - abs(amp) <= 0:
        raise CoefficientError(f"{on}-only field needs mean > |amp| (got {mean}, {amp})")

    def ev(y, z):
        v = y if on == "y" else z
        c = mean + amp * np.cos(TWO_PI * v[0]) * np.cos(TWO_PI * v[1])
        other = z if on == "y" else y
        c = np.broadcast_to(c, np.broadcast_shapes(c.shape, other.shape[1:]))
        return _iso(c)

    return CoefficientField(ev, mean - abs(amp), mean + abs(amp), f"{on}_only",
                            (("mean", mean), ("amp", amp)))


def _separable(params: dict) -> CoefficientField:
    # c1(y) = b1 + s1 sin(2 pi y1), c2(z) = b2 + s2 cos(2 pi z1)
    b1 = float(params.get("b1", 2.0))
    s1 = float(params.get("s1", 1.0))
    b2 = float(params.get("b2", 2.0))
    s2 = float(params.get("s2", 1.0))
    if b1 - abs(s1) <= 0 or b2 - abs(s2) <= 0:
        raise CoefficientError("separable field needs b1 > |s1| and b2 > |s2|")

    def ev(y, z):
        c = (b1 + s1 * np.sin(TWO_PI * y[0])) * (b2 + s2 * np.cos(TWO_PI * z[0]))
        return _iso(c)

    return CoefficientField(ev, (b1 - abs(s1)) * (b2 - abs(s2)),
                            (b1 + abs(s1)) * (b2 + abs(s2)), "separable",
                            (("b1", b1), ("s1", s1), ("b2", b2), ("s2", s2)))


def _layered(params: dict) -> CoefficientField:
    b1 = float(params.get("b1", 2.0))
    s1 = float(params.get("s1", 1.0))
    b2 = float(params.get("b2", 2.0))
    s2 = float(params.get("s2", 1.0))
    if b1 - abs(s1) <= 0 or b2 - abs(s2) <= 0:
        raise CoefficientError("layered field needs b1 > |s1| and b2 > |s2|")

    def ev(y, z):
        c = (b1 + s1 * np.cos(TWO_PI * y[0])) * (b2 + s2 * np.cos(TWO_PI * z[0]))
        return _iso(c)

    return CoefficientField(ev, (b1 - abs(s1)) * (b2 - abs(s2)),
                            (b1 + abs(s1)) * (b2 + abs(s2)), "layered",
                            (("b1", b1), ("s1", s1), ("b2", b2), ("s2", s2)))


def _anisotropic(params: dict) -> CoefficientField:
    # a11 = b + s cos(2 pi y1), a22 = b + s cos(2 pi z2),
    # a12 = r sin(2 pi y2) sin(2 pi z1); the four phases vary independently,
    # so the smallest eigenvalue over Y x Z is b - |s| - |r|.
    b = float(params.get("b", 3.0))
    s = float(params.get("s", 1.0))
    r = float(params.get("r", 0.5))
    if b - abs(s) - abs(r) <= 0:
        raise CoefficientError("anisotropic field needs b > |s| + |r|")

    def ev(y, z):
        a11 = b + s * np.cos(TWO_PI * y[0]) + 0.0 * z[0]
        a22 = b + s * np.cos(TWO_PI * z[1]) + 0.0 * y[0]
        a12 = r * np.sin(TWO_PI * y[1]) * np.sin(TWO_PI * z[0])
        return np.array([[a11, a12], [a12, a22]])

    return CoefficientField(ev, b - abs(s) - abs(r), max(b + abs(s), abs(r)),
                            "anisotropic", (("b", b), ("s", s), ("r", r)))


_FAMILIES = {
    "constant": _constant,
    "y_only": lambda p: _single_scale(p, "y"),
    "z_only": lambda p: _single_scale(p, "z"),
    "separable": _separable,
    "layered": _layered,
    "anisotropic": _anisotropic,
}

BUILTIN_FAMILIES = tuple(_FAMILIES)


def make_builtin(family_tag: str, params: dict | None = None) -> CoefficientField:
    """Build one of the analytic coefficient families.

    Families and parameters (defaults in brackets):

    ``constant``      nu [1] or matrix [[a11, a12], [a12, a22]]
    ``y_only``        (mean [2] + amp [1] cos 2pi y1 cos 2pi y2) I
    ``z_only``        same profile in z
    ``separable``     (b1 + s1 sin 2pi y1)(b2 + s2 cos 2pi z1) I, all [2, 1, 2, 1]
    ``layered``       (b1 + s1 cos 2pi y1)(b2 + s2 cos 2pi z1) I
    ``anisotropic``   full matrix with a12 = r sin 2pi y2 sin 2pi z1, b [3], s [1], r [0.5]
    """
    try:
        factory = _FAMILIES[family_tag]
    except KeyError:
        raise CoefficientError(
            f"unknown coefficient family {family_tag!r}; choose from {BUILTIN_FAMILIES}"
        ) from None
    return factory(dict(params or {}))


def custom(evaluator: Evaluator, alpha: float, sup_bound: float, tag: str = "custom") -> CoefficientField:
    """Wrap a user evaluator; run :func:`validate` before trusting it."""
    if alpha <= 0:
        raise CoefficientError("alpha must be positive")
    return CoefficientField(evaluator, float(alpha), float(sup_bound), tag)


@dataclass
class ValidationReport:
    symmetry_defect: float
    min_rayleigh: float
    max_abs_entry: float
    periodicity_defect: float
    alpha: float
    sup_bound: float
    n_check: int
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def cell_nodes(n: int) -> np.ndarray:
    """Uniform nodes -1/2 + p/n, p = 0..n-1."""
    return -0.5 + np.arange(n) / n


def _product_points(n_check: int):
    t = cell_nodes(n_check)
    y1, y2, z1, z2 = np.meshgrid(t, t, t, t, indexing="ij")
    return np.array([y1, y2]), np.array([z1, z2])


def validate(fld: CoefficientField, n_check: int = 8, n_xi: int = 64,
             seed: int = 0, tol: float = VALIDATION_TOL) -> ValidationReport:
    """Check symmetry, coercivity, boundedness and periodicity on a sample grid."""
    if n_check < 4:
        raise ValueError("n_check must be at least 4")
    y, z = _product_points(n_check)
    a = fld(y, z)
    scale = max(fld.sup_bound, 1.0)
    sym = float(np.abs(a[0, 1] - a[1, 0]).max())

    s = 0.5 * (a + np.swapaxes(a, 0, 1))
    # smallest eigenvalue of each 2x2 symmetric block, in closed form
    half_tr = 0.5 * (s[0, 0] + s[1, 1])
    rad = np.sqrt((0.5 * (s[0, 0] - s[1, 1])) ** 2 + s[0, 1] ** 2)
    lam_min = half_tr - rad
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * np.pi, n_xi)
    xi = np.array([np.cos(theta), np.sin(theta)])
    flat = s.reshape(2, 2, -1)
    rq = np.einsum("im,ijp,jm->pm", xi, flat, xi)
    min_rq = float(min(rq.min(), lam_min.min()))

    per = 0.0
    for shift in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        sh = shift.reshape(2, 1, 1, 1, 1)
        per = max(per, float(np.abs(fld(y + sh, z) - a).max()))
        per = max(per, float(np.abs(fld(y, z + sh) - a).max()))

    max_abs = float(np.abs(a).max())
    passed = (
        sym <= tol * scale
        and per <= tol * scale
        and min_rq >= fld.alpha - tol * scale
        and max_abs <= fld.sup_bound + tol * scale
    )
    return ValidationReport(sym, min_rq, max_abs, per, fld.alpha, fld.sup_bound, n_check, bool(passed))


@dataclass(frozen=True, eq=False)
class CellSampling:
    """Tensor-product samples of a coefficient field on Y x Z.

    ``a`` has shape ``(2, 2, n_y, n_y, n_z, n_z)`` with axes
    ``(i, j, y1, y2, z1, z2)``.
    """

    fld: CoefficientField
    n_y: int
    n_z: int
    a: np.ndarray = field(repr=False)

    @property
    def alpha(self) -> float:
        return self.fld.alpha

    def mean(self) -> np.ndarray:
        """Cell average of a over Y x Z (trapezoidal rule)."""
        return self.a.mean(axis=(2, 3, 4, 5))

    def mean_viscosity(self) -> float:
        m = self.mean()
        return 0.5 * float(m[0, 0] + m[1, 1])


def _check_size(n: int, name: str):
    if n < 4 or n % 2:
        raise ValueError(f"{name} must be an even integer >= 4 (got {n})")


def sample(fld: CoefficientField, n_y: int, n_z: int, max_nodes: int = MAX_SAMPLE_NODES) -> CellSampling:
    """Evaluate the field on the uniform ``n_y^2 x n_z^2`` node set."""
    _check_size(n_y, "n_y")
    _check_size(n_z, "n_z")
    return _sample_raw(fld, n_y, n_z, max_nodes)


def _sample_raw(fld: CoefficientField, n_y: int, n_z: int, max_nodes: int = MAX_SAMPLE_NODES) -> CellSampling:
    if n_y**2 * n_z**2 > max_nodes:
        raise MemoryError(
            f"sampling {n_y}^2 x {n_z}^2 nodes exceeds the cap of {max_nodes} nodes"
        )
    ty = cell_nodes(n_y)
    tz = cell_nodes(n_z)
    y1, y2, z1, z2 = np.meshgrid(ty, ty, tz, tz, indexing="ij", sparse=True)
    y = np.array(np.broadcast_arrays(y1, y2))
    z = np.array(np.broadcast_arrays(z1, z2))
    a = fld(y, z)
    a = np.ascontiguousarray(np.broadcast_to(a, (2, 2, n_y, n_y, n_z, n_z)))
    a.setflags(write=False)
    return CellSampling(fld, n_y, n_z, a)
