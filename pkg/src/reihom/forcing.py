"""Catalog of body forces for scenario files.

Every catalog entry is divergence free and vanishes on the boundary of the
rectangle, so f(0) lies in the space of solenoidal fields with zero normal
trace and no pressure-driven boundary layer is generated at start-up.  The
time factors are smooth, so f and df/dt are square integrable.
"""

from __future__ import annotations

import numpy as np

from .flow import ForcingField

CATALOG = ("zero", "bump_curl")

_DEFAULTS = {
    "zero": {},
    "bump_curl": {"amplitude": 40.0, "modulation": 0.5, "frequency": 2.0},
}


def forcing_defaults(name: str) -> dict:
    if name not in _DEFAULTS:
        raise KeyError(f"unknown forcing '{name}'; known: {', '.join(CATALOG)}")
    return dict(_DEFAULTS[name])


def bump_curl(Lx: float = 1.0, Ly: float = 1.0, amplitude: float = 40.0,
              modulation: float = 0.5, frequency: float = 2.0) -> ForcingField:
    """f = A (1 + m sin(2 pi w t)) curl psi with psi = (16 X(1-X) Y(1-Y))^2 / 16.

    ``X = x/Lx`` and ``Y = y/Ly``.  psi and its first derivatives vanish on
    the boundary, hence so does f.
    """

    def func(x, y, t):
        X, Y = x / Lx, y / Ly
        bx, by = X * (1 - X), Y * (1 - Y)
        dpsi_dx = 32 * bx * (1 - 2 * X) * by ** 2 / Lx
        dpsi_dy = 32 * by * (1 - 2 * Y) * bx ** 2 / Ly
        s = amplitude * (1 + modulation * np.sin(2 * np.pi * frequency * t))
        return s * dpsi_dy, -s * dpsi_dx

    return ForcingField(func, True, "bump_curl")


def make_forcing(name: str, Lx: float = 1.0, Ly: float = 1.0, **params) -> ForcingField:
    """Catalog lookup; unknown parameters raise ``TypeError``."""
    p = forcing_defaults(name)
    extra = set(params) - set(p)
    if extra:
        raise TypeError(f"forcing '{name}' has no parameter(s) {sorted(extra)}")
    p.update(params)
    if name == "zero":
        return ForcingField.zero()
    return bump_curl(Lx, Ly, **p)
