"""Scenario files: INI sections parsed strictly into a :class:`Scenario`.

Grammar (``configparser`` syntax, ``;`` or ``#`` comments).  Every key is
optional; the defaults are listed below.  Unknown sections or keys are
errors.

``[coefficient]``
    ``family``  built-in family tag [separable]; remaining keys are the family
    parameters (see :data:`FAMILY_PARAMS`).
``[cells]``
    ``n_y`` [16], ``n_z`` [16], ``tol`` [1e-10].
``[domain]``
    ``Lx`` [1], ``Ly`` [1], ``nx`` [128], ``ny`` [128], ``dt`` [1/800],
    ``T_final`` [0.25], ``u_ref`` [0.4], ``output_every`` [10],
    ``scheme`` [bdf2].
``[forcing]``
    ``name`` [bump_curl]; remaining keys are catalog parameters.
``[sweep]``
    ``epsilons`` [1/2, 1/3, 1/4], ``override_resolution`` [false].
``[sigma]``
    ``epsilons`` [1/4, 1/16, 1/64].
``[run]``
    ``stages`` [validate, cells, tensor, flow, sweep, sigma], ``seed`` [0],
    ``out`` [out].

Numbers accept fractions such as ``1/3``.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from pathlib import Path

from .coeff import BUILTIN_FAMILIES, make_builtin
from .flow import CELLS_PER_PERIOD, SCHEMES, DomainGrid
from .forcing import CATALOG, forcing_defaults

STAGES = ("validate", "cells", "tensor", "flow", "sweep", "sigma")

#: Stages each stage needs, in dependency order.
STAGE_DEPS = {
    "validate": (),
    "cells": (),
    "tensor": ("cells",),
    "flow": ("tensor",),
    "sweep": ("cells", "tensor", "flow"),
    "sigma": (),
}

FAMILY_PARAMS = {
    "constant": ("nu", "a11", "a12", "a22"),
    "y_only": ("mean", "amp"),
    "z_only": ("mean", "amp"),
    "separable": ("b1", "s1", "b2", "s2"),
    "layered": ("b1", "s1", "b2", "s2"),
    "anisotropic": ("b", "s", "r"),
}


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario."""


def _num(text: str, key: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ScenarioError(f"{key}: not a number: {text!r}") from None


def _int(text: str, key: str) -> int:
    v = _num(text, key)
    if v != int(v):
        raise ScenarioError(f"{key}: expected an integer, got {text!r}")
    return int(v)


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ScenarioError(f"{key}: expected a boolean, got {text!r}")


def _list(text: str) -> list[str]:
    return [s.strip() for s in text.replace("\n", ",").split(",") if s.strip()]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Scenario:
    family: str = "separable"
    family_params: tuple = ()
    n_y: int = 16
    n_z: int = 16
    tol: float = 1e-10
    Lx: float = 1.0
    Ly: float = 1.0
    nx: int = 128
    ny: int = 128
    dt: float = 1.0 / 800
    T_final: float = 0.25
    u_ref: float = 0.4
    output_every: int = 10
    scheme: str = "bdf2"
    forcing: str = "bump_curl"
    forcing_params: tuple = ()
    epsilons: tuple = (0.5, 1.0 / 3, 0.25)
    override_resolution: bool = False
    sigma_epsilons: tuple = (0.25, 0.0625, 0.015625)
    stages: tuple = STAGES
    seed: int = 0
    out: str = "out"

    def coefficient_field(self):
        return make_builtin(self.family, self._family_dict())

    def _family_dict(self) -> dict:
        p = dict(self.family_params)
        if self.family == "constant" and {"a11", "a12", "a22"} & set(p):
            nu = p.pop("nu", 1.0)
            m = [[p.pop("a11", nu), p.pop("a12", 0.0)], [0.0, p.pop("a22", nu)]]
            m[1][0] = m[0][1]
            p["matrix"] = m
        return p

    def forcing_dict(self) -> dict:
        return dict(self.forcing_params)

    def hash(self) -> str:
        """Digest of the canonical serialization, excluding the output directory."""
        return hashlib.sha256(serialize(replace(self, out="")).encode()).hexdigest()

    def check(self) -> "Scenario":
        """Cross-field consistency; returns self or raises ScenarioError."""
        if self.family not in BUILTIN_FAMILIES:
            raise ScenarioError(f"unknown coefficient family {self.family!r}; choose from {BUILTIN_FAMILIES}")
        bad = set(dict(self.family_params)) - set(FAMILY_PARAMS[self.family])
        if bad:
            raise ScenarioError(f"family {self.family!r} has no parameter(s) {sorted(bad)}")
        if self.forcing not in CATALOG:
            raise ScenarioError(f"unknown forcing {self.forcing!r}; choose from {CATALOG}")
        bad = set(dict(self.forcing_params)) - set(forcing_defaults(self.forcing))
        if bad:
            raise ScenarioError(f"forcing {self.forcing!r} has no parameter(s) {sorted(bad)}")
        for name in ("tol", "Lx", "Ly", "dt", "T_final", "u_ref"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive")
        for name in ("n_y", "n_z"):
            n = getattr(self, name)
            if n < 4 or n % 2:
                raise ScenarioError(f"{name} must be an even integer >= 4")
        if min(self.nx, self.ny) < 8:
            raise ScenarioError("nx and ny must be at least 8")
        if self.output_every < 1:
            raise ScenarioError("output_every must be >= 1")
        if self.scheme not in SCHEMES:
            raise ScenarioError(f"scheme must be one of {SCHEMES}")
        for name in ("epsilons", "sigma_epsilons"):
            eps = getattr(self, name)
            if not eps or not all(0 < e < 1 for e in eps):
                raise ScenarioError(f"{name} must be a non-empty list of values in (0, 1)")
            if len(set(eps)) != len(eps):
                raise ScenarioError(f"{name} has repeated values")
        bad = set(self.stages) - set(STAGES)
        if bad or not self.stages:
            raise ScenarioError(f"stages must be a non-empty subset of {STAGES}")
        if "sweep" in self.stages and not self.override_resolution:
            e = min(self.epsilons)
            need_x = CELLS_PER_PERIOD * self.Lx / e**2
            need_y = CELLS_PER_PERIOD * self.Ly / e**2
            if self.nx < need_x - 1e-9 or self.ny < need_y - 1e-9:
                raise ScenarioError(
                    f"DNS resolution rule nx >= 8*Lx/eps^2 violated at eps={e:g}: "
                    f"need {need_x:.0f}x{need_y:.0f}, have {self.nx}x{self.ny}")
        try:
            self.coefficient_field()
        except ValueError as exc:
            raise ScenarioError(f"coefficient: {exc}") from None
        try:
            self.grid()
        except ValueError as exc:
            raise ScenarioError(f"domain: {exc}") from None
        return self

    def grid(self) -> DomainGrid:
        return DomainGrid(self.nx, self.ny, self.Lx, self.Ly, self.dt, self.T_final, self.u_ref)


_SECTIONS = {
    "coefficient": {"family"},
    "cells": {"n_y", "n_z", "tol"},
    "domain": {"Lx", "Ly", "nx", "ny", "dt", "T_final", "u_ref", "output_every", "scheme"},
    "forcing": {"name"},
    "sweep": {"epsilons", "override_resolution"},
    "sigma": {"epsilons"},
    "run": {"stages", "seed", "out"},
}

_INTS = {"n_y", "n_z", "nx", "ny", "output_every", "seed"}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str    # keys are case sensitive (Lx, T_final)
    return cp


def parse_scenario_text(text: str, source: str = "<scenario>") -> Scenario:
    cp = _parser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    unknown = set(cp.sections()) - set(_SECTIONS)
    if unknown:
        raise ScenarioError(f"{source}: unknown section(s) {sorted(unknown)}")
    kw: dict = {}
    base = Scenario()
    sec = cp["coefficient"] if cp.has_section("coefficient") else {}
    family = sec.get("family", base.family).strip()
    if family not in FAMILY_PARAMS:
        raise ScenarioError(f"{source}: unknown coefficient family {family!r}")
    kw["family"] = family
    kw["family_params"] = tuple((k, _num(v, f"coefficient.{k}")) for k, v in sec.items() if k != "family")
    bad = {k for k, _ in kw["family_params"]} - set(FAMILY_PARAMS[family])
    if bad:
        raise ScenarioError(f"{source}: unknown key(s) in [coefficient] for family {family!r}: {sorted(bad)}")

    sec = cp["forcing"] if cp.has_section("forcing") else {}
    name = sec.get("name", base.forcing).strip()
    if name not in CATALOG:
        raise ScenarioError(f"{source}: unknown forcing {name!r}; choose from {CATALOG}")
    allowed = forcing_defaults(name)
    fp = []
    for k, v in sec.items():
        if k == "name":
            continue
        if k not in allowed:
            raise ScenarioError(f"{source}: unknown key [forcing] {k!r} for {name!r}")
        fp.append((k, _num(v, f"forcing.{k}")))
    kw["forcing"], kw["forcing_params"] = name, tuple(fp)

    for sname in ("cells", "domain", "sweep", "sigma", "run"):
        if not cp.has_section(sname):
            continue
        for k, v in cp[sname].items():
            if k not in _SECTIONS[sname]:
                raise ScenarioError(f"{source}: unknown key [{sname}] {k!r}")
            key = f"{sname}.{k}"
            if sname == "sweep" and k == "epsilons":
                kw["epsilons"] = tuple(_num(x, key) for x in _list(v))
            elif sname == "sigma":
                kw["sigma_epsilons"] = tuple(_num(x, key) for x in _list(v))
            elif k == "override_resolution":
                kw[k] = _bool(v, key)
            elif k == "stages":
                kw[k] = tuple(_list(v))
            elif k in ("scheme", "out"):
                kw[k] = v.strip()
            elif k in _INTS:
                kw[k] = _int(v, key)
            else:
                kw[k] = _num(v, key)
    return Scenario(**kw).check()


def parse_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario_text(text, str(p))


def serialize(s: Scenario) -> str:
    """Canonical INI text; ``parse_scenario_text(serialize(s)) == s``."""
    cp = _parser()
    cp["coefficient"] = {"family": s.family, **{k: _fmt(v) for k, v in s.family_params}}
    cp["cells"] = {"n_y": _fmt(s.n_y), "n_z": _fmt(s.n_z), "tol": _fmt(s.tol)}
    cp["domain"] = {k: _fmt(getattr(s, k)) for k in
                    ("Lx", "Ly", "nx", "ny", "dt", "T_final", "u_ref", "output_every", "scheme")}
    cp["forcing"] = {"name": s.forcing, **{k: _fmt(v) for k, v in s.forcing_params}}
    cp["sweep"] = {"epsilons": _fmt(s.epsilons), "override_resolution": _fmt(s.override_resolution)}
    cp["sigma"] = {"epsilons": _fmt(s.sigma_epsilons)}
    cp["run"] = {"stages": _fmt(s.stages), "seed": _fmt(s.seed), "out": s.out}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def as_dict(s: Scenario) -> dict:
    return asdict(s)
