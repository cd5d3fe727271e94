"""Stage orchestration, persistence and plot-data emission.

Stages run in the fixed order ``validate, cells, tensor, flow, sweep, sigma``;
requesting a stage pulls in its prerequisites.  Every CSV is written to a
temporary file in the target directory and renamed into place.  The manifest
is written the same way at the end of the run, also when a stage fails.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cells import INDEX_PAIRS, cache_key, load_cell_solution, save_cell_solution, solve_cells
from .coeff import sample, validate
from .corrector import corrector_sweep
from .effective import assemble_q, assemble_q_energy_form, check_tensor, read_tensor_csv, tensor_csv
from .flow import HomogenizedModel, run, snapshot_csv
from .forcing import make_forcing
from .scenario import STAGE_DEPS, STAGES, Scenario
from .sigma import (AxisFactor, SeparableProfile, SpaceTimeBox, TestFunction, cos_mode,
                    mean_convergence_check, norm_convergence_check, pairing_sweep,
                    records_csv, strictly_decreasing)

log = logging.getLogger("reihom")

TWO_FORMULA_RTOL = 1e-7
SIGMA_GAP_TOL = 1e-3
DIVERGENCE_TOL = 1e-8

PLOT_SCHEMAS = {
    "plot_decay.csv": ["epsilon", "E_grad", "E_L2"],
    "plot_tensor.csv": ["n_y", "n_z", "i", "j", "k", "h", "value"],
    "plot_sigma.csv": ["diagnostic", "epsilon", "gap"],
}


def atomic_write(path, data) -> Path:
    """Write ``data`` (str or bytes) to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _kv_csv(d: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in d.items():
        w.writerow([k, "%.17g" % v if isinstance(v, float) else v])
    return buf.getvalue()


def stage_closure(stages) -> tuple:
    """Requested stages plus their prerequisites, in execution order."""
    want = set()

    def add(s):
        if s not in STAGE_DEPS:
            raise ValueError(f"unknown stage {s!r}; choose from {STAGES}")
        if s not in want:
            want.add(s)
            for d in STAGE_DEPS[s]:
                add(d)

    for s in stages:
        add(s)
    return tuple(s for s in STAGES if s in want)


@dataclass
class StageRecord:
    status: str = "pending"        # ok | failed | skipped | cached
    seconds: float = 0.0
    error: str = ""
    info: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    scenario_hash: str
    version: str = __version__
    stages: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)        # path relative to out -> sha256
    invariants: dict = field(default_factory=dict)   # suite name -> bool
    out: str = ""

    @property
    def failed_stages(self) -> list:
        return [k for k, r in self.stages.items() if r.status == "failed"]

    @property
    def invariants_ok(self) -> bool:
        return all(self.invariants.values())

    def to_json(self) -> str:
        d = {
            "scenario_hash": self.scenario_hash,
            "version": self.version,
            "stages": {k: vars(r) for k, r in self.stages.items()},
            "files": dict(sorted(self.files.items())),
            "invariants": dict(sorted(self.invariants.items())),
        }
        return json.dumps(d, indent=2, sort_keys=False, default=float) + "\n"

    @classmethod
    def from_json(cls, text: str, out: str = "") -> "RunManifest":
        d = json.loads(text)
        m = cls(d["scenario_hash"], d["version"], out=out)
        m.stages = {k: StageRecord(**v) for k, v in d["stages"].items()}
        m.files, m.invariants = d["files"], d["invariants"]
        return m


def default_test_function(box: SpaceTimeBox) -> TestFunction:
    """phi = (1 + x1^2) exp(x2) (1 + t) with fast factors cos(2 pi y1) cos(2 pi z1)."""
    return TestFunction.build(lambda x: 1 + x**2, np.exp, lambda t: 1 + t,
                              mu1=cos_mode(), nu1=cos_mode(), box=box)


class _Run:
    def __init__(self, s: Scenario, out: Path, force: bool):
        self.s, self.out, self.force = s, out, force
        self.m = RunManifest(s.hash(), out=str(out))
        self.ctx: dict = {}

    def emit(self, name: str, text: str):
        p = atomic_write(self.out / name, text)
        self.m.files[name] = sha256_file(p)

    # -- stages -------------------------------------------------------------

    def validate(self, rec):
        rep = validate(self.s.coefficient_field(), seed=self.s.seed)
        self.emit("validate.csv", _kv_csv(rep.as_dict()))
        self.m.invariants["coefficient_validation"] = rep.passed

    def cells(self, rec):
        s = self.s
        smp = sample(s.coefficient_field(), s.n_y, s.n_z)
        path = self.out / "cache" / f"cells-{cache_key(smp, s.tol)}.bin"
        sol = None
        if path.exists() and not self.force:
            try:
                sol = load_cell_solution(path, smp, s.tol)
                rec.status = "cached"
            except ValueError as exc:
                log.warning("ignoring cell cache %s: %s", path, exc)
        if sol is None:
            sol = solve_cells(smp, s.tol)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_cell_solution(sol, path)
            rec.info["iterations"] = {f"{i + 1}{k + 1}": int(n) for (i, k), n in sol.iterations.items()}
        rec.info.update(cache=str(path.relative_to(self.out)), n_y=s.n_y, n_z=s.n_z)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "k", "residual", "energy", "gradient_norm_sq"])
        for ik in INDEX_PAIRS:
            w.writerow([ik[0] + 1, ik[1] + 1, "%.17g" % sol.residual_norm[ik],
                        "%.17g" % sol.energy(ik), "%.17g" % sol.gradient_norm_sq(ik)])
        self.emit("cells.csv", buf.getvalue())
        self.m.invariants["cell_residuals"] = all(r <= 10 * s.tol for r in sol.residual_norm.values())
        self.ctx["cells"] = sol

    def tensor(self, rec):
        sol = self.ctx["cells"]
        t = assemble_q(sol)
        te = assemble_q_energy_form(sol)
        rep = check_tensor(t, self.s.coefficient_field())
        scale = float(np.abs(t.q).max())
        gap = float(np.abs(t.q - te.q).max() / scale)
        self.emit("tensor.csv", tensor_csv(t.q))
        d = rep.as_dict()
        d["energy_form_gap"] = gap
        self.emit("tensor_report.csv", _kv_csv(d))
        self.m.invariants["tensor_structure"] = rep.passed
        self.m.invariants["tensor_two_formula"] = gap <= TWO_FORMULA_RTOL
        self.ctx["tensor"] = t

    def flow(self, rec):
        s = self.s
        grid = s.grid()
        f = make_forcing(s.forcing, s.Lx, s.Ly, **s.forcing_dict())
        res = run(HomogenizedModel(self.ctx["tensor"]), f, grid, output_every=s.output_every,
                  scheme=s.scheme)
        self.emit("flow_energy.csv", res.ledger.to_csv())
        self.emit("flow_final.csv", snapshot_csv(grid, res.snapshots[-1]))
        rec.info["max_divergence"] = res.max_divergence
        self.m.invariants["flow_divergence"] = res.max_divergence <= DIVERGENCE_TOL
        self.ctx["flow"], self.ctx["forcing"] = res, f

    def sweep(self, rec):
        s = self.s
        rep = corrector_sweep(self.ctx["cells"], self.ctx["tensor"], self.ctx["forcing"],
                              self.ctx["flow"].grid, s.epsilons, s.output_every,
                              s.override_resolution, homogenized=self.ctx["flow"],
                              log=lambda r: log.info("sweep %s", r), scheme=s.scheme)
        self.emit("corrector.csv", rep.to_csv())
        rec.info["failed_epsilons"] = [r.epsilon for r in rep.records if r.error]
        rec.info["errors"] = [r.error for r in rep.records if r.error]
        ok = not rec.info["failed_epsilons"]
        self.m.invariants["corrector_decay"] = ok and rep.decreasing("E_grad") and rep.decreasing("E_L2")

    def sigma(self, rec):
        s = self.s
        box = SpaceTimeBox(s.Lx, s.Ly, s.T_final)
        psi = default_test_function(box)
        u = SeparableProfile(AxisFactor(None, cos_mode(), cos_mode()))
        eps = sorted(s.sigma_epsilons, reverse=True)
        pr = pairing_sweep(u, psi, eps, box)
        nr = norm_convergence_check(psi, eps, box)
        mr = mean_convergence_check(TestFunction.build(psi.x1.slow, psi.x2.slow, psi.t.slow,
                                                       mu1=cos_mode(), box=box), eps, box=box)
        self.emit("sigma_pairing.csv", records_csv(pr))
        self.emit("sigma_norm.csv", records_csv(nr))
        self.emit("sigma_mean.csv", records_csv(mr))
        self.m.invariants["sigma_pairing"] = pr[-1].gap <= SIGMA_GAP_TOL
        self.m.invariants["sigma_norm_decreasing"] = strictly_decreasing([r.gap for r in nr])


def run_pipeline(s: Scenario, out=None, stages=None, force: bool = False) -> RunManifest:
    """Run the selected stages; the manifest is written even when a stage fails."""
    out = Path(out if out is not None else s.out)
    out.mkdir(parents=True, exist_ok=True)
    todo = stage_closure(stages if stages is not None else s.stages)
    r = _Run(s, out, force)
    failed = set()
    try:
        for name in todo:
            rec = r.m.stages[name] = StageRecord()
            if any(d in failed for d in STAGE_DEPS[name]):
                rec.status = "skipped"
                rec.error = "prerequisite failed"
                failed.add(name)
                continue
            t0 = time.perf_counter()
            log.info("stage %s", name)
            try:
                getattr(r, name)(rec)
                if rec.status == "pending":
                    rec.status = "ok"
            except (ArithmeticError, RuntimeError, ValueError, MemoryError) as exc:
                rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
                failed.add(name)
                log.error("stage %s failed: %s", name, rec.error)
            rec.seconds = time.perf_counter() - t0
        emit_plot_data(r.m)
    finally:
        atomic_write(out / "manifest.json", r.m.to_json())
    return r.m


# ---------------------------------------------------------------------------
# plot data


def _rows(path: Path):
    if not path.exists():
        return []
    return list(csv.DictReader(io.StringIO(path.read_text())))


def emit_plot_data(manifest: RunManifest) -> list[Path]:
    """Long-format CSVs: decay (eps vs errors), tensor entries, sigma gaps.

    Missing stage outputs give header-only files.  The written files are
    added to the manifest inventory.
    """
    out = Path(manifest.out)
    tables = {}
    tables["plot_decay.csv"] = [[r["epsilon"], r["E_grad"], r["E_L2"]] for r in _rows(out / "corrector.csv")]
    rows = []
    if (out / "tensor.csv").exists():
        q = read_tensor_csv((out / "tensor.csv").read_text())
        info = manifest.stages.get("cells")
        ny = info.info.get("n_y", "") if info else ""
        nz = info.info.get("n_z", "") if info else ""
        for (i, j, k, h), v in np.ndenumerate(q):
            rows.append([ny, nz, i + 1, j + 1, k + 1, h + 1, "%.17g" % v])
    tables["plot_tensor.csv"] = rows
    rows = []
    for diag in ("pairing", "norm", "mean"):
        for r in _rows(out / f"sigma_{diag}.csv"):
            rows.append([diag, r["epsilon"], r["gap"]])
    tables["plot_sigma.csv"] = rows
    written = []
    for name, body in tables.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PLOT_SCHEMAS[name])
        w.writerows(body)
        p = atomic_write(out / name, buf.getvalue())
        manifest.files[name] = sha256_file(p)
        written.append(p)
    return written


def verify_inventory(manifest: RunManifest) -> list[str]:
    """Names whose checksum no longer matches the file on disk."""
    out = Path(manifest.out)
    return [n for n, h in manifest.files.items()
            if not (out / n).exists() or sha256_file(out / n) != h]

