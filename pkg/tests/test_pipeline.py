import csv
import io
import json

import numpy as np
import pytest

import reihom.pipeline as pipeline
from reihom.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERIC, EXIT_OK, main
from reihom.effective import read_tensor_csv
from reihom.pipeline import (PLOT_SCHEMAS, RunManifest, atomic_write, run_pipeline, stage_closure,
                             verify_inventory)
from reihom.scenario import parse_scenario_text

SMALL = """
[coefficient]
family = layered
[cells]
n_y = 8
n_z = 8
[domain]
nx = 32
ny = 32
dt = 1/200
T_final = 0.05
output_every = 5
[sweep]
epsilons = 1/2
[sigma]
epsilons = 1/4, 1/16
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_pipeline(parse_scenario_text(SMALL), out=out), out


def test_full_run_outputs(small_run):
    m, out = small_run
    assert all(r.status == "ok" for r in m.stages.values()), m.stages
    assert m.invariants_ok and not m.failed_stages
    for name in ("validate.csv", "cells.csv", "tensor.csv", "tensor_report.csv", "flow_energy.csv",
                 "flow_final.csv", "corrector.csv", "sigma_pairing.csv", "sigma_norm.csv",
                 "sigma_mean.csv", *PLOT_SCHEMAS):
        assert name in m.files, name
    assert verify_inventory(m) == []
    q = read_tensor_csv((out / "tensor.csv").read_text())
    assert q.shape == (2, 2, 2, 2)


def test_manifest_roundtrip_and_checksums(small_run):
    m, out = small_run
    text = (out / "manifest.json").read_text()
    back = RunManifest.from_json(text, out=str(out))
    assert back.files == m.files and back.invariants == m.invariants
    assert back.stages["cells"].info["n_y"] == 8
    tampered = RunManifest.from_json(text, out=str(out))
    tampered.files["corrector.csv"] = "0" * 64
    assert verify_inventory(tampered) == ["corrector.csv"]


def test_plot_schemas(small_run):
    _, out = small_run
    for name, header in PLOT_SCHEMAS.items():
        rows = list(csv.reader(io.StringIO((out / name).read_text())))
        assert rows[0] == header
        assert len(rows) > 1
    tensor_rows = list(csv.DictReader(io.StringIO((out / "plot_tensor.csv").read_text())))
    assert len(tensor_rows) == 16 and tensor_rows[0]["n_y"] == "8"


def test_cache_hit_reproduces_outputs(small_run, tmp_path):
    m, out = small_run
    m2 = run_pipeline(parse_scenario_text(SMALL), out=out, stages=("tensor",))
    assert m2.stages["cells"].status == "cached"
    for name in ("tensor.csv", "tensor_report.csv", "cells.csv"):
        assert m2.files[name] == m.files[name]
    m3 = run_pipeline(parse_scenario_text(SMALL), out=out, stages=("tensor",), force=True)
    assert m3.stages["cells"].status == "ok"
    assert m3.files["tensor.csv"] == m.files["tensor.csv"]


def test_corrupt_cache_is_ignored(tmp_path):
    s = parse_scenario_text(SMALL)
    m = run_pipeline(s, out=tmp_path, stages=("cells",))
    cache = tmp_path / m.stages["cells"].info["cache"]
    cache.write_bytes(b"garbage")
    m2 = run_pipeline(s, out=tmp_path, stages=("cells",))
    assert m2.stages["cells"].status == "ok" and m2.files["cells.csv"] == m.files["cells.csv"]


def test_partial_run_gives_header_only_plot_files(tmp_path):
    m = run_pipeline(parse_scenario_text(SMALL), out=tmp_path, stages=("validate",))
    assert list(m.stages) == ["validate"]
    for name, header in PLOT_SCHEMAS.items():
        assert (tmp_path / name).read_text() == ",".join(header) + "\n"


def test_failed_stage_skips_dependents(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver diverged")

    monkeypatch.setattr(pipeline, "solve_cells", boom)
    m = run_pipeline(parse_scenario_text(SMALL), out=tmp_path, force=True)
    st = {k: r.status for k, r in m.stages.items()}
    assert st == {"validate": "ok", "cells": "failed", "tensor": "skipped", "flow": "skipped",
                  "sweep": "skipped", "sigma": "ok"}
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["stages"]["cells"]["error"] == "RuntimeError: solver diverged"


def test_stage_closure():
    assert stage_closure(["sweep"]) == ("cells", "tensor", "flow", "sweep")
    assert stage_closure(["sigma", "validate"]) == ("validate", "sigma")
    with pytest.raises(ValueError):
        stage_closure(["plot"])


def test_atomic_write_leaves_no_temporaries(tmp_path):
    atomic_write(tmp_path / "a" / "x.csv", "1\n")
    atomic_write(tmp_path / "a" / "x.csv", b"2\n")
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["x.csv"]
    assert (tmp_path / "a" / "x.csv").read_text() == "2\n"


# ---------------------------------------------------------------------------
# command line


@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text(SMALL)
    return p


def test_cli_sigma_ok(scenario_file, tmp_path, capsys):
    rc = main(["sigma", "--scenario", str(scenario_file), "--out", str(tmp_path / "o")])
    assert rc == EXIT_OK
    text = capsys.readouterr().out
    assert "sigma" in text and "invariant sigma_pairing: pass" in text
    assert (tmp_path / "o" / "sigma_pairing.csv").exists()


def test_cli_cells_verb_includes_tensor(scenario_file, tmp_path):
    assert main(["cells", "--scenario", str(scenario_file), "--out", str(tmp_path / "o"),
                 "--threads", "1"]) == EXIT_OK
    assert (tmp_path / "o" / "tensor.csv").exists()


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[domain]\nnx = 64\nny = 64\n")
    assert main(["sweep", "--scenario", str(bad)]) == EXIT_CONFIG
    assert "DNS resolution rule" in capsys.readouterr().err
    assert main(["all", "--scenario", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    good = tmp_path / "good.ini"
    good.write_text(SMALL)
    assert main(["all", "--scenario", str(good), "--stages", "cells,paint"]) == EXIT_CONFIG
    assert main(["all", "--scenario", str(good), "--threads", "0"]) == EXIT_CONFIG


def test_cli_numeric_failure(scenario_file, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ArithmeticError("nan in residual")

    monkeypatch.setattr(pipeline, "solve_cells", boom)
    assert main(["tensor", "--scenario", str(scenario_file), "--out", str(tmp_path / "o"),
                 "--force"]) == EXIT_NUMERIC


def test_cli_invariant_failure(scenario_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(pipeline, "strictly_decreasing", lambda v: False)
    assert main(["sigma", "--scenario", str(scenario_file), "--out", str(tmp_path / "o")]) == EXIT_INVARIANT
    assert "invariant sigma_norm_decreasing: FAIL" in capsys.readouterr().out


def test_cli_help_lists_verbs(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for verb in ("validate", "cells", "tensor", "flow", "sweep", "sigma", "all"):
        assert verb in out


def test_module_entry_point(scenario_file, tmp_path):
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "reihom", "validate", "--scenario", str(scenario_file),
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "invariant coefficient_validation: pass" in r.stdout


def test_cells_only_selection_lists_cell_and_tensor_outputs(tmp_path):
    m = run_pipeline(parse_scenario_text(SMALL), out=tmp_path, stages=("cells",))
    assert list(m.stages) == ["cells"]
    m = run_pipeline(parse_scenario_text(SMALL), out=tmp_path / "t", stages=stage_closure(["tensor"]))
    data = {n for n in m.files if not n.startswith("plot_")}
    assert data == {"cells.csv", "tensor.csv", "tensor_report.csv"}


def test_constant_field_scenario(tmp_path):
    text = SMALL.replace("family = layered", "family = constant\nnu = 0.9")
    m = run_pipeline(parse_scenario_text(text), out=tmp_path)
    assert m.invariants_ok
    q = read_tensor_csv((tmp_path / "tensor.csv").read_text())
    assert np.abs(q - 0.9 * np.einsum("ij,kh->ijkh", np.eye(2), np.eye(2))).max() < 1e-15
    rows = list(csv.DictReader(io.StringIO((tmp_path / "cells.csv").read_text())))
    assert all(float(r["energy"]) == 0 for r in rows)
    rec = list(csv.DictReader(io.StringIO((tmp_path / "corrector.csv").read_text())))
    assert len(rec) == 1 and float(rec[0]["E_grad"]) < 1e-12
