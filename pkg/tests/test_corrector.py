import dataclasses

import numpy as np
import pytest
from conftest import cell_solution
from hypothesis import given, settings
from hypothesis import strategies as st

import reihom.corrector as corrector
from reihom.cells import INDEX_PAIRS, PeriodicVectorField2, divergence_defect, solve_cells
from reihom.coeff import make_builtin, sample
from reihom.corrector import (CorrectorRecord, CorrectorReport, ProvenanceError, build_correctors,
                              corrector_sweep, evaluate_expansion, expansion_errors,
                              extended_u_faces, extended_v_faces, extend, parseval_audit)
from reihom.effective import assemble_q
from reihom.flow import DomainGrid, FlowError, FlowState, HomogenizedModel, run
from reihom.forcing import make_forcing


def homogenized_run(sol, n=32, T=0.1, every=5):
    g = DomainGrid(n, n, dt=1 / 200, T_final=T, u_ref=0.4)
    return run(HomogenizedModel(assemble_q(sol)), make_forcing("bump_curl"), g, output_every=every)


@pytest.fixture(scope="module")
def separable8():
    return solve_cells(sample(make_builtin("separable"), 8, 8))


def test_constant_field_expansion_is_u0():
    sol = solve_cells(sample(make_builtin("constant", {"nu": 1.3}), 8, 8))
    h = homogenized_run(sol)
    corr = build_correctors(h, sol)
    ex = evaluate_expansion(corr, 0.5)
    for a, b in zip(ex.total(), extend(h.grid, h.snapshots[-1])):
        np.testing.assert_array_equal(a, b)


def test_y_only_field_has_no_second_corrector():
    sol = solve_cells(sample(make_builtin("y_only"), 8, 8))
    corr = build_correctors(homogenized_run(sol), sol)
    ex = evaluate_expansion(corr, 0.5)
    assert max(np.abs(c).max() for c in ex.u2) < 1e-15
    assert max(np.abs(c).max() for c in ex.u1) > 1e-6


def test_first_corrector_is_linear_in_u0_gradient(separable8):
    h = homogenized_run(separable8)
    doubled = dataclasses.replace(h, snapshots=[FlowState(2 * s.u, 2 * s.v, s.p, s.t) for s in h.snapshots])
    a = evaluate_expansion(build_correctors(h, separable8), 0.5)
    b = evaluate_expansion(build_correctors(doubled, separable8), 0.5)
    for x, y in zip(a.u1 + a.u2, b.u1 + b.u2):
        np.testing.assert_allclose(y, 2 * x, rtol=1e-14, atol=1e-18)


def test_fast_tables_match_pointwise_summation(separable8):
    # slow-path oracle: direct Fourier sums and interpolated gradients at face points
    eps = 0.25
    h = homogenized_run(separable8, n=128, T=0.05)
    corr = build_correctors(h, separable8)
    ex = evaluate_expansion(corr, eps)
    rng = np.random.default_rng(7)
    for comp, (xs, ys) in enumerate((extended_u_faces(h.grid), extended_v_faces(h.grid))):
        ia = rng.integers(0, len(xs), 40)
        ja = rng.integers(0, len(ys), 40)
        x, y = xs[ia], ys[ja]
        u1 = corr.u1_at(-1, x, y, eps)[comp]
        u2 = corr.u2_at(-1, x, y, eps)[comp]
        np.testing.assert_allclose(ex.u1[comp][ia, ja], u1, rtol=0, atol=1e-14)
        np.testing.assert_allclose(ex.u2[comp][ia, ja], u2, rtol=0, atol=1e-14)


def test_unit_epsilon_is_plain_sum(separable8):
    h = homogenized_run(separable8)
    corr = build_correctors(h, separable8)
    ex = evaluate_expansion(corr, 1.0)
    for a, b, c, tot in zip(ex.u0, ex.u1, ex.u2, ex.total()):
        np.testing.assert_array_equal(tot, a + b + c)
    with pytest.raises(ValueError):
        evaluate_expansion(corr, 0.0)


def test_resolution_rule_enforced(separable8):
    corr = build_correctors(homogenized_run(separable8), separable8)
    with pytest.raises(ValueError, match="resolution"):
        evaluate_expansion(corr, 0.25)
    evaluate_expansion(corr, 0.25, override_resolution=True)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4))
def test_first_corrector_is_divergence_free_in_y(G):
    sol = cell_solution("anisotropic", n=8)
    c = -sum(g * sol.chi[ik] for g, ik in zip(G, INDEX_PAIRS))
    f = PeriodicVectorField2(8, c)
    assert divergence_defect(f) <= 1e-12 * (1 + max(map(abs, G)))
    assert np.abs(f.mean()).max() == 0


def test_provenance_mismatch(separable8):
    other = solve_cells(sample(make_builtin("layered"), 8, 8))
    h = homogenized_run(other)
    assert h.field_key == other.field_key
    with pytest.raises(ProvenanceError):
        build_correctors(h, separable8)
    with pytest.raises(ProvenanceError):
        build_correctors(h, separable8, field_key="custom()")


@pytest.mark.parametrize("eps", [0.5, 0.25])
def test_parseval_audit_on_aligned_grid(separable8, eps):
    corr = build_correctors(homogenized_run(separable8, n=128, T=0.05), separable8)
    nodal, spectral = parseval_audit(corr, eps)
    assert spectral > 0
    assert abs(nodal - spectral) <= 0.01 * spectral


def test_errors_require_matching_output_times(separable8):
    h = homogenized_run(separable8, every=5)
    dns = homogenized_run(separable8, every=4)
    with pytest.raises(ValueError, match="output times"):
        expansion_errors(build_correctors(h, separable8), dns, 0.5)


def test_constant_field_sweep_is_epsilon_independent():
    sol = solve_cells(sample(make_builtin("constant", {"nu": 0.8}), 8, 8))
    g = DomainGrid(128, 128, dt=1 / 200, T_final=0.05, u_ref=0.4)
    rep = corrector_sweep(sol, assemble_q(sol), make_forcing("bump_curl"), g, [0.5, 0.25])
    assert [r.epsilon for r in rep.records] == [0.5, 0.25]
    for r in rep.records:
        assert r.E_grad <= 1e-12 and r.E_L2 <= 1e-14 and not r.error


def test_sweep_records_member_failures(separable8, monkeypatch):
    real_run = corrector.run

    def flaky(model, *a, **k):
        if getattr(model, "epsilon", None) == 0.5:
            raise FlowError("synthetic blow-up")
        return real_run(model, *a, **k)

    monkeypatch.setattr(corrector, "run", flaky)
    g = DomainGrid(32, 32, dt=1 / 200, T_final=0.05, u_ref=0.4)
    rep = corrector_sweep(separable8, assemble_q(separable8), make_forcing("bump_curl"), g,
                          [0.5, 0.6], override_resolution=True)
    assert [r.epsilon for r in rep.records] == [0.6, 0.5]
    assert rep.records[1].error.startswith("FlowError") and np.isnan(rep.records[1].E_grad)
    assert len(rep.completed()) == 1
    assert rep.to_csv().count("\n") == 2


def test_report_csv_and_monotonicity():
    rep = CorrectorReport([CorrectorRecord(0.5, 0.3, 0.01, 64, 0.01, 1.0),
                           CorrectorRecord(0.25, 0.2, 0.005, 64, 0.01, 2.0)])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "epsilon,E_grad,E_L2,nx,dt,wall_seconds"
    assert lines[1].startswith("0.5,0.29999999999999999,")
    assert rep.decreasing() and rep.decreasing("E_L2")
    rep.records.append(CorrectorRecord(0.2, 0.25, 0.001, 64, 0.01, 1.0))
    assert not rep.decreasing()
