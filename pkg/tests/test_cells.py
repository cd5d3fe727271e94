import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reihom.cells import (INDEX_PAIRS, CellRHSIndex, PeriodicVectorField2, _quad_sampling,
                          divergence_defect, load_cell_solution, save_cell_solution,
                          solve_cell_sequential, solve_cell_single_scale, solve_cells)
from reihom.coeff import cell_nodes, make_builtin, sample
from reihom.oracle import MAX_ORACLE_N, solve_cell_dense_oracle
from reihom.spectral import Layout
from conftest import cell_solution


def field_discrepancy(sol, oracle):
    """Sup-norm gap of (chi, eta) over all four problems, relative to the oracle scale."""
    scale = max(max(np.abs(c).max(), np.abs(e).max()) for c, e, _ in oracle.values())
    gap = max(max(np.abs(sol.chi_nodal(ik) - c).max(), np.abs(sol.eta_nodal(ik) - e).max())
              for ik, (c, e, _) in oracle.items())
    return gap / scale


def test_index_validation():
    assert CellRHSIndex(1, 0).k == 0
    with pytest.raises(ValueError):
        CellRHSIndex(2, 0)


def test_constant_field_has_zero_correctors():
    sol = solve_cells(sample(make_builtin("constant", {"nu": 2.5}), 8, 8))
    for ik in INDEX_PAIRS:
        assert np.abs(sol.chi[ik]).max() == 0
        assert np.abs(sol.eta[ik]).max() == 0
        assert sol.energy(ik) == 0


@pytest.mark.parametrize("family", ["separable", "anisotropic"])
def test_correctors_are_divergence_free_with_zero_means(family):
    sol = solve_cells(sample(make_builtin(family), 8, 8))
    lay = Layout((8, 8))
    for ik in INDEX_PAIRS:
        chi = sol.chi_field(ik)
        assert divergence_defect(chi) < 1e-12
        np.testing.assert_array_equal(chi.mean(), 0)
        for p in [(0, 0), (3, 5)]:
            eta = sol.eta_at(ik, p)
            assert divergence_defect(eta) < 1e-12
            assert np.abs(eta.mean()).max() < 1e-15
        # z-mean of eta vanishes at every y node
        assert np.abs(sol.eta_nodal(ik).mean(axis=(-2, -1))).max() < 1e-14
        assert lay.shape == sol.chi[ik].shape[1:]


@pytest.mark.parametrize("family", ["separable", "layered", "anisotropic"])
def test_dense_oracle_agreement_n4(family):
    s = sample(make_builtin(family), 4, 4)
    sol = solve_cells(s, tol=1e-13)
    oracle = {ik: solve_cell_dense_oracle(s, ik) for ik in INDEX_PAIRS}
    assert field_discrepancy(sol, oracle) < 1e-10


def test_oracle_size_guard():
    s = sample(make_builtin("separable"), 2 * MAX_ORACLE_N, 4)
    with pytest.raises(ValueError, match="limited"):
        solve_cell_dense_oracle(s, (0, 0))


def test_y_only_field_reduces_to_single_scale_problem():
    s = sample(make_builtin("y_only"), 8, 8)
    sol = solve_cells(s, tol=1e-12)
    a_y = np.ascontiguousarray(_quad_sampling(s).a[..., 0, 0])
    for ik in INDEX_PAIRS:
        assert np.abs(sol.eta[ik]).max() < 1e-14
        c, info = solve_cell_single_scale(a_y, 8, ik, tol=1e-12)
        np.testing.assert_allclose(sol.chi[ik], c[0] if c.ndim == 4 else c, atol=1e-11)


def test_z_only_field_has_no_y_corrector():
    sol = solve_cells(sample(make_builtin("z_only"), 8, 8))
    for ik in INDEX_PAIRS:
        assert np.abs(sol.chi[ik]).max() < 1e-14
    assert max(np.abs(sol.eta[ik]).max() for ik in INDEX_PAIRS) > 1e-3


def test_sequential_route_matches_coupled_fields():
    s = sample(make_builtin("anisotropic"), 8, 8)
    sol = solve_cells(s, tol=1e-12)
    for ik in [(0, 1), (1, 0)]:
        seq = solve_cell_sequential(s, ik, tol=1e-12)
        np.testing.assert_allclose(seq.chi, sol.chi[ik], atol=1e-10)


def test_periodic_field_slow_evaluation_matches_nodes(rng):
    n = 8
    lay = Layout((n, n))
    vals = lay.synthesize(lay.analyze(rng.standard_normal((2, n, n))))
    f = PeriodicVectorField2.from_nodal(vals)
    t = cell_nodes(n)
    Y1, Y2 = np.meshgrid(t, t, indexing="ij")
    np.testing.assert_allclose(f.evaluate(Y1, Y2), vals, atol=1e-12)
    with pytest.raises(ValueError):
        PeriodicVectorField2(6, f.coeffs)


def test_dump_roundtrip(tmp_path):
    s = sample(make_builtin("layered"), 8, 4)
    sol = solve_cells(s)
    path = tmp_path / "cells.bin"
    save_cell_solution(sol, path)
    back = load_cell_solution(path, s)
    for ik in INDEX_PAIRS:
        np.testing.assert_array_equal(back.chi[ik], sol.chi[ik])
        np.testing.assert_array_equal(back.eta[ik], sol.eta[ik])
        assert back.residual_norm[ik] == sol.residual_norm[ik]
    assert not list(tmp_path.glob("*.tmp"))
    with pytest.raises(ValueError, match="does not match"):
        load_cell_solution(path, sample(make_builtin("separable"), 8, 4))
    (tmp_path / "junk.bin").write_bytes(b"nonsense-bytes")
    with pytest.raises(ValueError, match="not a cell-solution"):
        load_cell_solution(tmp_path / "junk.bin", s)


@settings(max_examples=5, deadline=None)
@given(c=st.floats(0.2, 20.0))
def test_correctors_invariant_under_coefficient_scaling(c):
    fld = make_builtin("anisotropic")
    a = solve_cells(sample(fld, 4, 4), tol=1e-13)
    b = solve_cells(sample(fld.scaled(c), 4, 4), tol=1e-13)
    for ik in INDEX_PAIRS:
        np.testing.assert_allclose(b.chi[ik], a.chi[ik], atol=1e-11)
        np.testing.assert_allclose(b.eta[ik], a.eta[ik], atol=1e-11)


@pytest.mark.parametrize("family", ["y_only", "z_only", "separable", "layered", "anisotropic"])
def test_energy_coercivity_and_residuals(family):
    fld = make_builtin(family)
    sol = cell_solution(family, n=8)
    g2 = {ik: sol.gradient_norm_sq(ik) for ik in INDEX_PAIRS}
    assert max(g2.values()) > 0
    for ik in INDEX_PAIRS:
        assert sol.energy(ik) >= fld.alpha * g2[ik] * (1 - 1e-12)
        assert sol.residual_norm[ik] <= sol.tol


def test_refinement_differences_decrease():
    sols = {n: solve_cells(sample(make_builtin("anisotropic"), n, n), tol=1e-12) for n in (4, 8, 16)}

    def gap(n):
        a, b = sols[n], sols[2 * n]
        return max(max(np.abs(a.chi_nodal(ik) - b.chi_nodal(ik)[:, ::2, ::2]).max(),
                       np.abs(a.eta_nodal(ik) - b.eta_nodal(ik)[:, ::2, ::2, ::2, ::2]).max())
                   for ik in INDEX_PAIRS)

    assert gap(8) < gap(4)
