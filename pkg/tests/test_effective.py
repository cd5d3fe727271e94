import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from reihom.cells import sequential_tensor, solve_cells
from reihom.coeff import make_builtin, sample
from reihom.effective import (EffectiveTensor, ThetaBasis, assemble_q, assemble_q_energy_form,
                              check_tensor, from_voigt, isotropic_tensor, mean_tensor,
                              read_tensor_csv, tensor_csv, voigt)


def laminate_oracle(b1, s1, b2, s2):
    """Voigt matrix for c(y1, z1) = (b1 + s1 sin 2pi y1)(b2 + s2 cos 2pi z1) by 1D quadrature.

    Both scales are laminates normal to direction 1: the shear entry
    (d u2 / d x1) takes harmonic means, every other diagonal entry arithmetic
    means, and off-diagonal entries vanish.
    """
    def c1(t):
        return b1 + s1 * np.sin(2 * np.pi * t)

    def c2(t):
        return b2 + s2 * np.cos(2 * np.pi * t)

    m1, m2 = quad(c1, 0, 1)[0], quad(c2, 0, 1)[0]
    h1 = 1 / quad(lambda t: 1 / c1(t), 0, 1)[0]
    h2 = 1 / quad(lambda t: 1 / c2(t), 0, 1)[0]
    return np.diag([m1 * m2, h1 * h2, m1 * m2, m1 * m2])


def test_separable_tensor_matches_laminate_oracle(cells16):
    q = assemble_q(cells16["separable"]).q
    np.testing.assert_allclose(voigt(q), laminate_oracle(2, 1, 2, 1), atol=1e-8)


@pytest.mark.parametrize("params", [{"b1": 3.0, "s1": 2.0, "b2": 1.5, "s2": 0.5},
                                    {"b1": 1.0, "s1": 0.5, "b2": 3.0, "s2": 2.0}])
def test_separable_tensor_oracle_other_parameters(params):
    # contrast 5 converges more slowly; check accuracy at n = 16 and decay from n = 8
    expected = laminate_oracle(params["b1"], params["s1"], params["b2"], params["s2"])
    err = []
    for n in (8, 16):
        sol = solve_cells(sample(make_builtin("separable", params), n, n), tol=1e-12)
        err.append(np.abs(voigt(assemble_q(sol).q) - expected).max() / np.abs(expected).max())
    assert err[1] < 1e-5
    assert err[1] < 0.05 * err[0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=16, max_size=16))
def test_voigt_roundtrip(vals):
    q = np.array(vals).reshape(2, 2, 2, 2)
    np.testing.assert_array_equal(from_voigt(voigt(q)), q)
    xi = np.arange(4.0).reshape(2, 2) - 1.5
    t = EffectiveTensor(q, 1.0)
    assert t.form(xi) == pytest.approx(float(np.sum(xi * t.apply(xi))), abs=1e-9)
    assert t.form(xi) == pytest.approx(float(xi.ravel() @ voigt(q) @ xi.ravel()), abs=1e-9)


def test_theta_basis():
    mats = list(ThetaBasis())
    assert len(mats) == 4
    np.testing.assert_array_equal(sum(mats), np.ones((2, 2)))


def test_constant_field_gives_mean_tensor():
    nu = 1.7
    sol = solve_cells(sample(make_builtin("constant", {"nu": nu}), 8, 8))
    t = assemble_q(sol)
    np.testing.assert_allclose(t.q, isotropic_tensor(nu), atol=1e-15)
    rep = check_tensor(t)
    assert rep.passed and rep.upper_bound_gap == pytest.approx(0, abs=1e-14)


@pytest.mark.parametrize("family", ["y_only", "z_only", "layered", "anisotropic"])
def test_direct_and_energy_forms_agree_n8(family):
    sol = solve_cells(sample(make_builtin(family), 8, 8), tol=1e-12)
    a, b = assemble_q(sol).q, assemble_q_energy_form(sol).q
    assert np.abs(a - b).max() <= 1e-9 * np.abs(a).max()


def test_check_tensor_flags_violations():
    base = isotropic_tensor(1.0)
    abar = np.eye(2)
    bad_sym = base.copy()
    bad_sym[0, 1, 0, 1] += 0.1
    assert check_tensor(EffectiveTensor(bad_sym, 1.0), abar=abar).symmetry_defect == pytest.approx(0.1)
    assert not check_tensor(EffectiveTensor(bad_sym, 1.0), abar=abar).passed
    too_big = 1.5 * base
    rep = check_tensor(EffectiveTensor(too_big, 1.5), abar=abar)
    assert not rep.upper_bound_ok and rep.upper_bound_gap == pytest.approx(0.5)
    rep = check_tensor(EffectiveTensor(-base, -1.0), abar=abar)
    assert rep.alpha0_estimate < 0 and not rep.passed
    assert np.isnan(check_tensor(EffectiveTensor(base, 1.0)).upper_bound_gap)


def test_mean_tensor_structure():
    abar = np.array([[2.0, 0.3], [0.3, 1.0]])
    m = mean_tensor(abar)
    assert m[0, 1, 0, 0] == 0.3 and m[0, 1, 0, 1] == 0


def test_assembly_rejects_foreign_sampling():
    sol = solve_cells(sample(make_builtin("layered"), 4, 4))
    with pytest.raises(ValueError, match="different sampling"):
        assemble_q(sol, sample(make_builtin("separable"), 4, 4))


def test_tensor_csv_roundtrip(cells16):
    t = assemble_q(cells16["anisotropic"])
    text = t.to_csv()
    assert text.splitlines()[0] == "i,j,k,h,value"
    assert len(text.splitlines()) == 17
    np.testing.assert_array_equal(read_tensor_csv(text), t.q)
    with pytest.raises(ValueError):
        read_tensor_csv("i,j,k,h,value\n1,1,1,1,2\n")


def test_symmetrized_is_exactly_symmetric(cells16):
    q = assemble_q(cells16["anisotropic"]).symmetrized()
    np.testing.assert_array_equal(q, q.transpose(1, 0, 3, 2))
    assert tensor_csv(q).count("\n") == 17


def test_sequential_route_tensor_matches_coupled_n8():
    s = sample(make_builtin("separable"), 8, 8)
    qc = assemble_q(solve_cells(s, tol=1e-12)).q
    qs, B = sequential_tensor(s, tol=1e-12)
    assert np.abs(qs - qc).max() <= 1e-6 * np.abs(qc).max()
    assert B.shape[:4] == (2, 2, 2, 2)
