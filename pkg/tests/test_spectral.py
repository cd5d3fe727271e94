import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reihom.krylov import SolverError, pcg
from reihom.spectral import Layout, project_div_free


def _random_trig(n, rng, lead=()):
    lay = Layout((n, n))
    f = rng.standard_normal(tuple(lead) + (n, n))
    return lay.synthesize(lay.analyze(f)), lay


def test_synthesize_analyze_roundtrip(rng):
    f, lay = _random_trig(8, rng)
    np.testing.assert_allclose(lay.synthesize(lay.analyze(f)), f, atol=1e-13)


def test_oversampled_synthesis_matches_coarse_nodes(rng):
    f, lay = _random_trig(8, rng)
    fine = Layout((8, 8), (16, 16)).synthesize(lay.analyze(f))
    np.testing.assert_allclose(fine[::2, ::2], f, atol=1e-13)


def test_inner_product_is_cell_integral(rng):
    f, lay = _random_trig(8, rng)
    g, _ = _random_trig(8, rng)
    assert lay.inner(lay.analyze(f), lay.analyze(g)) == pytest.approx(np.mean(f * g), abs=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.sampled_from([4, 6, 8, 12]))
def test_projection_is_idempotent_and_divergence_free(seed, n):
    rng = np.random.default_rng(seed)
    lay = Layout((n, n))
    c = lay.analyze(rng.standard_normal((2, n, n)))
    k1, k2 = lay.wavevector(0), lay.wavevector(1)
    p = project_div_free(c, k1, k2)
    np.testing.assert_allclose(k1 * p[0] + k2 * p[1], 0, atol=1e-13)
    np.testing.assert_allclose(project_div_free(p, k1, k2), p, atol=1e-14)
    # orthogonal projection: <c - Pc, Pc> = 0
    r = c - p
    assert abs(lay.inner(r[0], p[0]) + lay.inner(r[1], p[1])) < 1e-12


def _spd(n, rng):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def test_pcg_solves_spd_batch(rng):
    # one component, batch along the leading axis; the middle member is trivial
    A = _spd(30, rng)
    B = np.stack([rng.standard_normal(30), np.zeros(30), rng.standard_normal(30)])

    def apply(xs):
        return [xs[0] @ A.T]

    def dot(u, v):
        return np.sum(u[0] * v[0], axis=1)

    res = pcg(apply, [B], lambda r: [r[0] / np.diag(A)], dot,
              bcast=lambda s: [np.asarray(s)[:, None]], tol=1e-12, atol=1e-30)
    X = res.x[0]
    np.testing.assert_allclose(X @ A.T, B, atol=1e-9)
    np.testing.assert_array_equal(X[1], 0)
    assert res.residual <= 1e-12


def test_pcg_detects_indefinite_operator():
    A = np.diag([1.0, -1.0])

    def dot(u, v):
        return np.array([u[0] @ v[0]])

    with pytest.raises(SolverError, match="curvature"):
        pcg(lambda x: [A @ x[0]], [np.array([1.0, 1.0])], lambda r: r, dot)


def test_pcg_reports_non_convergence(rng):
    A = _spd(40, rng)

    def dot(u, v):
        return np.array([u[0] @ v[0]])

    with pytest.raises(SolverError, match="did not converge"):
        pcg(lambda x: [A @ x[0]], [rng.standard_normal(40)], lambda r: r, dot, tol=1e-14, maxiter=2)
