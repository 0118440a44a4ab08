import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import unit_points, vectors
from loopgauge import loops as lp
from loopgauge import octonion as oc
from loopgauge.constants import CONSTANTS

C = CONSTANTS
E7 = np.eye(7)


def rel(a, scale):
    return float(np.abs(a).max()) / max(1.0, scale)


# ---- oracles -------------------------------------------------------------


def test_bracket_of_basis_vectors_at_identity(O):
    assert np.allclose(lp.bracket(O, O.one(), E7[0], E7[1]), 2 * E7[2], atol=1e-15)


def test_bracket_equals_twice_cross_product_at_identity(O, rng):
    x, y = rng.standard_normal((2, 7))
    assert np.allclose(lp.bracket(O, O.one(), x, y), 2 * oc.cross(x, y), atol=1e-13)


def test_modified_product_at_identity_is_product(O, rng):
    p, q = O.random_point(rng, (2,))
    assert np.allclose(lp.mod_product(O, p, q, O.one()), O.mul(p, q), atol=1e-15)


def test_modified_product_basis_value(O):
    # (e1 (e1 e2)) / e2 = (e1 e3) / e2 = (-e2) / e2 = -1
    e1, e2 = oc.basis(1), oc.basis(2)
    assert np.allclose(lp.mod_product(O, e1, e1, e2), -oc.basis(0), atol=1e-15)


def test_modified_quotient_inverts_modified_product(O, rng):
    p, q, s = O.random_point(rng, (3,))
    x = lp.mod_rquot(O, q, p, s)
    assert np.abs(lp.mod_product(O, x, p, s) - q).max() < C.quotient_tol


def test_associator_vanishes_with_identity_slot(O, rng):
    s = O.random_point(rng)
    x, y = rng.standard_normal((2, 7))
    val = lp.mixed_associator(O, s, x, y, O.one(), kinds="llL")
    assert np.abs(val).max() < 1e-13


def test_killing_form_is_minus_24_identity(O):
    K = lp.killing_form(O, O.one())
    # independent oracle: trace of explicit ad-matrix products
    ads = [lp.ad_matrix(O, O.one(), E7[i]) for i in range(7)]
    K2 = np.array([[np.trace(a @ b) for b in ads] for a in ads])
    assert np.abs(K - C.killing_scale * np.eye(7)).max() < C.killing_tol
    assert np.abs(K - K2).max() < C.killing_tol


def test_phi_decomposition_at_identity(O, Q):
    D = lp.phi_decomposition(O, O.one())
    assert (D.rank, D.kernel_dim) == (7, 14)
    DQ = lp.phi_decomposition(Q, Q.one())
    assert (DQ.rank, DQ.kernel_dim, Q.dim_p) == (3, 0, 3)


def test_phi_kernel_is_the_stabilizer_of_the_unit_product(O):
    # kernel elements act as derivations of the octonion product
    D = lp.phi_decomposition(O, O.one())
    rng = np.random.default_rng(3)
    for g in D.kernel_basis[:4]:
        M = O.p_matrix(g)
        x, y = rng.standard_normal((2, 8))
        lhs = M @ O.mul(x, y)
        rhs = O.mul(M @ x, y) + O.mul(x, M @ y)
        assert np.abs(lhs - rhs).max() < 1e-12


def test_partial_basis_is_skew_and_spans_so7(O):
    P = O.partial_basis
    assert np.abs(P + np.swapaxes(P, 1, 2)).max() < 1e-14
    assert np.linalg.matrix_rank(P.reshape(21, -1)) == 21


def test_partial_action_matrix_derivative(O, rng):
    g = rng.standard_normal(21)
    t = 1e-6
    fwd = lp.partial_action_matrix(O, expm(t * O.p_matrix(g)))
    bwd = lp.partial_action_matrix(O, expm(-t * O.p_matrix(g)))
    assert np.abs((fwd - bwd) / (2 * t) - np.einsum("k,kij", g, O.partial_basis)).max() < 1e-8


def test_fd_bracket_converges_at_second_order(O, rng):
    s = O.random_point(rng)
    x, y = rng.standard_normal((2, 7))
    exact = lp.bracket(O, s, x, y)
    errs = [np.abs(lp.bracket(O, s, x, y, method="fd", h=h, richardson=False) - exact).max() for h in (4e-2, 2e-2)]
    assert np.log2(errs[0] / errs[1]) >= C.fd_order_min


def test_fd_associator_converges_at_second_order(O, rng):
    s = O.random_point(rng)
    x, y, z = rng.standard_normal((3, 7))
    exact = lp.associator(O, s, x, y, z)
    errs = [np.abs(lp.associator(O, s, x, y, z, method="fd", h=h, richardson=False) - exact).max()
            for h in (8e-2, 4e-2)]
    assert np.log2(errs[0] / errs[1]) >= C.fd_order_min


def test_jacobi_fd_path(O, rng):
    s = O.random_point(rng)
    x, y, z = (v / np.linalg.norm(v) for v in rng.standard_normal((3, 7)))
    assert np.abs(lp.jacobi_residual(O, s, x, y, z, method="fd")).max() < C.jacobi_fd_tol


def test_jacobiator_is_nonzero_and_six_associators(O, rng):
    # for the octonions the plain Jacobiator does not vanish: it is 6 [x, y, z]
    s = O.random_point(rng)
    x, y, z = rng.standard_normal((3, 7))
    jac = lp.jacobiator(O, s, x, y, z)
    assert np.abs(jac).max() > 1e-2
    assert np.abs(jac - 6 * lp.associator(O, s, x, y, z)).max() < 1e-11


def test_quaternion_associator_path_is_zero(Q, rng):
    s = Q.random_point(rng)
    x, y, z = rng.standard_normal((3, 3))
    assert np.abs(lp.associator(Q, s, x, y, z)).max() < 1e-14
    assert np.abs(lp.jacobiator(Q, s, x, y, z)).max() < 1e-13


def test_corrupted_instance_breaks_identities(O, rng):
    bad = lp.corrupted_instance(O)
    s = bad.random_point(rng)
    x, y, z = rng.standard_normal((3, 7))
    assert np.abs(lp.malcev_residual(bad, s, x, y, z)).max() > C.malcev_tol


def test_degenerate_quotient_raises(O):
    with pytest.raises(oc.DegenerateDivisor):
        lp.mod_rquot(O, O.one(), np.zeros(8), O.one())


# ---- properties ----------------------------------------------------------


@given(unit_points(8), vectors(7), vectors(7))
def test_bracket_is_antisymmetric(s, x, y):
    O = lp.get_instance("octonion")
    b1, b2 = lp.bracket(O, s, x, y), lp.bracket(O, s, y, x)
    assert rel(b1 + b2, np.linalg.norm(x) * np.linalg.norm(y)) < C.antisym_tol


@given(unit_points(8), vectors(7), vectors(7), vectors(7))
def test_generalized_jacobi_identity(s, x, y, z):
    O = lp.get_instance("octonion")
    scale = np.linalg.norm(x) * np.linalg.norm(y) * np.linalg.norm(z)
    assert rel(lp.jacobi_residual(O, s, x, y, z), scale) < C.jacobi_exact_tol


@given(unit_points(8), vectors(7), vectors(7), vectors(7))
def test_malcev_identity(s, x, y, z):
    O = lp.get_instance("octonion")
    scale = np.linalg.norm(x) ** 2 * np.linalg.norm(y) * np.linalg.norm(z)
    assert rel(lp.malcev_residual(O, s, x, y, z), scale) < C.malcev_tol


@given(unit_points(8), vectors(7), vectors(7), vectors(7))
def test_ad_is_killing_skew(s, g, x, y):
    O = lp.get_instance("octonion")
    scale = np.linalg.norm(g) * np.linalg.norm(x) * np.linalg.norm(y)
    assert abs(lp.ad_skew_residual(O, s, g, x, y)) / max(1.0, scale) < C.ad_skew_tol


@given(unit_points(8))
def test_killing_form_independent_of_base_point(s):
    O = lp.get_instance("octonion")
    assert np.abs(lp.killing_form(O, s) - C.killing_scale * np.eye(7)).max() < C.killing_tol


@given(unit_points(8), unit_points(8), vectors(7), vectors(7))
def test_bracket_transport(s, p, x, y):
    O = lp.get_instance("octonion")
    scale = np.linalg.norm(x) * np.linalg.norm(y)
    assert rel(lp.bracket_transport_residual(O, s, p, x, y), scale) < C.transport_tol


@given(unit_points(8), unit_points(8), unit_points(8), unit_points(8))
def test_modified_product_under_base_change(p, q, r, A):
    O = lp.get_instance("octonion")
    assert np.abs(lp.modified_product_residual(O, p, q, r, A)).max() < C.arprod_tol


@given(unit_points(8), vectors(7), vectors(7), vectors(7))
def test_left_alternating_associator_totally_antisymmetric_at_identity(s, x, y, z):
    # at s = 1 the associator of an alternative algebra is totally skew
    O = lp.get_instance("octonion")
    one = O.one()
    a = lambda u, v, w: lp.left_alt_associator(O, one, u, v, w)
    scale = np.linalg.norm(x) * np.linalg.norm(y) * np.linalg.norm(z)
    assert rel(a(x, y, z) + a(x, z, y), scale) < C.total_antisym_tol
    assert rel(a(x, y, z) - a(y, z, x), scale) < C.total_antisym_tol


@settings(max_examples=20)
@given(unit_points(8), st.integers(0, 2**31))
def test_phi_decomposition_rank_at_random_points(s, seed):
    O = lp.get_instance("octonion")
    D = lp.phi_decomposition(O, s)
    assert (D.rank, D.kernel_dim) == (7, 14)


@settings(max_examples=20)
@given(unit_points(8), vectors(21), vectors(21))
def test_phi_equivariance(s, a, g):
    O = lp.get_instance("octonion")
    H = expm(O.p_matrix(0.3 * a))
    assert np.abs(lp.phi_equivariance_residual(O, s, H, g)).max() / max(1, np.linalg.norm(g)) < C.phi_equivariance_tol


@settings(max_examples=20)
@given(unit_points(8), vectors(21), vectors(7), vectors(7))
def test_partial_action_bracket_identity(s, g, x, y):
    O = lp.get_instance("octonion")
    scale = np.linalg.norm(g) * np.linalg.norm(x) * np.linalg.norm(y)
    assert rel(lp.xi_bracket_residual(O, s, g, x, y), scale) < C.phi_identity_assoc_tol


@settings(max_examples=20)
@given(unit_points(8), vectors(21), vectors(21))
def test_phi_bracket_identity(s, a, b):
    O = lp.get_instance("octonion")
    scale = np.linalg.norm(a) * np.linalg.norm(b)
    assert rel(lp.xi_phi_residual(O, s, a, b), scale) < C.phi_identity_assoc_tol


@settings(max_examples=20)
@given(vectors(21), st.integers(0, 2**31))
def test_pseudo_automorphism_law(a, seed):
    O = lp.get_instance("octonion")
    rng = np.random.default_rng(seed)
    H = expm(O.p_matrix(0.3 * a))
    p, q = rng.standard_normal((2, C.pseudo_auto_pairs, 8))
    assert lp.pseudo_automorphism_residual(O, H, p, q) < C.pseudo_auto_tol


@settings(max_examples=20)
@given(unit_points(8), unit_points(8), vectors(7))
def test_ad_exact_matches_fd(s, A, eta):
    O = lp.get_instance("octonion")
    exact = lp.Ad(O, s, A, eta)
    fd = lp.Ad(O, s, A, eta, method="fd")
    assert rel(exact - fd, np.linalg.norm(eta)) < 1e-7
