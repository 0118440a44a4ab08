import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopgauge import coulomb as cs
from loopgauge import fields as fl
from loopgauge import g2
from loopgauge.constants import CONSTANTS


def random_unit_octonions(rng, n):
    v = rng.standard_normal((n, 8))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def x0_section(L, N, eps=0.3):
    """Unit octonion section on (N, 4, ..., 4) that varies along the first axis only."""
    grid = fl.TorusGrid.periodic((N,) + (4,) * 6)
    x0 = grid.coords()[0]
    xi = np.zeros(grid.sizes + (7,))
    xi[..., 0] = eps * np.sin(2 * np.pi * x0 / grid.periods[0])
    xi[..., 3] = eps * np.cos(2 * np.pi * x0 / grid.periods[0])
    xi[..., 5] = 0.5 * eps * np.sin(4 * np.pi * x0 / grid.periods[0])
    return grid, L.exp(xi)


# ---------------------------------------------------------------------------
# constant structure


def test_phi0_components():
    assert g2.PHI0.shape == (35,)
    assert np.count_nonzero(g2.PHI0) == 7
    assert g2.PHI0[g2.TRIPLE_INDEX[(0, 1, 2)]] == pytest.approx(1.0)
    assert float(g2.PHI0 @ g2.PHI0) * 6 == pytest.approx(42.0)


def test_metric_of_phi0_is_identity():
    g = g2.metric_from_phi(g2.PHI0)
    assert np.abs(g - np.eye(7)).max() < CONSTANTS.g2_identity_tol


def test_even_axis_relabelling_keeps_identity_metric():
    # cyclic shift of 7 axes is an even permutation
    perm = [1, 2, 3, 4, 5, 6, 0]
    full = g2.to_full3(g2.PHI0)
    shuffled = g2.from_full3(full[np.ix_(perm, perm, perm)])
    g = g2.metric_from_phi(shuffled)
    assert np.abs(g - np.eye(7)).max() < CONSTANTS.g2_identity_tol


def test_b_phi_off_diagonal_vanishes():
    e = np.eye(7)
    assert abs(float(g2.b_phi(g2.PHI0, e[0], e[1]))) < CONSTANTS.g2_identity_tol
    assert float(g2.b_phi(g2.PHI0, e[2], e[2])) == pytest.approx(1.0)


def test_hodge_involution_and_psi0():
    assert np.abs(g2.hodge4(g2.PSI0) - g2.PHI0).max() < CONSTANTS.hodge_tol
    assert 24 * float(g2.PSI0 @ g2.PSI0) == pytest.approx(24 * 7)


def test_contraction_identity():
    phi = g2.to_full3(g2.PHI0)
    psi = g2.to_full4(g2.PSI0)
    d = np.eye(7)
    lhs = np.einsum("ijk,abk->ijab", phi, phi)
    rhs = np.einsum("ia,jb->ijab", d, d) - np.einsum("ib,ja->ijab", d, d) + psi
    assert np.abs(lhs - rhs).max() < 1e-13


def test_hodge_general_metric_involution(rng):
    M = rng.standard_normal((7, 7))
    g = M @ M.T + 7 * np.eye(7)
    omega = rng.standard_normal(35)
    assert np.abs(g2.hodge4(g2.hodge3(omega, g), g) - omega).max() < CONSTANTS.hodge_tol


def test_non_positive_form_raises():
    with pytest.raises(ValueError):
        g2.metric_from_phi(np.eye(35)[0])  # a single decomposable term is degenerate


def test_metric_normalization_postcondition():
    # scaling phi by c^3 scales the metric by c^2
    g = g2.metric_from_phi(8.0 * g2.PHI0)
    assert np.abs(g - 4.0 * np.eye(7)).max() < 1e-12


# ---------------------------------------------------------------------------
# isometric family


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_sigma_of_real_units_is_identity(sign):
    V = np.zeros(8)
    V[0] = sign
    assert np.abs(g2.sigma_A(g2.PHI0, V) - g2.PHI0).max() < 1e-15


def test_sigma_preserves_metric(rng):
    V = random_unit_octonions(rng, 100)
    phis = g2.sigma_A(g2.PHI0, V)
    g = g2.metric_from_phi(phis)
    assert np.abs(g - np.eye(7)).max() < CONSTANTS.g2_metric_invariance_tol


def test_sigma_rejects_non_unit():
    with pytest.raises(ValueError):
        g2.sigma_A(g2.PHI0, np.array([2.0, 0, 0, 0, 0, 0, 0, 0]))


@settings(max_examples=40)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=8, max_size=8))
def test_sigma_is_even_in_V(v):
    v = np.array(v)
    if np.linalg.norm(v) < 1e-3:
        return
    v = v / np.linalg.norm(v)
    assert np.abs(g2.sigma_A(g2.PHI0, v) - g2.sigma_A(g2.PHI0, -v)).max() < 1e-13


def test_sigma_general_metric_consistency(rng):
    # pulling back by a linear map P: sigma with g = P^T P matches the flat answer transported
    V = random_unit_octonions(rng, 1)[0]
    P = np.eye(7) + 0.1 * rng.standard_normal((7, 7))
    Pinv = np.linalg.inv(P)
    pull = g2.from_full3(np.einsum("abc,ai,bj,ck->ijk", g2.to_full3(g2.PHI0), P, P, P))
    g = P.T @ P
    assert np.abs(g2.metric_from_phi(pull) - g).max() < 1e-12
    Vp = V.copy()
    Vp[1:] = Pinv @ V[1:]
    lhs = g2.sigma_A(pull, Vp, g)
    flat = g2.sigma_A(g2.PHI0, V)
    rhs = g2.from_full3(np.einsum("abc,ai,bj,ck->ijk", g2.to_full3(flat), P, P, P))
    assert np.abs(lhs - rhs).max() < 1e-12


# ---------------------------------------------------------------------------
# torsion tensor


def test_constant_phi_has_zero_torsion():
    grid = fl.TorusGrid.periodic((4,) * 7)
    phi = np.broadcast_to(g2.PHI0, grid.sizes + (35,)).copy()
    T, resid = g2.g2_torsion(grid, phi)
    assert np.abs(T).max() == 0 and np.abs(resid).max() == 0


def test_torsion_needs_seven_axes():
    grid = fl.TorusGrid.periodic((8, 8))
    with pytest.raises(ValueError):
        g2.g2_torsion(grid, np.zeros((8, 8, 35)))


def _torsion_residuals(L, N):
    grid, V = x0_section(L, N)
    phi = g2.sigma_A(g2.PHI0, V)
    T, res = g2.g2_torsion(grid, phi)
    rpsi = g2.psi_torsion_residual(grid, phi, T)
    To = fl.torsion(L, grid, V)
    return (fl.l2_norm(grid, res, 1), fl.l2_norm(grid, rpsi, 1),
            fl.l2_norm(grid, T - g2.octonion_to_g2_torsion(To), 1) / fl.l2_norm(grid, To, 1),
            fl.l2_norm(grid, T + To, 1) / fl.l2_norm(grid, To, 1))


@pytest.fixture(scope="module")
def refinement(O):
    return [_torsion_residuals(O, N) for N in (16, 32)]


def test_phi_torsion_identity_converges(refinement):
    (a, _, _, _), (b, _, _, _) = refinement
    assert np.log2(a / b) >= CONSTANTS.field_order_min


def test_psi_torsion_identity_converges(refinement):
    (_, a, _, _), (_, b, _, _) = refinement
    assert np.log2(a / b) >= CONSTANTS.field_order_min


def test_torsion_matches_octonion_side(refinement):
    (_, _, a, flip_a), (_, _, b, flip_b) = refinement
    assert b < 1e-3 and np.log2(a / b) >= CONSTANTS.field_order_min
    # the opposite sign is off by a factor of two, not a discretization error
    assert flip_a > 1.5 and flip_b > 1.5


def test_dual_pipeline_gap_is_quadratic_in_eps(O):
    grid = fl.TorusGrid.periodic((4,) * 7)
    rel = []
    for eps in (0.04, 0.02):
        V = O.exp(cs.perturbation_field(grid, 0, eps))
        T, _ = g2.g2_torsion(grid, g2.sigma_A(g2.PHI0, V))
        dg = g2.div_torsion(grid, T)
        do = -fl.codifferential(O, grid, None, g2.octonion_to_g2_torsion(fl.torsion(O, grid, V)))
        rel.append(fl.l2_norm(grid, dg - do, 0) / fl.l2_norm(grid, do, 0))
    assert 3.0 < rel[0] / rel[1] < 5.0
    assert rel[1] < 1e-3


# ---------------------------------------------------------------------------
# divergence-free solve


def test_identity_section_returns_identity():
    grid = fl.TorusGrid.periodic((4,) * 7)
    V0 = np.broadcast_to(np.eye(8)[0], grid.sizes + (8,)).copy()
    V, xi, rep, summary = g2.g2_coulomb_solve(grid, V0)
    assert rep.iterations == 0
    assert np.abs(V - V0).max() == 0
    assert summary["div_g2"] == 0 and summary["torsion_initial"] == 0


@pytest.mark.slow
def test_g2_solve_on_4_to_the_7(O):
    grid = fl.TorusGrid.periodic((4,) * 7)
    V0 = O.exp(cs.perturbation_field(grid, 0, 0.02))
    V, xi, rep, summary = g2.g2_coulomb_solve(grid, V0)
    assert rep.converged
    assert summary["div_g2"] < CONSTANTS.g2_div_tol
    assert summary["dual_pipeline"] < CONSTANTS.g2_div_tol
    assert summary["torsion_final"] <= summary["torsion_initial"]
    assert np.isfinite(summary["bound_constant"])
    assert np.abs(g2.metric_from_phi(g2.sigma_A(g2.PHI0, V).reshape(-1, 35)[::97]) - np.eye(7)).max() < 1e-12
