"""G2-structures on flat 7-tori.

3-forms and 4-forms are stored by their 35 independent components, indexed
by sorted index triples / quadruples (lexicographic order), with the
component axis last.  Pointwise contractions go through precomputed signed
index tables so that fields on 4^7 grids stay small.
"""

from itertools import combinations, permutations

import numpy as np

from . import coulomb as cs
from . import fields as fl
from . import loops as lp
from . import octonion as oc
from .constants import CONSTANTS

TRIPLES = list(combinations(range(7), 3))
QUADS = list(combinations(range(7), 4))
TRIPLE_INDEX = {t: i for i, t in enumerate(TRIPLES)}
QUAD_INDEX = {q: i for i, q in enumerate(QUADS)}


def _sort_sign(idx):
    """(sorted tuple, sign of the sorting permutation), sign 0 on repeats."""
    idx = list(idx)
    if len(set(idx)) < len(idx):
        return None, 0
    sign = 1
    arr = idx[:]
    for i in range(len(arr)):
        for j in range(len(arr) - 1 - i):
            if arr[j] > arr[j + 1]:
                arr[j], arr[j + 1] = arr[j + 1], arr[j]
                sign = -sign
    return tuple(arr), sign


def _complement_sign(first, second):
    _, sg = _sort_sign(tuple(first) + tuple(second))
    return sg


# Hodge dual tables for the Euclidean metric: (*phi)_J = sign(I, J) phi_I, I = complement of J.
_STAR3 = [(TRIPLE_INDEX[tuple(sorted(set(range(7)) - set(q)))],
           _complement_sign(tuple(sorted(set(range(7)) - set(q))), q)) for q in QUADS]
_STAR4 = [(QUAD_INDEX[tuple(sorted(set(range(7)) - set(t)))],
           _complement_sign(tuple(sorted(set(range(7)) - set(t))), t)) for t in TRIPLES]


def to_full3(c):
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.shape[:-1] + (7, 7, 7))
    for n, t in enumerate(TRIPLES):
        for p in permutations(range(3)):
            _, sg = _sort_sign([p[0], p[1], p[2]])
            out[(...,) + tuple(t[k] for k in p)] = sg * c[..., n]
    return out


def from_full3(f):
    return np.stack([f[(...,) + t] for t in TRIPLES], axis=-1)


def to_full4(c):
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.shape[:-1] + (7, 7, 7, 7))
    for n, q in enumerate(QUADS):
        for p in permutations(range(4)):
            _, sg = _sort_sign(list(p))
            out[(...,) + tuple(q[k] for k in p)] = sg * c[..., n]
    return out


def from_full4(f):
    return np.stack([f[(...,) + q] for q in QUADS], axis=-1)


PHI0 = from_full3(oc.PHI0)


def _is_identity(g, tol=1e-12):
    return g is None or np.abs(np.asarray(g) - np.eye(7)).max() <= tol


def hodge3(phi, g=None):
    """psi = *phi for a 3-form (35 components); metric g (…, 7, 7) or identity."""
    phi = np.asarray(phi, dtype=float)
    if _is_identity(g):
        idx = np.array([i for i, _ in _STAR3])
        sg = np.array([s for _, s in _STAR3], dtype=float)
        return phi[..., idx] * sg
    gi = np.linalg.inv(g)
    full = to_full3(phi)
    up = np.einsum("...ia,...jb,...kc,...abc->...ijk", gi, gi, gi, full)
    vol = np.sqrt(np.linalg.det(g))
    idx = np.array([i for i, _ in _STAR3])
    sg = np.array([s for _, s in _STAR3], dtype=float)
    return vol[..., None] * from_full3(up)[..., idx] * sg


def hodge4(psi, g=None):
    psi = np.asarray(psi, dtype=float)
    if _is_identity(g):
        idx = np.array([i for i, _ in _STAR4])
        sg = np.array([s for _, s in _STAR4], dtype=float)
        return psi[..., idx] * sg
    gi = np.linalg.inv(g)
    full = to_full4(psi)
    up = np.einsum("...ia,...jb,...kc,...ld,...abcd->...ijkl", gi, gi, gi, gi, full)
    vol = np.sqrt(np.linalg.det(g))
    idx = np.array([i for i, _ in _STAR4])
    sg = np.array([s for _, s in _STAR4], dtype=float)
    return vol[..., None] * from_full4(up)[..., idx] * sg


PSI0 = hodge3(PHI0)


# B_phi(e_i, e_j) = (1/6) sum over ordered partitions (A, B, C) of {0..6} into a
# pair, a pair and a triple: sign * phi_{iA} phi_{jB} phi_C * (2 * 2 * 6) / (2! 2! 3!)
def _partition_table():
    rows = []
    for A in combinations(range(7), 2):
        rest = [x for x in range(7) if x not in A]
        for B in combinations(rest, 2):
            C = tuple(x for x in rest if x not in B)
            rows.append((A, B, C, _sort_sign(A + B + C)[1]))
    return rows


_PARTS = _partition_table()


def b_matrix(phi, chunk=4096):
    """Matrix B_ij of 7-form coefficients of (1/6)(e_i _| phi)^(e_j _| phi)^phi."""
    phi = np.asarray(phi, dtype=float)
    lead = phi.shape[:-1]
    flat = phi.reshape(-1, 35)
    out = np.empty((flat.shape[0], 7, 7))
    A = [p[0] for p in _PARTS]
    B = [p[1] for p in _PARTS]
    C = np.array([TRIPLE_INDEX[p[2]] for p in _PARTS])
    sg = np.array([p[3] for p in _PARTS], dtype=float)
    for lo in range(0, flat.shape[0], chunk):
        full = to_full3(flat[lo:lo + chunk])
        X = np.stack([full[:, :, a[0], a[1]] for a in A], axis=-1)  # (p, 7, 210)
        Y = np.stack([full[:, :, b[0], b[1]] for b in B], axis=-1)
        Z = flat[lo:lo + chunk][:, C] * sg
        # weight: 4 orderings of the pairs, 6 of the triple, over 144
        out[lo:lo + chunk] = np.einsum("pie,pje,pe->pij", X, Y, Z) * (24.0 / 144.0)
    return out.reshape(lead + (7, 7))


def b_phi(phi, u, v):
    return np.einsum("...i,...ij,...j->...", u, b_matrix(phi), v)


def metric_from_phi(phi, check=True):
    """g = det(B)^(-1/9) B; verifies g sqrt(det g) = B."""
    B = b_matrix(phi)
    w = np.linalg.eigvalsh(B)
    if np.any(w <= 0):
        raise ValueError("3-form is not positive (B_phi not positive-definite)")
    det = np.linalg.det(B)
    g = B * (det ** (-1.0 / 9.0))[..., None, None]
    if check:
        resid = np.abs(g * np.sqrt(np.linalg.det(g))[..., None, None] - B).max()
        if resid > 1e-10 * max(1.0, np.abs(B).max()):
            raise ArithmeticError(f"metric normalization failed ({resid:.3e})")
    return g


# ---------------------------------------------------------------------------
# isometric family


def interior3(alpha, phi):
    """(alpha _| phi)_cd as a full antisymmetric 7x7 array."""
    return np.einsum("...a,...acd->...cd", alpha, to_full3(phi))


def interior4(alpha, psi):
    """(alpha _| psi)_bcd in 35 components."""
    full = to_full4(psi)
    return from_full3(np.einsum("...a,...abcd->...bcd", alpha, full))


def wedge_1_2(alpha, beta):
    """(alpha ^ beta)_bcd for a 1-form and a full 2-form, in 35 components."""
    out = np.empty(np.broadcast_shapes(alpha.shape[:-1], beta.shape[:-2]) + (35,))
    for n, (b, c, d) in enumerate(TRIPLES):
        out[..., n] = (alpha[..., b] * beta[..., c, d] + alpha[..., c] * beta[..., d, b]
                       + alpha[..., d] * beta[..., b, c])
    return out


def sigma_A(phi, V, g=None):
    """(a^2 - |alpha|^2) phi - 2 a alpha _| (*phi) + 2 alpha ^ (alpha _| phi)."""
    phi = np.asarray(phi, dtype=float)
    V = np.asarray(V, dtype=float)
    a = V[..., 0]
    al = V[..., 1:]
    al_low = al if _is_identity(g) else np.einsum("...ij,...j->...i", g, al)
    norm2 = np.sum(al * al_low, axis=-1)
    drift = np.abs(np.sqrt(a * a + norm2) - 1.0).max()
    if drift > CONSTANTS.field_unit_drift:
        raise ValueError(f"octonion section not unit (drift {drift:.3e})")
    phi_b = np.broadcast_to(phi, np.broadcast_shapes(phi.shape, al.shape[:-1] + (35,)))
    psi = hodge3(phi_b, g)
    term1 = (a * a - norm2)[..., None] * phi_b
    term2 = -2.0 * a[..., None] * interior4(al, psi)
    term3 = 2.0 * wedge_1_2(al_low, interior3(al, phi_b))
    return term1 + term2 + term3


# ---------------------------------------------------------------------------
# torsion on the flat torus


def _psi_up_table():
    """For each (m, triple I): index J of the sorted quad {m} u I and sign, or (-1, 0)."""
    idx = np.full((7, 35), 0)
    sg = np.zeros((7, 35))
    for m in range(7):
        for n, t in enumerate(TRIPLES):
            q, s = _sort_sign((m,) + t)
            if s:
                idx[m, n] = QUAD_INDEX[q]
                sg[m, n] = s
    return idx, sg


_PSI_UP_IDX, _PSI_UP_SG = _psi_up_table()


def _psi_m_triple(psi):
    """psi_{m I} arranged as (..., 7, 35) for sorted triples I."""
    return psi[..., _PSI_UP_IDX] * _PSI_UP_SG


def _check_flat_metric(phi):
    g = metric_from_phi(phi.reshape(-1, 35)[:: max(1, phi.reshape(-1, 35).shape[0] // 256)])
    if np.abs(g - np.eye(7)).max() > 1e-10:
        raise NotImplementedError("torsion fast path needs g_phi = identity")


def g2_torsion(grid, phi, check_metric=True):
    """T_{a m} = -(1/48) d_a phi_bcd psi^{m bcd} on a flat 7-torus with g_phi = I.

    Returns (T, residual) with T of shape (7, *sizes, 7) (form index a first)
    and the residual d_a phi_bcd + 2 T_a^e psi_ebcd in 35 components.
    """
    if grid.n != 7:
        raise ValueError("G2 torsion needs a 7-dimensional grid")
    if check_metric:
        _check_flat_metric(phi)
    psi = hodge3(phi)
    pm = _psi_m_triple(psi)  # (..., 7, 35)
    T = np.empty((7,) + grid.sizes + (7,))
    resid = np.empty((7,) + grid.sizes + (35,))
    for a in range(7):
        dphi = fl.partial(phi, grid, a)
        # sum over ordered bcd = 6 * sum over sorted triples
        T[a] = -(6.0 / 48.0) * np.einsum("...n,...mn->...m", dphi, pm)
        resid[a] = dphi + 2.0 * np.einsum("...e,...en->...n", T[a], pm)
    return T, resid


def psi_torsion_residual(grid, phi, T):
    """d_a psi_bcde - 8 T_{a[b} phi_{cde]} in 35 components per form index a."""
    psi = hodge3(phi)
    out = np.empty((7,) + grid.sizes + (35,))
    for a in range(7):
        dpsi = fl.partial(psi, grid, a)
        rhs = np.empty_like(dpsi)
        for n, (b, c, d, e) in enumerate(QUADS):
            rhs[..., n] = 2.0 * (
                T[a][..., b] * phi[..., TRIPLE_INDEX[(c, d, e)]]
                - T[a][..., c] * phi[..., TRIPLE_INDEX[(b, d, e)]]
                + T[a][..., d] * phi[..., TRIPLE_INDEX[(b, c, e)]]
                - T[a][..., e] * phi[..., TRIPLE_INDEX[(b, c, d)]]
            )
        out[a] = dpsi - rhs
    return out


def div_torsion(grid, T):
    """(div T)_m = sum_a d_a T_{a m} with the flat metric."""
    return sum(fl.partial(T[a], grid, a) for a in range(grid.n))


# Correspondence between the G2 torsion of sigma_V(phi0) and the octonionic
# torsion T^(V) = (dV) V^{-1}: T_G2 = G2_FROM_OCTONION * T_oct, fixed by the
# dual-pipeline test (tests/test_g2.py).
G2_FROM_OCTONION = 1.0


def octonion_to_g2_torsion(T_oct):
    return G2_FROM_OCTONION * np.asarray(T_oct)


# ---------------------------------------------------------------------------
# Coulomb solve through the octonion machinery


def g2_coulomb_solve(grid, V0, projector=None, **problem_kw):
    """Divergence-free torsion for the isometric family of sigma_V(phi0)."""
    L = lp.get_instance("octonion")
    problem_kw.setdefault("residual", "direct")
    problem = cs.GaugeProblem(L, grid, V0, None, **problem_kw)
    xi, A, report = cs.newton_solve(problem, projector)
    V = L.mul(A, V0)
    phi = sigma_A(PHI0, V)
    T_g2, _ = g2_torsion(grid, phi)
    div_g2 = div_torsion(grid, T_g2)
    T_oct = fl.torsion(L, grid, V)
    div_oct = -fl.codifferential(L, grid, None, octonion_to_g2_torsion(T_oct))
    T0_g2, _ = g2_torsion(grid, sigma_A(PHI0, V0))
    t0 = fl.l2_norm(grid, T0_g2, 1)
    t1 = fl.l2_norm(grid, T_g2, 1)
    k = problem.k
    summary = {
        "div_g2": fl.l2_norm(grid, div_g2, 0),
        "div_octonion": fl.l2_norm(grid, div_oct, 0),
        "dual_pipeline": fl.l2_norm(grid, div_g2 - div_oct, 0),
        "torsion_initial": t0,
        "torsion_final": t1,
        "bound_constant": t1 / (t0 * (1 + t0**k)) if t0 > 0 else 0.0,
    }
    return V, xi, report, summary
