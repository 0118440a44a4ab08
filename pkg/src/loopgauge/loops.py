"""Smooth loops of unit elements in a normed division algebra.

A ``LoopInstance`` bundles an algebra product, embedded in R^m with the
real unit at index 0, with a basis of the Lie algebra p of linear maps
acting on the loop.  Tangent vectors at the identity live in
l = Im(A) = R^(m-1).

For a loop point s, the modified product is p o_s q = (p (q s)) / s.  All
algebraic quantities used here (brackets, associators, the map phi_s,
conjugation by A) are derivatives at the identity of expressions that are
multilinear in the ambient algebra, so each has an exact path obtained by
substituting tangent vectors into the multilinear formula.  A
finite-difference path that differentiates along exponential curves is
kept as an independent oracle.
"""

from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Callable

import numpy as np

from . import octonion as oc
from .constants import CONSTANTS


def quat_mul(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    a, al = p[..., :1], p[..., 1:]
    b, be = q[..., :1], q[..., 1:]
    im = a * be + b * al + np.cross(al, be)
    out = np.empty(im.shape[:-1] + (4,))
    out[..., 0] = (a * b)[..., 0] - np.sum(al * be, axis=-1)
    out[..., 1:] = im
    return out


def _left_matrices(mul, m):
    eye = np.eye(m)
    return [np.swapaxes(mul(eye[i][None, :], eye), 0, 1) for i in range(m)]


def commutator_basis(mul, m):
    """Basis {1/2 [L_ei, L_ej]} of p, i < j, with dependent elements dropped."""
    L = _left_matrices(mul, m)
    mats = []
    for i in range(1, m):
        for j in range(i + 1, m):
            g = 0.5 * (L[i] @ L[j] - L[j] @ L[i])
            trial = np.array(mats + [g]).reshape(len(mats) + 1, -1)
            if np.linalg.matrix_rank(trial, tol=1e-10) == len(mats) + 1:
                mats.append(g)
    return np.array(mats)


@dataclass(frozen=True, eq=False)
class LoopInstance:
    name: str
    ambient: int
    mul: Callable
    p_basis: np.ndarray
    alternative: bool
    associative: bool
    # cached derived data
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim_l(self):
        return self.ambient - 1

    @property
    def dim_p(self):
        return self.p_basis.shape[0]

    # ambient algebra helpers
    def conj(self, p):
        p = np.asarray(p, dtype=float)
        out = -p
        out[..., 0] = p[..., 0]
        return out

    def norm2(self, p):
        return np.sum(np.asarray(p) ** 2, axis=-1)

    def inv(self, p):
        return self.conj(p) / oc.divisor_norm2(p)

    def rquot(self, p, q):
        return self.mul(p, self.conj(q)) / oc.divisor_norm2(q)

    def embed(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1] + (self.ambient,))
        out[..., 1:] = xi
        return out

    def to_tangent(self, v):
        return np.asarray(v)[..., 1:]

    def one(self, shape=()):
        out = np.zeros(tuple(shape) + (self.ambient,))
        out[..., 0] = 1.0
        return out

    def exp(self, xi):
        """Closed-form exponential cos|xi| + sin|xi| xi/|xi|."""
        xi = np.asarray(xi, dtype=float)
        r = np.sqrt(np.sum(xi * xi, axis=-1))
        out = np.empty(xi.shape[:-1] + (self.ambient,))
        out[..., 0] = np.cos(r)
        out[..., 1:] = np.sinc(r / np.pi)[..., None] * xi
        return out

    def normalize(self, p):
        return p / np.sqrt(self.norm2(p))[..., None]

    def random_point(self, rng, shape=()):
        x = rng.standard_normal(tuple(shape) + (self.ambient,))
        return self.normalize(x)

    @property
    def structure(self):
        """C[i, j, k] = (e_i e_j)_k."""
        if "C" not in self._cache:
            eye = np.eye(self.ambient)
            self._cache["C"] = self.mul(eye[:, None, :], eye[None, :, :])
        return self._cache["C"]

    def lmat(self, p):
        """Matrix of x -> p x."""
        return np.einsum("...i,ijk->...kj", p, self.structure)

    def rmat(self, p):
        """Matrix of x -> x p."""
        return np.einsum("...j,ijk->...ki", p, self.structure)

    # Lie algebra p
    @property
    def partial_basis(self):
        """(dim_p, dim_l, dim_l) infinitesimal partial actions gamma'(x) = gamma x - x (gamma 1)."""
        if "partial" not in self._cache:
            mats = []
            eye = np.eye(self.ambient)
            for g in self.p_basis:
                c = g[:, 0]
                full = g - np.swapaxes(self.mul(eye, c[None, :]), 0, 1)
                mats.append(full[1:, 1:])
            self._cache["partial"] = np.array(mats)
        return self._cache["partial"]

    @property
    def partial_basis_full(self):
        """Partial actions as ambient matrices; they annihilate the unit."""
        if "partial_full" not in self._cache:
            out = np.zeros((self.dim_p, self.ambient, self.ambient))
            out[:, 1:, 1:] = self.partial_basis
            self._cache["partial_full"] = out
        return self._cache["partial_full"]

    @property
    def p_gram(self):
        if "gram" not in self._cache:
            B = self.p_basis.reshape(self.dim_p, -1)
            self._cache["gram"] = B @ B.T
        return self._cache["gram"]

    def p_coeffs(self, mats):
        """Coefficients of matrices (..., m, m) in p_basis (least squares)."""
        B = self.p_basis.reshape(self.dim_p, -1)
        rhs = np.asarray(mats).reshape(np.shape(mats)[:-2] + (-1,)) @ B.T
        return np.linalg.solve(self.p_gram, rhs[..., None])[..., 0]

    def p_matrix(self, coeffs):
        return np.einsum("...k,kij->...ij", coeffs, self.p_basis)

    @property
    def p_structure(self):
        """f[i, j, k] with [gamma_i, gamma_j] = sum_k f[i, j, k] gamma_k."""
        if "struct" not in self._cache:
            G = self.p_basis
            comm = np.einsum("iab,jbc->ijac", G, G) - np.einsum("jab,ibc->ijac", G, G)
            self._cache["struct"] = self.p_coeffs(comm)
        return self._cache["struct"]

    def p_bracket(self, a, b):
        return np.einsum("...i,...j,ijk->...k", a, b, self.p_structure)


def octonion_loop():
    return LoopInstance(
        name="octonion",
        ambient=8,
        mul=oc.mul,
        p_basis=commutator_basis(oc.mul, 8),
        alternative=True,
        associative=False,
    )


def quaternion_loop():
    return LoopInstance(
        name="quaternion",
        ambient=4,
        mul=quat_mul,
        p_basis=commutator_basis(quat_mul, 4),
        alternative=True,
        associative=True,
    )


def corrupted_instance(L, i=1, j=2, k=4, delta=1e-3):
    """Copy of L whose product gains delta * p_i q_j e_k (negative control)."""
    base = L.mul

    def mul(p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        out = np.array(base(p, q), dtype=float)
        out[..., k] += delta * p[..., i] * q[..., j]
        return out

    return LoopInstance(
        name=f"{L.name}-corrupted",
        ambient=L.ambient,
        mul=mul,
        p_basis=L.p_basis,
        alternative=L.alternative,
        associative=L.associative,
    )


_INSTANCES = {}


def get_instance(name):
    if name not in _INSTANCES:
        builders = {"octonion": octonion_loop, "quaternion": quaternion_loop}
        if name not in builders:
            raise ValueError(f"unknown loop instance {name!r}")
        _INSTANCES[name] = builders[name]()
    return _INSTANCES[name]


# ---------------------------------------------------------------------------
# modified products and quotients


def mod_product(L, p, q, s):
    """p o_s q = (p (q s)) / s; bilinear in (p, q)."""
    return L.rquot(L.mul(p, L.mul(q, s)), s)


def mod_rquot(L, q, p, s):
    """The unique x with x o_s p = q, namely (q s) / (p s); linear in q."""
    return L.rquot(L.mul(q, s), L.mul(p, s))


def modified_product_residual(L, p, q, r, A):
    """(p o_r (q o_r A)) /_r A - p o_{A r} q."""
    lhs = mod_rquot(L, mod_product(L, p, mod_product(L, q, A, r), r), A, r)
    return lhs - mod_product(L, p, q, L.mul(A, r))


def rho(L, s, p, xi):
    """Right translation differential at 1: xi -> xi o_s p in T_p."""
    return mod_product(L, L.embed(xi), p, s)


def rho_inv(L, s, p, v):
    """Inverse of ``rho``: tangent vector v at p -> element of l."""
    return L.to_tangent(mod_rquot(L, v, p, s))


def rho_s_inv(L, s, v):
    """(rho_s)^{-1}: T_s -> l for the plain product, v -> v / s."""
    return L.to_tangent(L.rquot(v, s))


# ---------------------------------------------------------------------------
# finite-difference machinery


def _mixed_fd(f, nvars, h):
    """Central mixed partial d^n f / dt_1 ... dt_n at 0."""
    total = 0.0
    for signs in iproduct((1.0, -1.0), repeat=nvars):
        total = total + np.prod(signs) * f(*(sg * h for sg in signs))
    return total / (2.0 * h) ** nvars


def _fd(f, nvars, h, richardson):
    d1 = _mixed_fd(f, nvars, h)
    if not richardson:
        return d1
    d2 = _mixed_fd(f, nvars, h / 2)
    return (4.0 * d2 - d1) / 3.0


def _slot_value(L, kind, value, t):
    if kind == "L":
        return np.asarray(value, dtype=float)
    xi = np.asarray(value, dtype=float)
    if t is None:
        return L.embed(xi)
    return L.exp(t * xi)


# ---------------------------------------------------------------------------
# brackets and associators


def bracket(L, s, xi, eta, method="exact", h=None, richardson=True):
    """[xi, eta]^(s) in l."""
    if method == "exact":
        x, y = L.embed(xi), L.embed(eta)
        return L.to_tangent(mod_product(L, x, y, s) - mod_product(L, y, x, s))
    h = CONSTANTS.fd_step_bracket if h is None else h

    def f(t, u):
        a = mod_product(L, L.exp(t * np.asarray(xi)), L.exp(u * np.asarray(eta)), s)
        b = mod_product(L, L.exp(u * np.asarray(eta)), L.exp(t * np.asarray(xi)), s)
        return a - b

    return L.to_tangent(_fd(f, 2, h, richardson))


def mixed_associator(L, s, x, y, z, kinds="lll", method="exact", h=None, richardson=True):
    """[x, y, z]^(s) = x o_s (y o_s z) - (x o_s y) o_s z.

    ``kinds`` marks each slot as a tangent vector at 1 ('l') or a loop point
    ('L').  The result is a tangent vector at the product of the loop-point
    slots, returned in ambient coordinates; for all-tangent input it is
    projected to l.
    """
    args = (x, y, z)
    tangent_slots = [i for i, k in enumerate(kinds) if k == "l"]

    def assoc(vals):
        a, b, c = vals
        return mod_product(L, a, mod_product(L, b, c, s), s) - mod_product(
            L, mod_product(L, a, b, s), c, s
        )

    if method == "exact" or not tangent_slots:
        vals = [_slot_value(L, k, v, None) for k, v in zip(kinds, args)]
        out = assoc(vals)
    else:
        h = CONSTANTS.fd_step_associator if h is None else h

        def f(*ts):
            it = iter(ts)
            vals = [
                _slot_value(L, k, v, next(it) if k == "l" else None)
                for k, v in zip(kinds, args)
            ]
            return assoc(vals)

        out = _fd(f, len(tangent_slots), h, richardson)
    if kinds == "lll":
        return L.to_tangent(out)
    return out


def associator(L, s, x, y, z, method="exact", h=None, richardson=True):
    return mixed_associator(L, s, x, y, z, "lll", method, h, richardson)


def left_alt_associator(L, s, x, y, z, kinds="lll", **kw):
    """a_s(x, y, z) = [x, y, z] - [y, x, z]."""
    swapped = kinds[1] + kinds[0] + kinds[2]
    return mixed_associator(L, s, x, y, z, kinds, **kw) - mixed_associator(
        L, s, y, x, z, swapped, **kw
    )


def bracket_tensor(L, s):
    """b[k, i, j] = ([e_i, e_j]^(s))_k; ``s`` may carry leading axes."""
    s = np.asarray(s, dtype=float)
    n = L.dim_l
    E = np.eye(n)
    ss = s[..., None, None, :]
    b = bracket(L, ss, E[:, None, :], E[None, :, :])  # (..., i, j, k)
    return np.moveaxis(b, -1, -3)


def ad_matrix(L, s, xi):
    """Matrix of ad_xi^(s) = [xi, .]^(s); broadcasts over leading axes."""
    s = np.asarray(s, dtype=float)
    x = L.embed(xi)
    # eta -> ((xi (eta s)) - (eta (xi s))) / s, assembled from L/R matrices
    M = L.lmat(x) @ L.rmat(s) - L.rmat(L.mul(x, s))
    M = L.rmat(L.conj(s)) @ M / L.norm2(s)[..., None, None]
    return M[..., 1:, 1:]


def killing_form(L, s):
    b = bracket_tensor(L, s)
    return np.einsum("kil,ljk->ij", b, b)


def jacobiator(L, s, xi, eta, gam, **kw):
    br = lambda a, b: bracket(L, s, a, b, **kw)
    return br(xi, br(eta, gam)) + br(eta, br(gam, xi)) + br(gam, br(xi, eta))


def jacobi_residual(L, s, xi, eta, gam, **kw):
    """Jacobiator minus the cyclic sum of left-alternating associators."""
    kw_assoc = dict(kw)
    kw_br = dict(kw)
    if kw.get("method") == "fd":
        kw_assoc.setdefault("h", CONSTANTS.fd_step_associator)
        kw_br["h"] = kw.get("h_bracket", CONSTANTS.fd_step_bracket)
        kw_br.pop("h_bracket", None)
        kw_assoc.pop("h_bracket", None)
    jac = jacobiator(L, s, xi, eta, gam, **kw_br)
    cyc = (
        left_alt_associator(L, s, xi, eta, gam, **kw_assoc)
        + left_alt_associator(L, s, eta, gam, xi, **kw_assoc)
        + left_alt_associator(L, s, gam, xi, eta, **kw_assoc)
    )
    return jac - cyc


def malcev_residual(L, s, xi, eta, gam, **kw):
    """[xi, gam, [xi, eta]] - [[xi, gam, eta], xi]."""
    lhs = associator(L, s, xi, gam, bracket(L, s, xi, eta, **kw), **kw)
    rhs = bracket(L, s, associator(L, s, xi, gam, eta, **kw), xi, **kw)
    return lhs - rhs


def ad_skew_residual(L, s, gam, xi, eta):
    K = killing_form(L, s)
    a = bracket(L, s, gam, xi)
    b = bracket(L, s, gam, eta)
    return a @ K @ eta + xi @ K @ b


def bracket_transport_residual(L, s, p, xi, eta):
    """[xi, eta]^(p s) - [xi, eta]^(s) - rho_p^(s)^{-1} a_s(xi, eta, p)."""
    ps = L.mul(p, s)
    a = left_alt_associator(L, s, xi, eta, p, kinds="llL")
    return bracket(L, ps, xi, eta) - bracket(L, s, xi, eta) - rho_inv(L, s, p, a)


def Ad(L, s, A, eta, method="exact", h=None):
    """Ad_A^(s) eta, the derivative of r -> (A o_s r) /_s A at r = 1."""
    A = np.asarray(A, dtype=float)
    if method == "exact":
        v = mod_product(L, A, L.embed(eta), s)
        return L.to_tangent(mod_rquot(L, v, A, s))
    h = CONSTANTS.fd_step_first if h is None else h
    eta = np.asarray(eta, dtype=float)

    def conjf(t):
        return mod_rquot(L, mod_product(L, A, L.exp(t * eta), s), A, s)

    return L.to_tangent((conjf(h) - conjf(-h)) / (2 * h))


def Ad_matrix(L, s, A):
    E = np.eye(L.dim_l)
    A = np.asarray(A, dtype=float)
    s = np.asarray(s, dtype=float)
    cols = Ad(L, s[..., None, :], A[..., None, :], E)
    return np.swapaxes(cols, -1, -2)


# ---------------------------------------------------------------------------
# the map phi_s : p -> l


def phi_s(L, s, gamma):
    """phi_s(gamma) = (gamma s) / s projected to l; gamma given by p-coefficients."""
    M = L.p_matrix(gamma)
    v = np.einsum("...ij,...j->...i", M, s)
    return rho_s_inv(L, s, v)


def phi_s_matrix(L, s):
    """(dim_l, dim_p) matrix of phi_s."""
    E = np.eye(L.dim_p)
    s = np.asarray(s, dtype=float)
    cols = phi_s(L, s[..., None, :], E)
    return np.swapaxes(cols, -1, -2)


@dataclass
class PhiDecomposition:
    rank: int
    kernel_dim: int
    singular_values: np.ndarray
    kernel_basis: np.ndarray  # (kernel_dim, dim_p)


def phi_decomposition(L, s, tol=None):
    tol = CONSTANTS.rank_tol if tol is None else tol
    M = phi_s_matrix(L, s)
    U, S, Vt = np.linalg.svd(M)
    rank = int(np.sum(S > tol * max(S.max(), 1.0)))
    return PhiDecomposition(rank, L.dim_p - rank, S, Vt[rank:])


def partial_action_matrix(L, H):
    """Restriction to l of h' = R_{h(1)}^{-1} h, for an ambient matrix H."""
    H = np.asarray(H, dtype=float)
    c = H[..., :, 0]
    cinv = L.inv(c)
    # columns: h'(e_j) = h(e_j) c^{-1}
    cols = L.mul(np.swapaxes(H, -1, -2), cinv[..., None, :])
    full = np.swapaxes(cols, -1, -2)
    return full[..., 1:, 1:]


def pseudo_automorphism_residual(L, H, p, q):
    """|h(p q) - h'(p) h(q)| where h' = R_{h(1)}^{-1} h."""
    H = np.asarray(H, dtype=float)
    hp = L.mul(p @ H.T, L.inv(H[:, 0]))
    return np.abs((L.mul(p, q)) @ H.T - L.mul(hp, q @ H.T)).max()


def partial_action(L, gamma, chi):
    """Infinitesimal partial action of gamma in p (coefficients) on chi in l."""
    return np.einsum("...k,kij,...j->...i", gamma, L.partial_basis, chi)


def phi_equivariance_residual(L, s, H, gamma):
    """phi_{h(s)}(Ad_h gamma) - h'_* phi_s(gamma)."""
    Hinv = np.linalg.inv(H)
    adg = L.p_coeffs(H @ L.p_matrix(gamma) @ Hinv)
    lhs = phi_s(L, H @ s, adg)
    rhs = partial_action_matrix(L, H) @ phi_s(L, s, gamma)
    return lhs - rhs


def xi_bracket_residual(L, s, gamma, eta, zeta):
    """gamma . [eta, zeta] - [gamma . eta, zeta] - [eta, gamma . zeta] - a_s(eta, zeta, phi_s(gamma))."""
    act = lambda v: partial_action(L, gamma, v)
    ph = phi_s(L, s, gamma)
    lhs = act(bracket(L, s, eta, zeta))
    rhs = (
        bracket(L, s, act(eta), zeta)
        + bracket(L, s, eta, act(zeta))
        + left_alt_associator(L, s, eta, zeta, ph)
    )
    return lhs - rhs


def xi_phi_residual(L, s, a, b):
    """a . phi_s(b) - b . phi_s(a) - phi_s([a, b]_p) - [phi_s(a), phi_s(b)]^(s)."""
    pa, pb = phi_s(L, s, a), phi_s(L, s, b)
    lhs = partial_action(L, a, pb) - partial_action(L, b, pa)
    return lhs - phi_s(L, s, L.p_bracket(a, b)) - bracket(L, s, pa, pb)


def sup_bracket_norm(L, points, restarts=4, iters=60, rng=None):
    """Estimate sup over the given loop points of the operator norm of b_s.

    For each point, maximizes |[x, y]^(s)| over unit x, y by alternating
    power iteration from a few random starts.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    points = np.atleast_2d(points)
    best = 0.0
    n = L.dim_l
    for s in points:
        b = bracket_tensor(L, s)
        for _ in range(restarts):
            x = rng.standard_normal(n)
            x /= np.linalg.norm(x)
            val = 0.0
            for _ in range(iters):
                M = np.einsum("kij,i->kj", b, x)
                u, sv, vt = np.linalg.svd(M)
                y = vt[0]
                z = u[:, 0]
                x = np.einsum("kij,k,j->i", b, z, y)
                nx = np.linalg.norm(x)
                if nx == 0:
                    break
                x /= nx
                val = sv[0]
            best = max(best, val)
    return best
