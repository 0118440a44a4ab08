"""Fields on flat periodic grids and the covariant calculus acting on them.

Array layout (all float64, C order):

* scalar field          ``(*sizes,)``
* loop field            ``(*sizes, m)``            m = ambient dimension
* l-valued 0-form       ``(*sizes, dim_l)``
* l-valued 1-form       ``(n, *sizes, dim_l)``
* l-valued 2-form       ``(n, n, *sizes, dim_l)``  antisymmetric in (a, b)
* p-valued 1-form       ``(n, *sizes, dim_p)``     connection coefficients
* p-valued 2-form       ``(n, n, *sizes, dim_p)``

Derivatives are 4th-order central differences with periodic wrap.  The
codifferential is the exact discrete adjoint of ``cov_d`` for the grid L2
inner product.
"""

from dataclasses import dataclass, field

import numpy as np

from . import loops as lp
from . import evolution as ev
from .constants import CONSTANTS


@dataclass(frozen=True)
class TorusGrid:
    sizes: tuple
    spacing: tuple
    metric: tuple = None  # diagonal entries g_aa, default Euclidean

    def __post_init__(self):
        sizes = tuple(int(v) for v in self.sizes)
        spacing = tuple(float(v) for v in self.spacing)
        if len(sizes) != len(spacing):
            raise ValueError("sizes and spacing differ in length")
        if not 1 <= len(sizes) <= 7:
            raise ValueError("grid dimension must lie in [1, 7]")
        if min(sizes) < 4:
            raise ValueError("central stencils need at least 4 points per axis")
        metric = (1.0,) * len(sizes) if self.metric is None else tuple(float(g) for g in self.metric)
        if len(metric) != len(sizes) or min(metric) <= 0:
            raise ValueError("metric must be positive diagonal")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "metric", metric)

    @classmethod
    def periodic(cls, sizes, period=2 * np.pi, metric=None):
        sizes = tuple(sizes)
        periods = np.broadcast_to(period, (len(sizes),))
        return cls(sizes, tuple(p / n for p, n in zip(periods, sizes)), metric)

    @property
    def n(self):
        return len(self.sizes)

    @property
    def periods(self):
        return tuple(n * h for n, h in zip(self.sizes, self.spacing))

    @property
    def npoints(self):
        return int(np.prod(self.sizes))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing) * np.sqrt(np.prod(self.metric)))

    @property
    def volume(self):
        return self.cell_volume * self.npoints

    @property
    def inv_metric(self):
        return np.array([1.0 / g for g in self.metric])

    def coords(self):
        axes = [np.arange(n) * h for n, h in zip(self.sizes, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")


# ---------------------------------------------------------------------------
# derivatives


def partial(f, grid, axis, lead=0):
    """4th-order central derivative along grid axis ``axis``.

    ``lead`` is the number of leading (form-index) axes before the grid axes.
    """
    ax = lead + axis
    h = grid.spacing[axis]
    f1 = np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)
    f2 = np.roll(f, -2, axis=ax) - np.roll(f, 2, axis=ax)
    return (8.0 * f1 - f2) / (12.0 * h)


def grad(f, grid, lead=0):
    return np.stack([partial(f, grid, a, lead) for a in range(grid.n)])


def d_form(f, grid, degree):
    """Exterior derivative of a 0-form or 1-form (fiber axis last)."""
    if degree == 0:
        return grad(f, grid)
    if degree == 1:
        n = grid.n
        out = np.zeros((n,) + f.shape)
        for a in range(n):
            for b in range(n):
                if a != b:
                    out[a, b] = partial(f[b], grid, a)
        return out - np.swapaxes(out, 0, 1)
    raise ValueError("degree must be 0 or 1")


# ---------------------------------------------------------------------------
# connection actions


def omega_partial_mats(L, omega):
    """Per-axis pointwise so(l) matrices of the partial action, (n, *sizes, l, l)."""
    return np.einsum("a...k,kij->a...ij", omega, L.partial_basis)


def omega_full_mats(L, omega):
    """Per-axis pointwise matrices of the full action on the loop, (n, *sizes, m, m)."""
    return np.einsum("a...k,kij->a...ij", omega, L.p_basis)


def _act(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def cov_d(L, grid, omega, chi, degree):
    """d^omega chi = d chi + omega ^* chi (partial action on l)."""
    dchi = d_form(chi, grid, degree)
    if omega is None:
        return dchi
    W = omega_partial_mats(L, omega)
    if degree == 0:
        return dchi + _act(W, chi[None])
    n = grid.n
    wc = np.einsum("a...ij,b...j->ab...i", W, chi)
    return dchi + wc - np.swapaxes(wc, 0, 1)


def codifferential(L, grid, omega, chi):
    """(d^omega)^* of an l-valued 1-form: -sum_a g^aa (d_a chi_a + omega_a * chi_a)."""
    gi = grid.inv_metric
    out = np.zeros(chi.shape[1:])
    W = omega_partial_mats(L, omega) if omega is not None else None
    for a in range(grid.n):
        term = partial(chi[a], grid, a)
        if W is not None:
            term = term + _act(W[a], chi[a])
        out -= gi[a] * term
    return out


def laplacian(L, grid, omega, xi):
    return codifferential(L, grid, omega, cov_d(L, grid, omega, xi, 0))


def nabla(L, grid, omega, t, lead):
    """Covariant derivative of an l-valued tensor with ``lead`` leading index axes.

    The new derivative index is prepended; the base connection is flat.
    """
    n = grid.n
    out = np.stack([partial(t, grid, a, lead) for a in range(n)])
    if omega is not None:
        W = omega_partial_mats(L, omega)
        expand = (slice(None),) + (None,) * lead
        out = out + np.einsum("a...ij,a...j->a...i", W[expand], t[None])
    return out


# ---------------------------------------------------------------------------
# inner products and norms


def pointwise_norm2(grid, t, lead):
    """Squared fiber norm with metric weights on each of the ``lead`` form indices."""
    gi = grid.inv_metric
    val = np.sum(t * t, axis=-1)
    for _ in range(lead):
        w = gi.reshape((-1,) + (1,) * (val.ndim - 1))
        val = np.sum(w * val, axis=0)
    return val


def l2_inner(grid, f, g, lead):
    gi = grid.inv_metric
    val = np.sum(f * g, axis=-1)
    for _ in range(lead):
        w = gi.reshape((-1,) + (1,) * (val.ndim - 1))
        val = np.sum(w * val, axis=0)
    return float(np.sum(val) * grid.cell_volume)


def form_inner(grid, f, g, degree):
    """L2 inner product of l-valued forms; 2-forms summed over a < b."""
    val = l2_inner(grid, f, g, degree)
    return val / 2.0 if degree == 2 else val


def lr_norm(grid, t, lead, r):
    mag = np.sqrt(pointwise_norm2(grid, t, lead))
    if np.isinf(r):
        return float(mag.max()) if mag.size else 0.0
    return float((np.sum(mag**r) * grid.cell_volume) ** (1.0 / r))


def l2_norm(grid, t, lead):
    return lr_norm(grid, t, lead, 2.0)


# ---------------------------------------------------------------------------
# Darboux derivative, torsion, curvature


def _unit_check(L, s):
    drift = np.abs(np.sqrt(L.norm2(s)) - 1.0).max()
    if drift > CONSTANTS.field_unit_drift:
        raise ValueError(f"loop field leaves the unit sphere (drift {drift:.3e})")


def torsion(L, grid, s, omega=None, return_real=False):
    """T_a = (d_a s + omega_a . s) / s projected to l."""
    _unit_check(L, s)
    ds = grad(s, grid)
    if omega is not None:
        ds = ds + _act(omega_full_mats(L, omega), s[None])
    q = L.rquot(ds, s[None])
    if not np.all(np.isfinite(q)):
        raise FloatingPointError("degenerate quotient in torsion")
    if return_real:
        return L.to_tangent(q), q[..., 0]
    return L.to_tangent(q)


def darboux(L, grid, s, return_real=False):
    return torsion(L, grid, s, None, return_real)


def field_bracket(L, s, x, y):
    """Pointwise [x, y]^(s) for l-valued arrays broadcasting against s."""
    return lp.bracket(L, s, x, y)


def wedge_bracket(L, s, x, y):
    """Components ([x_a, y_b]^(s) + [y_a, x_b]^(s)) / 2 of the bracket of two 1-forms.

    For x = y this is [x_a, x_b]^(s), the component form of b_s(x, x) / 2.
    """
    ab = lp.bracket(L, s[None, None], x[:, None], y[None, :])
    ba = lp.bracket(L, s[None, None], y[:, None], x[None, :])
    return 0.5 * (ab + ba)


def curvature(L, grid, omega):
    """F_ab = d_a omega_b - d_b omega_a + [omega_a, omega_b]_p."""
    n = grid.n
    dw = np.zeros((n,) + omega.shape)
    for a in range(n):
        for b in range(n):
            if a != b:
                dw[a, b] = partial(omega[b], grid, a)
    dw = dw - np.swapaxes(dw, 0, 1)
    return dw + L.p_bracket(omega[:, None], omega[None, :])


def fhat(L, grid, s, omega):
    F = curvature(L, grid, omega)
    return lp.phi_s(L, s[None, None], F)


def maurer_cartan_residual(L, grid, s):
    th = darboux(L, grid, s)
    return d_form(th, grid, 1) - wedge_bracket(L, s, th, th)


def structure_residual(L, grid, s, omega):
    """F_hat - d^omega T + [T, T]^(s)."""
    T = torsion(L, grid, s, omega)
    dT = cov_d(L, grid, omega, T, 1)
    return fhat(L, grid, s, omega) - dT + wedge_bracket(L, s, T, T)


def partial_full_mats(L, omega):
    """Per-axis matrices of the partial action extended to the ambient space (fixes 1)."""
    return np.einsum("a...k,kij->a...ij", omega, L.partial_basis_full)


def cov_d_loop(L, grid, omega, A):
    """d^omega A for a loop-valued section A acted on by the partial action."""
    dA = grad(A, grid)
    if omega is None:
        return dA
    return dA + _act(partial_full_mats(L, omega), A[None])


def gauge_torsion_residual(L, grid, s, omega, A):
    """T^(A s) - (rho_A^(s))^{-1} d^omega A - Ad_A^(s) T^(s)."""
    As = L.mul(A, s)
    T_As = torsion(L, grid, As, omega)
    T_s = torsion(L, grid, s, omega)
    dA = cov_d_loop(L, grid, omega, A)
    first = lp.rho_inv(L, s[None], A[None], dA)
    second = lp.Ad(L, s[None], A[None], T_s)
    return T_As - first - second


def gauge_pullback(L, grid, H, omega):
    """h^* omega = h^{-1} omega h + h^{-1} dh in p-coefficients."""
    Hinv = np.swapaxes(H, -1, -2)
    W = omega_full_mats(L, omega) if omega is not None else 0.0
    dH = grad(H.reshape(H.shape[:-2] + (-1,)), grid).reshape((grid.n,) + H.shape)
    M = Hinv[None] @ W @ H[None] + Hinv[None] @ dH
    return L.p_coeffs(M)


def psi_gauge_transform(L, grid, H, s, omega):
    """Returns (h(s), h^* omega, residual of T^(s, h^* omega) - (h')^{-1} T^(h(s), omega))."""
    H = np.asarray(H, dtype=float)
    eye = np.eye(L.ambient)
    orth = np.abs(np.swapaxes(H, -1, -2) @ H - eye).max()
    if orth > 1e-10:
        raise ValueError(f"gauge field is not orthogonal (defect {orth:.3e})")
    hs = _act(H, s)
    pulled = gauge_pullback(L, grid, H, omega)
    lhs = torsion(L, grid, s, pulled)
    hp = lp.partial_action_matrix(L, H)
    rhs = _act(np.swapaxes(hp, -1, -2)[None], torsion(L, grid, hs, omega))
    return hs, pulled, lhs - rhs


# ---------------------------------------------------------------------------
# torsion evolution


def torsion_evolve(L, grid, s, omega, xi, t=1.0, method="closed", direct_exp="rk4"):
    """T^(exp_s(t xi) s, omega) via the evolution formula, and its deviation from direct recomputation."""
    xi = np.asarray(xi, dtype=float)
    T = torsion(L, grid, s, omega)
    txi = t * xi
    dxi = cov_d(L, grid, omega, txi, 0)
    Ua, Ib = ev.apply_evolution(L, s, txi, T, dxi, method=method)
    formula = Ua + Ib
    if direct_exp == "rk4":
        A = ev.exp_at(L, s, xi, t)
    else:
        A = L.exp(txi)
    direct = torsion(L, grid, L.mul(A, s), omega)
    return formula, float(l2_norm(grid, formula - direct, 1))


# ---------------------------------------------------------------------------
# Sobolev norms and the torsion estimate monitor


@dataclass
class NormReport:
    k: int
    r: float
    lr: list = field(default_factory=list)  # L^r norms of nabla^j chi, j = 0..k
    w: float = 0.0

    def rows(self):
        return [{"k": self.k, "r": self.r, "j": j, "lr": v} for j, v in enumerate(self.lr)] + [
            {"k": self.k, "r": self.r, "j": "W", "lr": self.w}
        ]


def sobolev_norm(L, grid, omega, chi, lead, k, r):
    """L^r norm of chi and of nabla^k chi; W^{k,r} = |chi|_r + |nabla^k chi|_r (k >= 1)."""
    vals = [lr_norm(grid, chi, lead, r)]
    t = chi
    for j in range(1, k + 1):
        t = nabla(L, grid, omega, t, lead + j - 1)
        vals.append(lr_norm(grid, t, lead + j, r))
    w = vals[0] if k == 0 else vals[0] + vals[-1]
    return NormReport(k=k, r=r, lr=vals, w=w)


def norm_report_csv(reports):
    lines = ["k,r,j,value"]
    for rep in reports:
        for row in rep.rows():
            lines.append(f"{row['k']},{row['r']!r},{row['j']},{row['lr']!r}")
    return "\n".join(lines) + "\n"


def estimate_monitor(L, grid, s, omega, xi, k=2, r=2.0):
    """Both sides of the torsion estimate for A = exp_s(xi); reports the implied constant."""
    C = ev.bracket_sup_constant(L)
    T = torsion(L, grid, s, omega)
    A = L.exp(xi)
    T_As = torsion(L, grid, L.mul(A, s), omega)
    left = sobolev_norm(L, grid, omega, T_As, 1, k - 1, r).w
    theta = sobolev_norm(L, grid, omega, T, 1, k - 1, r).w + sobolev_norm(L, grid, omega, xi, 0, k, r).w
    xi_c0 = float(np.sqrt(np.sum(xi * xi, axis=-1)).max())
    shape = np.exp(C * k * xi_c0) * (theta**k + theta)
    return {
        "left": left,
        "theta": theta,
        "shape": float(shape),
        "constant": float(left / shape) if shape > 0 else 0.0,
        "C": C,
    }


def gauged_darboux_check(L, grid, s, xi, t=1.0):
    """Pointwise ratio |theta_{A(t)s}| / (e^{C t |xi|} (|theta_s| + t |d xi|))."""
    C = ev.bracket_sup_constant(L)
    th = darboux(L, grid, s)
    A = L.exp(t * xi)
    th2 = darboux(L, grid, L.mul(A, s))
    lhs = np.sqrt(pointwise_norm2(grid, th2, 1))
    dxi = np.sqrt(pointwise_norm2(grid, grad(xi, grid), 1))
    rhs = np.exp(C * t * np.linalg.norm(xi, axis=-1)) * (np.sqrt(pointwise_norm2(grid, th, 1)) + t * dxi)
    return float(np.max(lhs / np.maximum(rhs, 1e-300)))


# ---------------------------------------------------------------------------
# smooth test fields


def smooth_modes(grid, rng, ncomp, nmodes=3, kmax=2, amplitude=1.0):
    """Random trigonometric field sum_j c_j cos(k_j . x + phase_j) with fiber coefficients."""
    X = grid.coords()
    out = np.zeros(grid.sizes + (ncomp,))
    for _ in range(nmodes):
        kv = rng.integers(-kmax, kmax + 1, size=grid.n)
        if not np.any(kv):
            kv[0] = 1
        phase = rng.uniform(0, 2 * np.pi)
        coef = rng.standard_normal(ncomp)
        arg = sum(2 * np.pi * kk * x / P for kk, x, P in zip(kv, X, grid.periods)) + phase
        out += np.cos(arg)[..., None] * coef
    return amplitude * out / np.sqrt(nmodes)
