"""Residual batteries shared by the CLI reports and the acceptance tests.

Each battery returns a list of ``Row`` records carrying the worst residual
observed and the threshold it is judged against; thresholds always come from
``CONSTANTS``.
"""

from dataclasses import dataclass

import numpy as np

from . import evolution as ev
from . import fields as fl
from . import loops as lp
from .constants import CONSTANTS


@dataclass
class Row:
    name: str
    residual: float
    threshold: float
    samples: int

    @property
    def passed(self):
        return bool(np.isfinite(self.residual) and self.residual <= self.threshold)

    def as_list(self):
        return [self.name, repr(float(self.residual)), repr(float(self.threshold)), self.samples,
                "pass" if self.passed else "fail"]


HEADER = ["identity", "max_residual", "threshold", "samples", "status"]


def make_rng(seed):
    """Philox 4x64 counter-based generator; portable reseeding by integer key."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _max(a):
    return float(np.abs(np.asarray(a)).max()) if np.size(a) else 0.0


# ---------------------------------------------------------------------------
# pure multiplication identities, vectorized over draws


def core_rows(L, rng, samples=10_000):
    c = CONSTANTS
    x, y, z = (rng.standard_normal((samples, L.ambient)) for _ in range(3))
    m = L.mul
    rows = []
    nm = np.sqrt(L.norm2(m(x, y))) - np.sqrt(L.norm2(x)) * np.sqrt(L.norm2(y))
    scale = np.sqrt(L.norm2(x) * L.norm2(y))
    rows.append(Row("norm_multiplicativity", _max(nm / scale), c.algebra_tol, samples))
    if L.alternative:
        left = m(m(x, x), y) - m(x, m(x, y))
        right = m(m(y, x), x) - m(y, m(x, x))
        rows.append(Row("alternativity", _max(np.concatenate([left, right])), c.algebra_tol, samples))
        mou = m(z, m(x, m(z, y))) - m(m(m(z, x), z), y)
        rows.append(Row("moufang", _max(mou), c.algebra_tol, samples))
    q1 = m(L.rquot(x, y), y) - x
    q2 = L.rquot(m(x, y), y) - x
    rows.append(Row("right_quotient", _max(np.concatenate([q1, q2])), c.algebra_tol, samples))
    if L.associative:
        rows.append(Row("associator_zero", _max(m(m(x, y), z) - m(x, m(y, z))), c.algebra_tol, samples))
    p, q, r, A = (L.random_point(rng, (samples,)) for _ in range(4))
    rows.append(Row("modified_product", _max(lp.modified_product_residual(L, p, q, r, A)),
                    c.arprod_tol, samples))
    return rows


# ---------------------------------------------------------------------------
# tangent-algebra identities


def bracket_rows(L, rng, samples=50, fd_samples=3):
    c = CONSTANTS
    dl = L.dim_l
    jac, mal, skew, trans, assoc = [], [], [], [], []
    for _ in range(samples):
        s = L.random_point(rng)
        p = L.random_point(rng)
        xi, eta, gam = (rng.standard_normal(dl) for _ in range(3))
        jac.append(_max(lp.jacobi_residual(L, s, xi, eta, gam)))
        trans.append(_max(lp.bracket_transport_residual(L, s, p, xi, eta)))
        if L.alternative:
            mal.append(_max(lp.malcev_residual(L, s, xi, eta, gam)))
            skew.append(abs(float(lp.ad_skew_residual(L, s, gam, xi, eta))))
        if L.associative:
            assoc.append(_max(lp.associator(L, s, xi, eta, gam)))
    fd = []
    for _ in range(fd_samples):
        s = L.random_point(rng)
        xi, eta, gam = (v / np.linalg.norm(v) for v in rng.standard_normal((3, dl)))
        fd.append(_max(lp.jacobi_residual(L, s, xi, eta, gam, method="fd")))
    rows = [
        Row("jacobi_exact", max(jac), c.jacobi_exact_tol, samples),
        Row("jacobi_fd", max(fd), c.jacobi_fd_tol, fd_samples),
        Row("bracket_transport", max(trans), c.transport_tol, samples),
    ]
    if L.alternative:
        rows.append(Row("malcev", max(mal), c.malcev_tol, samples))
        rows.append(Row("ad_skew", max(skew), c.ad_skew_tol, samples))
    if L.associative:
        rows.append(Row("associator_path_zero", max(assoc), c.algebra_tol, samples))
    rows.extend(killing_rows(L, rng))
    return rows


def killing_rows(L, rng, points=20):
    """K^(1) against its scaled identity and the spread of K^(s) over random s."""
    c = CONSTANTS
    K1 = lp.killing_form(L, L.one())
    rows = []
    if L.name == "octonion":
        rows.append(Row("killing_scale", _max(K1 - c.killing_scale * np.eye(L.dim_l)), c.killing_tol, 1))
    spread = max(_max(lp.killing_form(L, L.random_point(rng)) - K1) for _ in range(points))
    rows.append(Row("killing_s_independence", spread, c.killing_tol, points))
    return rows


def algebra_rows(L, rng, samples=10_000, bracket_samples=50):
    return core_rows(L, rng, samples) + bracket_rows(L, rng, bracket_samples)


# ---------------------------------------------------------------------------
# evolution


def rk4_order_table(L, s, xi, t=1.0, steps=(0.1, 0.05, 0.025)):
    """Error of the RK4 endpoint against a fine reference run, with halving ratios."""
    ref = ev.exp_at(L, s, xi, t, steps[-1] / 16, project=False)
    errs = [float(np.abs(ev.exp_at(L, s, xi, t, h, project=False) - ref).max()) for h in steps]
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    return list(zip(steps, errs, [float("nan")] + ratios))


def exp_rows(L, rng, draws=3):
    c = CONSTANTS
    dl = L.dim_l
    closed, fix, ubound, adu, dexp, dbl, sig = [], [], [], [], [], [], []
    for _ in range(draws):
        s = L.random_point(rng)
        xi = rng.standard_normal(dl)
        xi *= rng.uniform(0.2, 1.0) / np.linalg.norm(xi)
        eta = rng.standard_normal(dl)
        closed.append(_max(ev.exp_at(L, s, xi, 1.0) - L.exp(xi)))
        U = ev.evolution_U(L, s, xi, [1.0])[0]
        fix.append(_max(U @ xi - xi))
        rep = ev.ad_vs_U_report(L, s, xi, 1.0)
        ubound.append(rep["u_minus_id"] / rep["u_bound_rhs"])
        if L.alternative:
            adu.append(rep["dev_ad_u"])
        dexp.append(_max(ev.dexp_operator(L, s, xi) - ev.dexp_fd(L, s, xi)))
        d, a = ev.exp_doubling_residual(L, s, xi, 0.5)
        dbl.append(max(_max(d), _max(a)))
        if L.alternative:
            sig.append(_max(ev.sigma_curve(L, s, xi, eta, 1.0)))
    rows = [
        Row("exp_closed_form", max(closed), c.exp_closed_tol, draws),
        Row("evolution_fixes_generator", max(fix), c.evolution_fix_tol, draws),
        Row("evolution_bound_ratio", max(ubound), 1.0, draws),
        Row("dexp_vs_fd", max(dexp), c.dexp_fd_tol, draws),
        Row("exp_doubling_additivity", max(dbl), c.doubling_tol, draws),
    ]
    if L.alternative:
        rows.append(Row("ad_equals_evolution", max(adu), c.ad_vs_u_tol, draws))
        rows.append(Row("sigma_vanishes", max(sig), c.sigma_tol, draws))
    return rows


# ---------------------------------------------------------------------------
# field identities on a 2-torus


def field_configuration(L, N, seed=3):
    """Smooth section, connection, gauge section and partial-action field on an N x N torus."""
    g = fl.TorusGrid.periodic((N, N))
    rng = np.random.default_rng(seed)
    s = L.exp(fl.smooth_modes(g, rng, L.dim_l, amplitude=0.6))
    om = np.stack([fl.smooth_modes(g, rng, L.dim_p, amplitude=0.3) for _ in range(2)])
    A = L.exp(fl.smooth_modes(g, rng, L.dim_l, amplitude=0.5))
    f = fl.smooth_modes(g, rng, 1, amplitude=0.7)[..., 0]
    # exp(f gamma_0) by the Rodrigues formula (gamma_0^3 = -gamma_0)
    H = np.eye(L.ambient) + np.sin(f)[..., None, None] * L.p_basis[0] + (1 - np.cos(f))[..., None, None] * (
        L.p_basis[0] @ L.p_basis[0]
    )
    chi = fl.smooth_modes(g, rng, L.dim_l)
    return g, s, om, A, H, chi


def field_identity_residuals(L, N):
    g, s, om, A, H, chi = field_configuration(L, N)
    dd = fl.cov_d(L, g, om, fl.cov_d(L, g, om, chi, 0), 1)
    F = fl.curvature(L, g, om)
    Fchi = np.einsum("ab...k,kij,...j->ab...i", F, L.partial_basis, chi)
    return {
        "maurer_cartan": fl.l2_norm(g, fl.maurer_cartan_residual(L, g, s), 2),
        "structure": fl.l2_norm(g, fl.structure_residual(L, g, s, om), 2),
        "gauge_loop": fl.l2_norm(g, fl.gauge_torsion_residual(L, g, s, om, A), 1),
        "gauge_pseudo": fl.l2_norm(g, fl.psi_gauge_transform(L, g, H, s, om)[2], 1),
        "curvature_square": fl.l2_norm(g, dd - Fchi, 2),
    }
