"""Divergence-free torsion by damped inexact Newton.

Given a section s and connection omega on a flat grid, the solver looks for
xi orthogonal to ker Delta^omega with

    G(T, xi) = (d^omega)^* ( U_xi T + U_xi int_0^1 U_xi(tau)^{-1} dtau d^omega xi ) = 0,

which is (d^omega)^* T^(exp_s(xi) s, omega) = 0.  Newton steps use
forward-difference Jacobian-vector products inside preconditioned CG, with
Delta^omega as preconditioner and Armijo damping on |G|.
"""

import itertools
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import evolution as ev
from . import fields as fl
from . import loops as lp
from .constants import CONSTANTS


class NoConvergence(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class KernelDriftError(RuntimeError):
    pass


@dataclass
class GaugeProblem:
    L: lp.LoopInstance
    grid: fl.TorusGrid
    s: np.ndarray
    omega: np.ndarray = None
    tol_outer: float = CONSTANTS.tol_outer
    max_steps: int = CONSTANTS.newton_max_steps
    cg_max_iter: int = CONSTANTS.cg_max_iter
    k: int = 2
    r: float = 2.0
    quad_nodes: int = 16
    evolution_method: str = "closed"
    # "map" transports T by the evolution operator; "direct" recomputes the
    # torsion of exp_s(xi) s on the grid, so the solver residual is the
    # from-scratch divergence (used where the grid is too coarse for the two
    # to agree).
    residual: str = "map"

    def __post_init__(self):
        if self.residual not in ("map", "direct"):
            raise ValueError(f"unknown residual {self.residual!r}")
        self.s = np.asarray(self.s, dtype=float)
        if self.omega is not None:
            self.omega = np.asarray(self.omega, dtype=float)
            if not np.any(self.omega):
                self.omega = None
        fl._unit_check(self.L, self.s)
        if self.s.shape != self.grid.sizes + (self.L.ambient,):
            raise ValueError("section shape does not match grid")

    @property
    def flat(self):
        return self.omega is None

    @property
    def field_shape(self):
        return self.grid.sizes + (self.L.dim_l,)


@dataclass
class SolveReport:
    converged: bool = False
    iterations: int = 0
    trace: list = field(default_factory=list)
    initial_G: float = 0.0
    final_G: float = 0.0
    final_div_recomputed: float = 0.0
    torsion_initial_W: float = 0.0
    torsion_final_W: float = 0.0
    xi_W: float = 0.0
    estimate_ratio: float = 0.0
    xi_ratio: float = 0.0
    kernel_dim: int = 0
    orthogonality: float = 0.0
    k: int = 2
    r: float = 2.0
    kr_exceeds_n: bool = True
    method: str = "newton"
    residual: str = "map"
    jacobian_condition: float = 0.0
    tail_constants: list = field(default_factory=list)
    tail_constants_forcing: list = field(default_factory=list)
    wall_time: float = 0.0
    energy_trace: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# operators


def initial_torsion(problem, s=None):
    s = problem.s if s is None else s
    return fl.torsion(problem.L, problem.grid, s, problem.omega)


def G_map(problem, a, xi):
    """(d^omega)^*(U_xi a + U_xi int U^{-1} d^omega xi), U pointwise."""
    L, grid = problem.L, problem.grid
    dxi = fl.cov_d(L, grid, problem.omega, xi, 0)
    Ua, Ib = ev.apply_evolution(
        L, problem.s, xi, a, dxi, method=problem.evolution_method, quad_nodes=problem.quad_nodes
    )
    return fl.codifferential(L, grid, problem.omega, Ua + Ib)


def gauge_section(problem, xi):
    return problem.L.mul(problem.L.exp(xi), problem.s)


def G_direct(problem, xi):
    """(d^omega)^* T^(exp_s(xi) s) recomputed from scratch."""
    T = fl.torsion(problem.L, problem.grid, gauge_section(problem, xi), problem.omega)
    return fl.codifferential(problem.L, problem.grid, problem.omega, T)


def _residual(problem, T0, xi):
    if problem.residual == "direct":
        return G_direct(problem, xi)
    return G_map(problem, T0, xi)


def linearize_at_zero(problem):
    """eta -> Delta^omega eta as a scipy LinearOperator on flattened 0-forms."""
    shape = problem.field_shape
    N = int(np.prod(shape))

    def mv(v):
        x = np.asarray(v).reshape(shape)
        return fl.laplacian(problem.L, problem.grid, problem.omega, x).ravel()

    return spla.LinearOperator((N, N), matvec=mv, rmatvec=mv, dtype=float)


# ---------------------------------------------------------------------------
# sparse assembly (used for general omega)


def _derivative_matrix_1d(n, h):
    D = np.zeros((n, n))
    for i in range(n):
        D[i, (i + 1) % n] += 8.0
        D[i, (i - 1) % n] -= 8.0
        D[i, (i + 2) % n] -= 1.0
        D[i, (i - 2) % n] += 1.0
    return D / (12.0 * h)


def _axis_operator(grid, a):
    mats = []
    for b, (n, h) in enumerate(zip(grid.sizes, grid.spacing)):
        mats.append(sp.csr_matrix(_derivative_matrix_1d(n, h)) if b == a else sp.identity(n, format="csr"))
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def assemble_cov_d(problem):
    """Sparse d^omega: 0-forms (P * l) -> 1-forms (n * P * l)."""
    L, grid = problem.L, problem.grid
    P, l = grid.npoints, L.dim_l
    blocks = []
    W = fl.omega_partial_mats(L, problem.omega) if problem.omega is not None else None
    for a in range(grid.n):
        Da = sp.kron(_axis_operator(grid, a), sp.identity(l), format="csr")
        if W is not None:
            Da = Da + sp.block_diag(list(W[a].reshape(P, l, l)), format="csr")
        blocks.append(Da)
    return sp.vstack(blocks, format="csr")


def assemble_laplacian(problem):
    d = assemble_cov_d(problem)
    P, l = problem.grid.npoints, problem.L.dim_l
    w = np.repeat(problem.grid.inv_metric, P * l)
    return (d.T @ sp.diags(w) @ d).tocsc()


# ---------------------------------------------------------------------------
# kernel of Delta^omega


class KernelProjector:
    """L2-orthogonal projection onto ker Delta^omega and its complement."""

    def __init__(self, problem, tol=None, max_dense=4096):
        self.problem = problem
        self.tol = CONSTANTS.kernel_tol if tol is None else tol
        self.grid = problem.grid
        self.l = problem.L.dim_l
        self.vol = problem.grid.cell_volume
        if problem.flat:
            self._setup_separable()
        else:
            self._setup_krylov(max_dense)

    # flat connection: kernel of d is a tensor product of 1-d kernels
    def _setup_separable(self):
        self.separable = True
        self.axis_bases = []
        for n, h in zip(self.grid.sizes, self.grid.spacing):
            D = _derivative_matrix_1d(n, h)
            U, S, Vt = np.linalg.svd(D)
            null = Vt[S <= self.tol * max(S.max(), 1.0)]
            gap = S[S > self.tol * max(S.max(), 1.0)]
            if gap.size and gap.min() < 1e3 * self.tol * S.max():
                raise RuntimeError(
                    f"ill-separated spectrum: {gap.min():.3e} vs threshold {self.tol * S.max():.3e}"
                )
            q, _ = np.linalg.qr(null.T)
            # fix signs for determinism
            q = q * np.sign(q[np.argmax(np.abs(q), axis=0), np.arange(q.shape[1])])
            self.axis_bases.append(q)  # (n, k_a), Euclidean orthonormal
        self.dim = int(np.prod([b.shape[1] for b in self.axis_bases])) * self.l

    def _setup_krylov(self, max_dense):
        self.separable = False
        Lap = assemble_laplacian(self.problem)
        N = Lap.shape[0]
        want = min(32, N - 2)
        while True:
            vals, vecs = spla.eigsh(Lap, k=want, sigma=-1e-3, which="LM")
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
            below = vals <= self.tol
            if below.all() and want < N - 2 and want < max_dense:
                want = min(2 * want, N - 2)
                continue
            break
        straddle = vals[(vals > self.tol) & (vals < 1e3 * self.tol)]
        if straddle.size:
            lo = vals[below].max() if below.any() else None
            raise RuntimeError(f"ill-separated spectrum near threshold: {lo} and {straddle.min():.3e}")
        self.eigenvalues = vals
        basis = vecs[:, below]
        if basis.shape[1]:
            basis, _ = np.linalg.qr(basis)
        self.dense = basis / np.sqrt(self.vol)  # L2-orthonormal columns
        self.dim = basis.shape[1]

    def coefficients(self, x):
        """L2 inner products <kappa_j, x> against an orthonormal kernel basis."""
        x = np.asarray(x, dtype=float)
        if self.separable:
            c = x
            for a, B in enumerate(self.axis_bases):
                c = np.moveaxis(np.tensordot(B.T, np.moveaxis(c, a, 0), axes=1), 0, a)
            return (c * np.sqrt(self.vol)).ravel()
        return self.dense.T @ x.ravel() * self.vol

    def kernel_part(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 0:
            return np.zeros_like(x)
        if self.separable:
            c = x
            for a, B in enumerate(self.axis_bases):
                c = np.moveaxis(np.tensordot(B @ B.T, np.moveaxis(c, a, 0), axes=1), 0, a)
            return c
        return (self.dense @ (self.dense.T @ x.ravel() * self.vol)).reshape(x.shape)

    def complement(self, x):
        return x - self.kernel_part(x)

    def basis(self):
        """Materialized L2-orthonormal kernel basis, shape (dim, *sizes, l)."""
        if not self.separable:
            return np.moveaxis(self.dense.reshape(self.grid.sizes + (self.l, self.dim)), -1, 0).copy()
        out = []
        idx = [range(B.shape[1]) for B in self.axis_bases]
        for combo in itertools.product(*idx):
            f = np.ones(())
            for a, j in enumerate(combo):
                f = np.multiply.outer(f, self.axis_bases[a][:, j])
            for c in range(self.l):
                v = np.zeros(self.grid.sizes + (self.l,))
                v[..., c] = f / np.sqrt(self.vol)
                out.append(v)
        return np.array(out)


def kernel_projection(problem, tol=None):
    return KernelProjector(problem, tol)


# ---------------------------------------------------------------------------
# preconditioner


def _symbol_1d(n, h):
    theta = 2 * np.pi * np.fft.fftfreq(n)
    return (8.0 * np.sin(theta) - np.sin(2 * theta)) / (6.0 * h)


def laplacian_symbol(grid):
    lam = np.zeros(grid.sizes)
    for a, (n, h) in enumerate(zip(grid.sizes, grid.spacing)):
        shape = [1] * grid.n
        shape[a] = n
        lam = lam + grid.inv_metric[a] * (_symbol_1d(n, h) ** 2).reshape(shape)
    return lam


def laplacian_lambda_max(grid):
    return float(laplacian_symbol(grid).max())


def laplacian_condition(problem, projector):
    """Condition number of Delta^omega restricted to the complement of its kernel."""
    if problem.flat:
        lam = laplacian_symbol(problem.grid)
        pos = lam[lam > CONSTANTS.kernel_tol * max(lam.max(), 1.0)]
        return float(pos.max() / pos.min())
    Lap = assemble_laplacian(problem)
    top = spla.eigsh(Lap, k=1, which="LA", return_eigenvectors=False)[0]
    vals = projector.eigenvalues
    low = vals[vals > projector.tol]
    if not low.size:
        raise RuntimeError("no eigenvalue above the kernel threshold in the computed window")
    return float(top / low.min())


def tail_constants(history, power=2.0):
    """c_i = G_{i+1} / G_i^power over the last three residual norms.

    power 2 is the exact-Newton rate; the sqrt(G) forcing of the inner solve
    limits the attainable rate to power 1.5.
    """
    tail = history[-3:]
    return [tail[i + 1] / tail[i] ** power for i in range(len(tail) - 1) if tail[i] > 0]


class LaplacianInverse:
    """Inverse of Delta^omega on the complement of its kernel."""

    def __init__(self, problem, projector):
        self.problem = problem
        self.projector = projector
        if problem.flat:
            lam = laplacian_symbol(problem.grid)
            thr = CONSTANTS.kernel_tol * max(lam.max(), 1.0)
            self.inv_symbol = np.where(lam > thr, 1.0 / np.where(lam > thr, lam, 1.0), 0.0)
        else:
            Lap = assemble_laplacian(problem)
            shift = 1e-10 * spla.norm(Lap, 1)
            self.lu = spla.splu((Lap + shift * sp.identity(Lap.shape[0])).tocsc())

    def __call__(self, r):
        r = self.projector.complement(np.asarray(r, dtype=float))
        if self.problem.flat:
            axes = tuple(range(self.problem.grid.n))
            R = np.fft.fftn(r, axes=axes)
            x = np.real(np.fft.ifftn(R * self.inv_symbol[..., None], axes=axes))
        else:
            x = self.lu.solve(r.ravel()).reshape(r.shape)
        return self.projector.complement(x)


# ---------------------------------------------------------------------------
# Krylov inner solve


def _dot(problem, a, b):
    return float(np.sum(a * b)) * problem.grid.cell_volume


def pcg(problem, apply_A, b, M, tol, maxiter):
    """Preconditioned CG; returns (x, iterations, relative residual)."""
    x = np.zeros_like(b)
    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = _dot(problem, r, z)
    bnorm = np.sqrt(_dot(problem, b, b))
    if bnorm == 0:
        return x, 0, 0.0
    rel = 1.0
    for it in range(1, maxiter + 1):
        Ap = apply_A(p)
        pAp = _dot(problem, p, Ap)
        if pAp <= 0:
            return x, it, rel
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rel = np.sqrt(_dot(problem, r, r)) / bnorm
        if rel <= tol:
            return x, it, rel
        z = M(r)
        rz_new = _dot(problem, r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, rel


def gmres_solve(problem, apply_A, b, M, tol, maxiter):
    shape = b.shape
    N = b.size
    A = spla.LinearOperator((N, N), matvec=lambda v: apply_A(v.reshape(shape)).ravel())
    Mop = spla.LinearOperator((N, N), matvec=lambda v: M(v.reshape(shape)).ravel())
    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    restart = min(50, maxiter)
    # scipy counts restart cycles in maxiter; convert the inner-iteration budget
    cycles = max(1, -(-maxiter // restart))
    x, info = spla.gmres(A, b.ravel(), rtol=tol, restart=restart, maxiter=cycles, M=Mop, callback=cb,
                         callback_type="pr_norm")
    x = x.reshape(shape)
    rel = np.linalg.norm(b - apply_A(x)) / max(np.linalg.norm(b), 1e-300)
    return x, counter["n"], rel


# ---------------------------------------------------------------------------
# Newton


def _gnorm(problem, G):
    return fl.l2_norm(problem.grid, G, 0)


def _finish_report(problem, report, xi, T0, projector, t_start):
    L, grid = problem.L, problem.grid
    k, r = problem.k, problem.r
    A = L.exp(xi)
    s_new = L.mul(A, problem.s)
    T_new = fl.torsion(L, grid, s_new, problem.omega)
    report.final_div_recomputed = _gnorm(problem, fl.codifferential(L, grid, problem.omega, T_new))
    report.torsion_initial_W = fl.sobolev_norm(L, grid, problem.omega, T0, 1, k - 1, r).w
    report.torsion_final_W = fl.sobolev_norm(L, grid, problem.omega, T_new, 1, k - 1, r).w
    report.xi_W = fl.sobolev_norm(L, grid, problem.omega, xi, 0, k, r).w
    t0 = report.torsion_initial_W
    if t0 > 0:
        report.estimate_ratio = report.torsion_final_W / (t0 * (1.0 + t0 ** (k - 1)))
        report.xi_ratio = report.xi_W / t0
    report.kernel_dim = projector.dim
    coeffs = projector.coefficients(xi)
    report.orthogonality = float(np.abs(coeffs).max()) if coeffs.size else 0.0
    report.k, report.r = k, r
    report.kr_exceeds_n = bool(k * r > grid.n)
    report.wall_time = time.perf_counter() - t_start
    return A, T_new


def newton_solve(problem, projector=None, xi0=None):
    """Damped inexact Newton for G(T, xi) = 0 on the complement of ker Delta^omega."""
    t_start = time.perf_counter()
    c = CONSTANTS
    projector = kernel_projection(problem) if projector is None else projector
    precond = LaplacianInverse(problem, projector)
    T0 = initial_torsion(problem)
    xi = np.zeros(problem.field_shape) if xi0 is None else projector.complement(xi0)
    G = _residual(problem, T0, xi)
    g = _gnorm(problem, G)
    report = SolveReport(initial_G=g, k=problem.k, r=problem.r, residual=problem.residual)
    report.trace.append({"iter": 0, "G": g, "xi": fl.l2_norm(problem.grid, xi, 0), "damping": 1.0,
                         "inner_iters": 0, "inner_method": "none"})
    if g < problem.tol_outer:
        report.converged = True
        report.final_G = g
        _finish_report(problem, report, xi, T0, projector, t_start)
        return xi, problem.L.exp(xi), report

    history = [g]
    for it in range(1, problem.max_steps + 1):
        forcing = min(0.1, np.sqrt(g))
        xnorm = float(np.abs(xi).max())

        def J(v, xi=xi, G=G, xnorm=xnorm):
            vn = float(np.abs(v).max())
            if vn == 0:
                return np.zeros_like(v)
            eps = c.jvp_step * (1.0 + xnorm) / vn
            return (_residual(problem, T0, xi + eps * v) - G) / eps

        rhs = -G
        d, n_inner, rel = pcg(problem, J, rhs, precond, forcing, problem.cg_max_iter)
        method = "cg"
        if rel > forcing:
            d, n_inner, rel = gmres_solve(problem, J, rhs, precond, forcing, problem.cg_max_iter)
            method = "gmres"
        d = projector.complement(d)
        lam = 1.0
        while True:
            trial = xi + lam * d
            G_trial = _residual(problem, T0, trial)
            g_trial = _gnorm(problem, G_trial)
            if g_trial <= (1.0 - c.armijo_c * lam) * g or lam < 1.0 / 64:
                break
            lam *= 0.5
        xi, G, g = trial, G_trial, g_trial
        drift = projector.coefficients(xi)
        if drift.size and np.abs(drift).max() > 1e-6:
            raise KernelDriftError(f"iterate drifted into the kernel ({np.abs(drift).max():.3e})")
        xi = projector.complement(xi)
        history.append(g)
        report.trace.append({"iter": it, "G": g, "xi": fl.l2_norm(problem.grid, xi, 0), "damping": lam,
                             "inner_iters": int(n_inner), "inner_method": method})
        report.iterations = it
        if g < problem.tol_outer:
            report.converged = True
            break
        if len(history) > c.stagnation_window and g > (1.0 - c.stagnation_factor) * history[-1 - c.stagnation_window]:
            break
    report.final_G = g
    report.jacobian_condition = laplacian_condition(problem, projector)
    report.tail_constants = tail_constants(history, 2.0)
    report.tail_constants_forcing = tail_constants(history, 1.5)
    A, _ = _finish_report(problem, report, xi, T0, projector, t_start)
    if not report.converged:
        raise NoConvergence(f"Newton did not converge (|G| = {g:.3e})", report)
    return xi, A, report


# ---------------------------------------------------------------------------
# energy


def energy(problem, s):
    T = fl.torsion(problem.L, problem.grid, s, problem.omega)
    return fl.l2_inner(problem.grid, T, T, 1)


def energy_first_variation(problem, s, xi, eps=1e-4):
    """(2 <(d^omega)^* T, xi>, central difference of E along exp_s(t xi) s)."""
    L, grid = problem.L, problem.grid
    T = fl.torsion(L, grid, s, problem.omega)
    analytic = 2.0 * fl.l2_inner(grid, fl.codifferential(L, grid, problem.omega, T), xi, 0)
    ep = energy(problem, L.mul(L.exp(eps * xi), s))
    em = energy(problem, L.mul(L.exp(-eps * xi), s))
    return analytic, (ep - em) / (2.0 * eps)


def ad_invariance_integrand(problem, s, xi):
    """Pointwise <T_a, [xi, T_a]^(s)> summed over a."""
    T = fl.torsion(problem.L, problem.grid, s, problem.omega)
    br = lp.bracket(problem.L, s[None], xi[None], T)
    return np.sum(T * br, axis=(0, -1))


# ---------------------------------------------------------------------------
# gradient-flow oracle


def gradient_flow(problem, step=None, max_iter=20000, tol=1e-10, projector=None, record_every=1):
    """Explicit Euler on xi' = -(d^omega)^* T^(exp_s(xi) s), projected off the kernel."""
    t_start = time.perf_counter()
    projector = kernel_projection(problem) if projector is None else projector
    if step is None:
        if not problem.flat:
            raise ValueError("explicit step needed for non-flat connections")
        step = 1.8 / laplacian_lambda_max(problem.grid)
    T0 = initial_torsion(problem)
    xi = np.zeros(problem.field_shape)
    report = SolveReport(method="gradient_flow", k=problem.k, r=problem.r)
    G = G_direct(problem, xi)
    g = _gnorm(problem, G)
    report.initial_G = g
    g0 = g
    for it in range(max_iter + 1):
        if it % record_every == 0:
            report.energy_trace.append(energy(problem, gauge_section(problem, xi)))
            report.trace.append({"iter": it, "G": g})
        if g < tol:
            report.converged = True
            break
        if not np.isfinite(g) or g > 10 * g0 + 1.0:
            raise NoConvergence("gradient flow became unstable", report)
        xi = projector.complement(xi - step * G)
        G = G_direct(problem, xi)
        g = _gnorm(problem, G)
        report.iterations = it + 1
    report.final_G = g
    A, _ = _finish_report(problem, report, xi, T0, projector, t_start)
    if not report.converged:
        raise NoConvergence(f"gradient flow stopped at |G| = {g:.3e}", report)
    return xi, A, report


# ---------------------------------------------------------------------------
# fixtures


def perturbation_field(grid, seed, eps, ncomp=7, nmodes=3, kmax=1):
    """Seeded smooth l-valued field with pointwise sup-norm exactly eps.

    Each of the ``nmodes`` trigonometric modes carries its own random fiber
    direction, so the perturbation does not lie in an abelian subalgebra.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    f = fl.smooth_modes(grid, rng, ncomp, nmodes=nmodes, kmax=kmax)
    peak = float(np.sqrt(np.sum(f * f, axis=-1)).max())
    return eps * f / peak


def perturbed_problem(L, grid, eps, seed=0, s0=None, omega=None, **kw):
    xi = perturbation_field(grid, seed, eps, ncomp=L.dim_l)
    s0 = L.one(grid.sizes) if s0 is None else s0
    s = L.mul(L.exp(xi), s0)
    return GaugeProblem(L, grid, s, omega, **kw)
