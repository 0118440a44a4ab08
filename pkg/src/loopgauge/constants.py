"""Single table of numerical thresholds and defaults.

Tests, the CLI reports and the library postconditions all read their
tolerances from ``CONSTANTS`` so a threshold is never duplicated.
"""

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Constants:
    # octonion core
    algebra_tol: float = 1e-12
    unit_drift: float = 1e-12
    degenerate_norm: float = 1e-14
    pseudo_auto_tol: float = 1e-10
    pseudo_auto_pairs: int = 32
    # loop algebra
    quotient_tol: float = 1e-10
    antisym_tol: float = 1e-10
    arprod_tol: float = 1e-10
    jacobi_exact_tol: float = 1e-10
    jacobi_fd_tol: float = 1e-7
    jacobi_random_tol: float = 1e-8
    fd_order_min: float = 1.9
    transport_tol: float = 1e-7
    total_antisym_tol: float = 1e-8
    malcev_tol: float = 1e-7
    ad_skew_tol: float = 1e-8
    killing_tol: float = 1e-8
    killing_scale: float = -24.0
    phi_equivariance_tol: float = 1e-8
    phi_identity_tol: float = 1e-6
    phi_identity_assoc_tol: float = 1e-9
    rank_tol: float = 1e-8
    fd_step_first: float = 1e-4
    fd_step_bracket: float = 1e-3
    fd_step_associator: float = 5e-3
    # evolution
    rk4_step: float = 1e-3
    exp_closed_tol: float = 1e-9
    evolution_fix_tol: float = 1e-9
    evolution_group_tol: float = 1e-9
    ad_vs_u_tol: float = 1e-7
    dyson_order: int = 8
    dyson_tol: float = 1e-6
    dexp_fd_tol: float = 1e-6
    sigma_tol: float = 1e-7
    doubling_tol: float = 1e-8
    inhomogeneous_tol: float = 1e-8
    ad_transport_tol: float = 1e-6
    sup_sample_points: int = 4096
    rk4_ratio_lo: float = 14.0
    rk4_ratio_hi: float = 18.0
    # fields
    field_unit_drift: float = 1e-10
    adjoint_tol: float = 1e-12
    field_order_min: float = 1.9
    refinement_seconds: float = 30.0
    # solver
    kernel_tol: float = 1e-8
    tol_outer: float = 1e-8
    recomputed_div_tol: float = 1e-7
    first_variation_tol: float = 1e-7
    first_variation_dirs: int = 20
    flow_agreement_tol: float = 1e-5
    orthogonality_tol: float = 1e-10
    projector_tol: float = 1e-12
    linearization_tol: float = 1e-5
    ad_invariance_tol: float = 1e-10
    newton_max_steps: int = 12
    jvp_step: float = 1e-6
    stagnation_factor: float = 1e-3
    stagnation_window: int = 5
    armijo_c: float = 1e-4
    cg_max_iter: int = 200
    coulomb_seconds: float = 120.0
    # G2
    g2_identity_tol: float = 1e-13
    g2_metric_invariance_tol: float = 1e-12
    hodge_tol: float = 1e-10
    g2_div_tol: float = 1e-7
    g2_seconds: float = 600.0


CONSTANTS = Constants()


def as_dict():
    return asdict(CONSTANTS)
