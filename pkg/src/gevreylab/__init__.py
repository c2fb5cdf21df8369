"""Numerical laboratory for Gaussian approximation on Gevrey structures."""

from .approx import (
    ApproxConfig,
    ConvergenceReport,
    DistributionData,
    E_tau,
    G_tau,
    PointFunctional,
    PolynomialApproximant,
    R_tau_direct,
    R_tau_stokes,
    certify_solution,
    commutator_check,
    convergence_sweep,
    default_chi,
    distribution_action,
    evaluation_grid,
    polynomial_approximant,
    vanishing_trace_check,
    weak_pairing,
)
from .gevrey import (
    BumpFunction,
    GevreyParams,
    PartitionTerm,
    compose_derivative,
    exp_phase_derivative,
    faa_di_bruno_terms,
    fdb_moment_sum,
    gevrey_bump,
    gevrey_seminorm,
)
from .multiindex import MultiIndex, iter_multiindices
from .poincare import (
    FormPQ,
    G_tau_form,
    K_q,
    L_operator,
    approximate_solve,
    d_t,
    epsilon_sign,
    homotopy_check,
)
from .quadrature import QuadratureRule, integrate_path, integrate_rm
from .sampled import (
    Box,
    CapabilityError,
    DomainError,
    ExprFunction,
    NumericFunction,
    ParameterError,
    SampledFunction,
)
from .structure import (
    BUILTIN_STRUCTURES,
    DomainRadii,
    FrameCoefficients,
    StructureMap,
    apply_vector_fields,
    builtin_structure,
    dual_frame,
    find_T,
    validate_lipschitz,
)
from .trace import (
    SpectralCutoff,
    SpectralData,
    default_cutoff,
    fourier_gevrey_decay_check,
    fourier_of,
    trace_at,
    trace_consistency,
    trace_t_regularity,
)

__version__ = "0.1.0"
