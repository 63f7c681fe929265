"""Hidden Markov model approximations of diffusions, measured in weighted sup norms.

The ladder runs diffusion generator -> resolvent ``R_a`` -> Poisson jump
process with jump law ``kappa R_kappa`` -> finite-rank generator ``E`` whose
process is a hidden Markov model.  Every stage is a dense matrix on a
tensor grid, and every comparison uses ``|||.|||_v`` with ``v = exp(V)``.
"""

from .analysis import (
    ApproximationReport,
    ErgodicityEstimate,
    SpectrumReport,
    alpha_grid,
    approximate,
    compare_invariant,
    compare_resolvents,
    compare_semigroups,
    converse_lyapunov,
    ergodicity_rate,
    invariant_measure,
    power_bound_check,
    spectrum,
)
from .diffusion import (
    DiffusionModel,
    LyapunovCertificate,
    certify_dv3,
    generator_apply,
    nonlinear_generator,
    preset,
    simulate_sde,
)
from .hmm import (
    FiniteRankGenerator,
    FiniteRankKernel,
    TruncationPlan,
    build_hmm_generator,
    finite_rank_approx,
    hmm_resolvent,
    hmm_semigroup_coeffs,
    hmm_stationary,
    simulate_hmm,
    truncation_plan,
)
from .jump import (
    JumpDriftCertificate,
    JumpGenerator,
    jump_drift_certificate,
    jump_generator,
    jump_resolvent_series,
    jump_semigroup,
    simulate_jump,
    verify_rrapprox_bound,
)
from .resolvent import (
    GeneratorMatrix,
    KernelMatrix,
    check_resolvent_equation,
    discretize_generator,
    resolvent_density,
    resolvent_direct,
    resolvent_mc,
)
from .statespace import (
    CellPartition,
    GridSpace,
    build_grid,
    measure_norm_v,
    operator_norm_v,
    partition_compact,
    sublevel_set,
    weighted_sup_norm,
)

__version__ = "0.1.0"
