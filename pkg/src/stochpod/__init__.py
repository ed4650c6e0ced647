"""Stochastic proper orthogonal decomposition.

Random principal subspaces sampled around a POD basis, stochastic
reduced-order models built from them, and training of the single
concentration parameter so prediction intervals track model error.
"""

__version__ = "0.1.0"

from .ensemble import (CoverageReport, EnsemblePrediction, PredictionSummary,
                       QoiExtractor, SubspaceSampler, coverage, run_srom,
                       summarize, summarize_matrix)
from .errors import ConvergenceError, GapError
from .rom import (FactoredBasis, LinearDynamicSystem, LinearStaticSystem,
                  NonlinearCubicSystem, Trajectory, galerkin_reduce,
                  inner_reduce, newmark_integrate, reconstruct,
                  solve_linear_static, solve_nonlinear_cubic,
                  solve_rom_nonlinear, two_stage_reduce)
from .sampling import (RandomStream, StochasticSubspaceModel,
                       batch_fractional_draws, sample_ambient,
                       sample_ensemble, sample_fractional, sample_reduced)
from .subspace import (CovarianceModel, PodDecomposition, SnapshotSet,
                       SubspaceBasis, center, compact_svd,
                       gaussian_log_likelihood, macg_log_pdf,
                       polar_orthonormalize, ppca_mle,
                       principal_subspace_map, projector_distance,
                       select_rank)
from .training import (BetaSearchResult, DistanceObservables, ObjectiveCache,
                       RefinementConfig, TrainingConfig, estimate_objective,
                       interpolated_objective, optimize_beta,
                       refine_beta_real, reference_distance,
                       train_integer_beta, trapezoid_weights)
