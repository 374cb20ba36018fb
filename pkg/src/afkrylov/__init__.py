"""Augmented flexible Krylov solvers for smooth-plus-sparse inverse problems."""

from .operators import (LinearOperator, MaternSpec, SpdOperator,
                        build_matern_covariance, gaussian_blur_operator,
                        grid_coords, matern_kernel, weighted_norm)
from .objective import (DiagonalWeights, ObjectiveSpec, compute_weights,
                        eval_phi, eval_phi_k)
from .arnoldi import AFArnoldiState
from .golub_kahan import AFGKState
from .projected import (LiftedSolution, ProjectedProblem, lift,
                        projected_equivalence_check, solve_projected,
                        update_qr_wz)
from .regparam import (RegParams, SelectionConfig, gcv_stop_value,
                       minimize_2d, select_dp, select_optimal, select_wgcv)
from .solvers import (METHODS, IterTrace, SolveResult, SolverConfig, af_gmres,
                      af_lsqr, baseline, solve)
from .problems import (TestProblem, add_noise, deblur_problem, load_problem,
                       projection_problem, save_problem,
                       smooth_plus_sparse_truth)

__version__ = "0.1.0"
