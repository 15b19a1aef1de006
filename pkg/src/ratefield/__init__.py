"""ratefield: Gaussian mean-field solver for stochastic firing-rate networks.

The solution of the multi-population moment equations is the unique fixed
point of a map on (mean, covariance-function) pairs; `solve_fixed_point`
iterates that map. `mc` provides a finite-network Euler-Maruyama oracle,
`stationary` the trivial/chaotic regime classification, and `analysis` the
two-population linearization and parameter sweeps.
"""

__version__ = "0.1.0"

from .model import (Constant, ConnectivityStats, ErfForm, InputSignal, Logistic,
                    NetworkSpec, PiecewiseConstant, PopulationParams, Sigmoid,
                    Sinusoid, SpecValidationError, SqrtClassI, Tanh, TimeGrid,
                    default_grid, eval_input, eval_sigmoid, load_spec, save_spec,
                    scale_connectivity, spec_from_dict, spec_to_dict,
                    validate_spec, with_gain, with_gain_spec)
from .quadrature import (BivariateGaussianStats, DEFAULT_ORDER, GhRule,
                         delta_kernel, delta_matrix, erf_delta_closed,
                         erf_delta_matrix, erf_mean_closed, gauss_expect, gh_rule)
from .meanfield import (MomentState, NumericalError, SolveReport, apply_F,
                        initial_state, ou_covariance, ou_covariance_matrix,
                        solve_fixed_point, wilson_cowan_solve, write_cov_csv,
                        write_means_csv)
from .stationary import (Regime, StationaryProfile, UnbracketedTransitionError,
                         check_stationary_preconditions, classify_gain,
                         classify_regime, extract_profile, find_gc)
from .mc import (EmpiricalMoments, McConfig, McEnsemble, compare_mc_mf,
                 empirical_moments, run_ensemble, sample_weights,
                 simulate_network)
from .analysis import (HopfAnalysis, JacobianEigs, Oscillation, SweepPoint,
                       SweepResult, apply_parameter, branch_split_value,
                       detect_oscillation, h_factor, hopf_analysis,
                       hopf_threshold, is_feedback_loop, jacobian_eigs, sweep)
