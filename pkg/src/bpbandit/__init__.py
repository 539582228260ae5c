"""Online maximization of BP and weakly-submodular set functions via
Nystrom-sketched GP-UCB contextual bandits, with the offline greedy machinery
and brute-force oracles used to verify the robustness bounds."""

__version__ = "0.1.0"

from .bp import BPObjective, DistortedObjective
from .curvature import (CurvatureReport, WeakSubmodReport, curvature_report,
                        generalized_curvature, modular_lower_bound,
                        submodular_curvature, submodularity_ratio,
                        supermodular_curvature, weak_submod_report)
from .kernels import (ContextPoint, KernelSpec, composite_kernel,
                      effective_dimension, gram, information_gain_bound,
                      kernel_eval)
from .nystrom import (BetaSchedule, NystromState, PosteriorEstimate, beta,
                      exact_posterior)
from .offline import (AlphaRatios, SlackSchedule, alpha_ratios,
                      approximate_greedy, brute_force_opt, check_robust_bound,
                      distorted_greedy, greedy)
from .oracles import (GroundSet, SetFunctionOracle, make_concave_over_modular,
                      make_facility_location, make_modular,
                      make_naive_bayes_al, make_power_cardinality,
                      make_sum_dispersion, marginal_gain, scale_oracle,
                      sum_oracles, verify_mnn_properties)
from .sim import (Environment, FeedbackRecord, RegretTrace, baseline_tables,
                  compute_regret, env_step, run_mnn_ucb, run_mnn_ucb_separate,
                  run_oracle_policy, run_trials)

__all__ = [name for name in dir() if not name.startswith("_")]
