"""Data-driven finite MDP abstractions of black-box stochastic systems with
sampled bisimulation certificates."""
from .blackbox import (INDEPENDENT, PAIRED, BlackBoxSystem, InputSet, NoiseStream, StateBox, affine_system,
                       jet_engine_system, linear_system, sample_states, system_from_config)
from .errors import (ConfigError, DataMdpError, IncompatibleFile, InputNotInSet, InsufficientSamples,
                     InvalidInterval, InvalidParameter, InvalidState, SamplingError, SolverFailure,
                     Unsatisfiable)
from .estimator import (FiniteMdp, GaussianFit, IntervalMdp, estimate_imdp, fit_gaussian_mle, imdp_rho,
                        imdp_to_point_mdp, mdp_from_gaussian, mle_mdp, model_based_mdp)
from .grid import Grid, build_grid, deflate
from .lp import LinearProgram, LpSolution, cross_check, solve
from .sbf import Basis, GuaranteeReport, SbfTemplate, compose_guarantee, evaluate, closeness_bound
from .scenario import (ScenarioConfig, SbfCertificate, build_scp, certify, eps2_from, lipschitz_linear,
                       lipschitz_nonlinear, min_realizations_M, min_samples_N, min_transition_samples_G,
                       solve_scp)
from .synth import (Policy, SafetySpec, ValueTable, closed_loop_sim, compare_trajectories,
                    robust_safety_value_iteration, safety_value_iteration)

__version__ = "0.1.0"
