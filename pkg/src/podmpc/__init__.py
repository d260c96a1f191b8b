"""NMPC for a 1-D semilinear advection-diffusion-reaction PDE with a POD/DEIM fast path."""

from .fd_model import (FeedbackRollout, FullOrderModel, ModelParams,
                       NewtonDivergenceError, SpatialGrid, Trajectory, build_grid,
                       feedback_rollout, h_inner, h_norm, l2t_h_norm, solve_adjoint,
                       solve_state, v_inner, v_norm)
from .mpc import (MetricRecord, MpcConfig, MpcResult, RomSettings, evaluate_metrics,
                  perturb_initial, run_nmpc, run_pod_nmpc)
from .openloop import (OpenLoopProblem, OpenLoopSolution, horizon_cost, project_box,
                       reduced_gradient, running_cost, solve_open_loop)
from .pod_rom import (DeimData, PodBasis, ReducedModel, SnapshotSet, build_deim,
                      build_rom, choose_rank, collect_snapshots, compute_pod_basis,
                      pod_energy, project_onto_basis, projection_residual,
                      solve_rom_adjoint, solve_rom_state)
from .presets import PRESETS, RunPreset, get_preset
from .stability import (AlphaFormulaError, HorizonNotFoundError, HorizonResult,
                        InfeasibleGainError, StabilityConstants, alpha_horizon,
                        alpha_horizon_rom, controllability_constants, decay_rate,
                        feedback_bounds, minimal_horizon, optimize_feedback_gain,
                        rom_error_term)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
