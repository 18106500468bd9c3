"""Learning a less-conservative control barrier function from a handcrafted
one, with a predictive controller keeping the real system safe while the
training data is collected."""

from ._backend import BACKEND, NUMBA_ENABLED
from .barrier import (ConstraintSet, DistanceFunctions, HandcraftedBarrier,
                      LearnedBarrier, LieDerivatives, LinearClassK,
                      ballbeam_constraints, integrator_constraints,
                      lie_derivatives, make_hand_barrier)
from .dynamics import (BallOnBeam, ControlAffineSystem, DoubleIntegrator,
                       IntegrationDivergedError, Linearization, SimConfig,
                       make_system)
from .mpc import (LinearMpcPolicy, LinearMpcProblem, MpcInfeasibleError,
                  MpcSolution, NonlinearMpcPolicy, NonlinearMpcProblem,
                  dare_fixed_point, discretize_zoh, lqr_gain,
                  solve_linear_mpc, solve_nonlinear_mpc)
from .network import (AdamState, ForwardCache, Layer, Network, adam_step,
                      backward, forward, forward_batch, init_network,
                      input_jacobian)
from .persistence import (WeightsFormatError, WeightsVersionError,
                          export_contour, export_trajectory, load_weights,
                          save_weights, verify_manifest, write_manifest,
                          write_metrics)
from .qp import QpResult, solve_qp
from .qp_filter import (CbfQp, InfeasibleConstraintError, SafeControl,
                        build_cbf_qp, filtered_policy, solve_cbf_qp)
from .simulate import Trajectory, simulate_filtered, simulate_policy
from .training import (Dataset, EpisodeAbortedError, EpochStats, LossWeights,
                       SafetyViolationError, TrainConfig, collect_episode,
                       loss_gradient, loss_regularizer, loss_safe,
                       loss_unsafe, make_training_setup, total_loss, train)

__version__ = "0.1.0"
