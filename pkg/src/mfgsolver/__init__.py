"""Actor-critic solver for mean-field games.

Jointly trains a feedback control (actor), a pathwise value-gradient estimate
(critic), and a score-based population model, validating against closed-form
linear-quadratic equilibria.
"""

__version__ = "0.1.0"

from .baselines import (BaselineLQ, baseline_execution, baseline_simulate,
                        baseline_systemic, conditional_optimal_control,
                        equilibrium_control)
from .evaluate import MetricsReport, evaluate, evaluate_cost
from .langevin import LmcConfig, lmc_sample, measures_for_iteration
from .models import (Coupling, FlockingParams, MfgModel, OptimalExecutionParams,
                     ParticleEnsemble, SystemicRiskParams, TimeGrid,
                     empirical_mean, flocking_interaction, make_flocking,
                     make_optimal_execution, make_systemic_risk)
from .neural import (AdamState, LrSchedule, Mlp, NetStack, adam_step, backward,
                     divergence, divergence_backward, forward, init_mlp, lr_at,
                     load_checkpoint, make_netstack, save_checkpoint)
from .objectives import (ActorRegion, actor_loss_and_grads, actor_region,
                         critic_loss_and_grads, latin_hypercube,
                         score_loss_and_grads)
from .simulate import TrajectoryBatch, sample_initial, simulate
from .trainer import (IterationRecord, TrainConfig, TrainingAbort, TrainResult,
                      lyapunov_actor, lyapunov_critic, train, w2_gap)
from .transport import Assignment, hungarian, ot_match, otgp_update, w2_empirical
