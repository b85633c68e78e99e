from .estimator import EstimatorInputs, Fingerprint, StateEstimator, estimate_state
from .learner import FixedPolicyAgent, Learner, TrainingDiverged, evaluate, run_episode, train
from .losses import a2c_losses, sil_losses, td_advantage
from .policy import ActionSpace, ActorCritic, PolicyOutput, entropy, log_prob, select_actions
from .replay import PrioritizedBuffer
