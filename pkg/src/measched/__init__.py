"""Cost-aware clinical measurement scheduling on a simulated patient model."""

from .agent import DqnConfig, DQNAgent, FactoredQ, GreedyPolicy, dueling_aggregate, select_action, train
from .baselines import HeuristicPolicy, make_baselines
from .environment import EnvConfig, MeasurementEnv, TransitionRecord, rollout
from .evaluation import EvalReport, evaluate, evaluate_many, rank_features, trace_policy
from .oracle import OracleConfig, predict, predictive_gain
from .simulator import SimConfig, Trajectory, generate_dataset

__version__ = "0.1.0"
