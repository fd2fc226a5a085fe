"""Fast adaptation to unknown rule-based peers via context-aware RL.

A context-aware PPO agent is trained against pools of rule-based peers in
exact Kuhn Poker and a partially observable predator-prey particle world.
A peer-identification head over the cross-episode context encoder both
shapes the representation and supplies a decaying exploration reward; the
trained policy is then evaluated by multi-episode online adaptation
against held-out peers.
"""

from .adapt import (
    MetaEpisodeReport,
    adaptation_runs,
    cross_horizon,
    detect_change,
    run_adaptation,
    windowed_metrics,
)
from .context import (
    Context,
    ContextEncoder,
    EncoderSpec,
    Identifier,
    RewardSchedule,
    aux_loss,
    exploration_reward,
    mixed_reward,
)
from .core import Env, MetaEpisodeClock, StepOutcome, cumulative_step, rng_stream
from .kuhn import KuhnEnv, KuhnPeerParams, best_response, exact_ev
from .pools import PoolSpec, gen_kuhn_pool, gen_pp_pool, load_pool, save_pool
from .predprey import PhysicsConfig, PredPreyEnv
from .trainer import ModelSpec, Models, PPOConfig, Trainer, build_env, build_models

__version__ = "0.1.0"
