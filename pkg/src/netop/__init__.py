"""netop: a self-repairing network operator.

Seeded small-network simulator with six fault kinds and a repair oracle,
an interval-embedding observation codec, a sub-stepped repair environment
with +1/-1 rewards, and a 7-quantile scoring network trained with
critical-loss weighting until it emits 100% correct repair instructions.
"""

from . import cli, codec, env, netsim, neural, trainer
from .netsim import SMALL_POOL_CONFIG, SimConfig
from .trainer import TrainConfig, small_pool_train_config

__version__ = "0.1.0"

__all__ = [
    "cli",
    "codec",
    "env",
    "netsim",
    "neural",
    "trainer",
    "SimConfig",
    "SMALL_POOL_CONFIG",
    "TrainConfig",
    "small_pool_train_config",
    "__version__",
]
