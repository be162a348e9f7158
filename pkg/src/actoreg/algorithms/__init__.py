from actoreg.algorithms.common import Batch, categorical_critic_loss, expectile_loss, polyak_update, two_hot
from actoreg.algorithms.iql import IqlConfig, IqlTrainer, iql_step
from actoreg.algorithms.rebrac import RebracConfig, RebracTrainer, rebrac_step
from actoreg.algorithms.train import RunResult, TrainConfig, make_trainer, train_run

__all__ = [
    "Batch", "categorical_critic_loss", "expectile_loss", "polyak_update", "two_hot",
    "IqlConfig", "IqlTrainer", "iql_step", "RebracConfig", "RebracTrainer", "rebrac_step",
    "RunResult", "TrainConfig", "make_trainer", "train_run",
]
