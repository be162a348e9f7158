from actoreg.data.envs import (
    ENVIRONMENTS,
    Environment,
    Rollout,
    make_env,
    point_goal_env,
    reference_returns,
    rollout,
)
from actoreg.data.dataset import (
    SplitDataset,
    TransitionDataset,
    generate_dataset,
    load_dataset,
    save_dataset,
    split,
)

__all__ = [
    "ENVIRONMENTS",
    "Environment",
    "Rollout",
    "SplitDataset",
    "TransitionDataset",
    "generate_dataset",
    "load_dataset",
    "make_env",
    "point_goal_env",
    "reference_returns",
    "rollout",
    "save_dataset",
    "split",
]
