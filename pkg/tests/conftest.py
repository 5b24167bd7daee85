import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sketchnav.config import RunConfig, parse_config


def tiny_config_text() -> str:
    """Small, fast configuration shared by dataset/training/harness tests."""
    return """
[world]
width_range = 36, 40
height_range = 36, 40
rooms_range = 2, 3
min_room_side = 8
obstacles_range = 1, 2

[dataset]
n_train_worlds = 2
episodes_per_world = 2
n_val_seen_episodes = 2
n_val_unseen_worlds = 1
episodes_per_unseen_world = 2
seed = 5
min_geodesic = 1.5
unseen_min_geodesic = 1.5

[model]
raster_size = 64
enc_size = 16
feat_dim = 16
gru_hidden = 32
m1 = 3
m2 = 3
n_dirs = 4
d_model = 16
heads = 2
n_rays = 16

[sensor]
n_rays = 16

[ppo]
rollout_length = 8
epochs_per_update = 2
workers = 2
minibatch_workers = 2
total_updates = 2
eval_every = 1
eval_episodes = 2
learning_rate = 0.001

[run]
max_steps = 60
train_seed = 3
"""


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    return parse_config(tiny_config_text())


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_cfg):
    from sketchnav.dataset import Dataset, generate_dataset
    root = tmp_path_factory.mktemp("dataset")
    generate_dataset(tiny_cfg, root)
    return Dataset(root, tiny_cfg)
