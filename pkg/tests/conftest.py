import numpy as np
import pytest

from bilinear_ac import seeding
from bilinear_ac.models import ModelConfig, init_model
from bilinear_ac.sac import Batch, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_model_config(**kw) -> ModelConfig:
    """Small dims so finite-difference sweeps stay fast."""
    defaults = dict(obs_dim=4, act_dim=2, goal_dim=2, n_basis=3,
                    critic_hidden=5, gate_noise_std=0.1)
    defaults.update(kw)
    return ModelConfig(**defaults)


def make_tiny_model(seed=0, **kw):
    cfg = tiny_model_config(**kw)
    return init_model(cfg, seeding.stream(seed, "init"))


def random_batch(model_cfg: ModelConfig, rng, n=6) -> Batch:
    """Random transitions shaped for the given model; goal slice is a
    unit vector occupying the last two observation dims."""
    def obs():
        s = rng.normal(0.0, 0.5, size=(n, model_cfg.obs_dim))
        ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
        s[:, -2] = np.cos(ang)
        s[:, -1] = np.sin(ang)
        return s

    return Batch(s=obs(), a=rng.uniform(-1, 1, size=(n, model_cfg.act_dim)),
                 r=rng.normal(size=n), s2=obs(), done=np.zeros(n),
                 theta=np.zeros(n))


def tiny_train_config(**kw) -> TrainConfig:
    defaults = dict(total_steps=40, warmup_steps=10, eval_every=20,
                    batch=8, buffer_capacity=200, seeds=(0,))
    defaults.update(kw)
    return TrainConfig(**defaults)
