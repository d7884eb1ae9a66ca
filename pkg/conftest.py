import numpy as np
import pytest

from channel.channel import ChannelConfig, ChannelMode
from fl.config import DataConfig, FlConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def channel_cfg():
    return ChannelConfig.from_operating_point()


@pytest.fixture
def make_fl_config():
    """Small logistic task; keyword arguments override FlConfig fields."""
    def factory(mode=ChannelMode.STATISTICAL, data=None, **overrides):
        fields = dict(
            n_clients=4, local_iterations=2, max_rounds=10, batch_size=16,
            target_loss=1e-3, seed=7,
            data=data or DataConfig(n_samples=400, n_features=4, separation=4.0),
            channel=ChannelConfig.from_operating_point(mode=mode),
        )
        fields.update(overrides)
        return FlConfig(**fields)
    return factory
