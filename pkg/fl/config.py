import enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from channel.channel import ChannelConfig, ChannelMode, max_probability
from energy.models import RESOURCE_BLOCK_HZ, SUBCARRIERS, CommParams, CompParams
from energy.profiles import PROFILES, comp_profile
from learnkit.models import LINEAR, LOGISTIC, MLP
from quantizer.quantizer import MAX_BITS

# Relative slack when checking p_b against the power-budget ceiling.
_CEILING_SLACK = 1e-12


class Scheme(str, enum.Enum):
    ESOAFL = 'esoafl'
    FEDAVG = 'fedavg'
    FEDPAQ = 'fedpaq'


class StopRule(str, enum.Enum):
    LOSS = 'loss'
    GRAD_NORM = 'grad_norm'


class DataConfig(BaseModel):
    """Synthetic task and its split across clients."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    learner: str = LOGISTIC
    n_classes: int = Field(default=2, ge=2)
    n_features: int = Field(default=10, ge=1)
    n_samples: int = Field(default=2000, ge=2)
    n_hidden: int = Field(default=16, ge=1)
    separation: float = Field(default=3.0, ge=0)
    noise: float = Field(default=0.1, ge=0)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    non_iid_level: float = Field(default=0.0, ge=0, le=1)
    seed: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode='after')
    def _known_learner(self):
        if self.learner not in (LINEAR, LOGISTIC, MLP):
            raise ValueError(f'unknown learner {self.learner!r}')
        return self


class EnergyConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    profile: str = 'small-learner'
    bandwidth_hz: float = Field(default=RESOURCE_BLOCK_HZ, gt=0)
    parallel_symbols: int = Field(default=SUBCARRIERS, ge=1)
    symbol_time: Optional[float] = Field(default=None, gt=0)
    profiles: dict[str, CompParams] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _known_profile(self):
        if self.profile not in self.profiles and self.profile not in PROFILES:
            raise ValueError(f'unknown computation profile {self.profile!r}')
        return self

    def comp_params(self) -> CompParams:
        if self.profile in self.profiles:
            return self.profiles[self.profile]
        return comp_profile(self.profile)


class FlConfig(BaseModel):
    """
    One federated training run.

    ``p_b`` is ignored (treated as 1) when the channel is ideal. With
    ``infinite_precision`` ESOAFL skips quantization entirely.
    """
    model_config = ConfigDict(frozen=True, extra='forbid')

    scheme: Scheme = Scheme.ESOAFL
    n_clients: int = Field(default=10, ge=1)
    local_iterations: int = Field(default=5, ge=1)
    max_rounds: int = Field(default=200, ge=1)
    learning_rate: float = Field(default=0.2, gt=0)
    server_scale: float = Field(default=1.0, gt=0)
    lr_decay: float = Field(default=0.99, gt=0, le=1)
    bits: int = Field(default=4, ge=1, le=MAX_BITS)
    p_b: float = Field(default=0.5, gt=0, le=1)
    target_loss: float = Field(default=0.3, gt=0)
    stop_rule: StopRule = StopRule.LOSS
    batch_size: int = Field(default=32, ge=1)
    full_batch: bool = False
    infinite_precision: bool = False
    threads: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    data: DataConfig = Field(default_factory=DataConfig)
    channel: ChannelConfig = Field(default_factory=ChannelConfig.from_operating_point)
    energy: EnergyConfig = Field(default_factory=EnergyConfig)

    @model_validator(mode='after')
    def _p_b_within_ceiling(self):
        if self.scheme is Scheme.ESOAFL and self.channel.mode is not ChannelMode.IDEAL:
            ceiling = max_probability(self.channel)
            if self.p_b > ceiling * (1.0 + _CEILING_SLACK):
                raise ValueError(
                    f'p_b={self.p_b} exceeds the power-budget ceiling {ceiling:.4f}')
        return self

    @property
    def effective_p_b(self) -> float:
        if self.channel.mode is ChannelMode.IDEAL:
            return 1.0
        return self.p_b

    def comm_params(self, dimension: int) -> CommParams:
        return CommParams(tx_scale=self.channel.tx_scale, rate=self.channel.rate,
                          bandwidth_hz=self.energy.bandwidth_hz,
                          parallel_symbols=self.energy.parallel_symbols,
                          symbol_time=self.energy.symbol_time,
                          dimension=dimension)
