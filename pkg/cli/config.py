"""
Experiment configuration: one TOML document, one pydantic section per table.

An empty document is a valid configuration; every default mirrors the
reference operating point (10 clients, eta = 0.2, 15 dB SNR, p_b ceiling
0.77, 4-bit quantization).
"""
import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import tomlkit
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tomlkit.exceptions import ParseError

from channel.channel import ChannelConfig, ChannelMode, max_probability
from cli.tasks import TaskKind
from core.errors import ConfigError, DomainError
from energy.models import RESOURCE_BLOCK_HZ, SUBCARRIERS, CompParams
from energy.profiles import PROFILES
from fl.config import DataConfig, EnergyConfig, FlConfig, Scheme, StopRule
from quantizer.quantizer import MAX_BITS


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class ExperimentSection(_Section):
    task: TaskKind = TaskKind.TRAIN
    seed: int = Field(default=0, ge=0)
    out: Optional[str] = None
    threads: Optional[int] = Field(default=None, ge=1)


class FlSection(_Section):
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


class ChannelSection(_Section):
    """
    Either the operating point (SNR and p_b ceiling) or explicit
    ``tx_scale`` with optional ``noise_var``.
    """
    mode: ChannelMode = ChannelMode.STATISTICAL
    snr_db: float = 15.0
    max_probability: float = Field(default=0.77, gt=0, lt=1)
    power_budget: float = Field(default=0.2, gt=0)
    rate: float = Field(default=1.0, gt=0)
    tx_scale: Optional[float] = Field(default=None, gt=0)
    noise_var: Optional[float] = Field(default=None, ge=0)


class CommSection(_Section):
    bandwidth_hz: float = Field(default=RESOURCE_BLOCK_HZ, gt=0)
    parallel_symbols: int = Field(default=SUBCARRIERS, ge=1)
    symbol_time: Optional[float] = Field(default=None, gt=0)


class EnergySection(_Section):
    profile: str = 'small-learner'
    profiles: dict[str, CompParams] = Field(default_factory=dict)


class SweepSection(_Section):
    h_values: list[int] = Field(default_factory=lambda: [1, 2, 3, 5, 8])
    p_values: list[float] = Field(default_factory=lambda: [0.2, 0.35, 0.5, 0.77])
    seeds: list[int] = Field(default_factory=lambda: [0])


class FitSection(_Section):
    q: Optional[float] = Field(default=None, ge=0)
    q_trials: int = Field(default=10_000, ge=10_000)
    samples: Optional[str] = None


class JcpSection(_Section):
    a0: Optional[float] = Field(default=None, ge=0)
    b0: Optional[float] = Field(default=None, ge=0)
    c0: Optional[float] = None
    q: Optional[float] = Field(default=None, ge=0)
    constants: Optional[str] = None
    payload_dimension: Optional[int] = Field(default=None, ge=1)
    h_min: int = Field(default=1, ge=1)
    h_max: int = Field(default=50, ge=1)
    gamma0: float = Field(default=1.0, gt=0, le=1)
    xi: float = Field(default=1e-5, gt=0)
    iota: float = Field(default=1e-5, gt=0)
    grid_resolution: float = Field(default=1e-3, gt=0)

    @property
    def has_constants(self) -> bool:
        return None not in (self.a0, self.b0, self.c0, self.q)


class PhySection(_Section):
    trials: int = Field(default=100_000, ge=1000)
    n_clients: int = Field(default=10, ge=1)
    dimension: int = Field(default=4, ge=1)
    p_values: list[float] = Field(default_factory=lambda: [0.3, 0.5, 0.77])
    modem_clients: int = Field(default=3, ge=1)
    modem_bits: int = Field(default=3, ge=1, le=8)
    power_draws: int = Field(default=1_000_000, ge=1000)


class ExperimentConfig(_Section):
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    data: DataConfig = Field(default_factory=DataConfig)
    fl: FlSection = Field(default_factory=FlSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    comm: CommSection = Field(default_factory=CommSection)
    energy: EnergySection = Field(default_factory=EnergySection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    fit: FitSection = Field(default_factory=FitSection)
    jcp: JcpSection = Field(default_factory=JcpSection)
    phy: PhySection = Field(default_factory=PhySection)

    @property
    def task(self) -> TaskKind:
        return self.experiment.task

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def channel_config(self) -> ChannelConfig:
        ch = self.channel
        if ch.tx_scale is None:
            return ChannelConfig.from_operating_point(
                snr_db=ch.snr_db, max_probability=ch.max_probability,
                power_budget=ch.power_budget, rate=ch.rate, mode=ch.mode)
        noise_var = ch.noise_var
        if noise_var is None:
            noise_var = ch.tx_scale / 10.0 ** (ch.snr_db / 10.0)
        return ChannelConfig(rate=ch.rate, noise_var=noise_var, tx_scale=ch.tx_scale,
                             power_budget=ch.power_budget, mode=ch.mode)

    def energy_config(self) -> EnergyConfig:
        return EnergyConfig(profile=self.energy.profile,
                            profiles=self.energy.profiles,
                            **self.comm.model_dump())

    def fl_config(self, **overrides) -> FlConfig:
        fields = self.fl.model_dump()
        fields.update(seed=self.seed, threads=self.experiment.threads or 1,
                      data=self.data, channel=self.channel_config(),
                      energy=self.energy_config())
        fields.update(overrides)
        return FlConfig(**fields)

    def with_overrides(self, task: Optional[TaskKind] = None,
                       seed: Optional[int] = None, out: Optional[str] = None,
                       threads: Optional[int] = None) -> 'ExperimentConfig':
        updates = {}
        if task is not None:
            updates['task'] = TaskKind(task)
        if seed is not None:
            updates['seed'] = seed
        if out is not None:
            updates['out'] = out
        if threads is not None:
            updates['threads'] = threads
        if not updates:
            return self
        return self.model_copy(
            update={'experiment': self.experiment.model_copy(update=updates)})

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump; output dir and threads excluded."""
        document = self.model_dump(mode='json')
        document['experiment'].pop('out')
        document['experiment'].pop('threads')
        canonical = json.dumps(document, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _field_path(error: dict) -> str:
    return '.'.join(str(part) for part in error['loc']) or '<root>'


def check_cross_fields(cfg: ExperimentConfig) -> None:
    """
    Checks that span sections.

    Raises
    ------
    ConfigError
        Naming the offending field.
    """
    try:
        channel = cfg.channel_config()
    except (ValidationError, DomainError) as exc:
        raise ConfigError('channel', str(exc)) from None
    if cfg.fl.scheme is Scheme.ESOAFL and channel.mode is not ChannelMode.IDEAL:
        ceiling = max_probability(channel)
        if cfg.fl.p_b > ceiling * (1.0 + 1e-12):
            raise ConfigError(
                'fl.p_b', f'{cfg.fl.p_b} exceeds the power-budget ceiling {ceiling:.4f}')
    for p in cfg.sweep.p_values:
        if not 0.0 < p <= ceiling_or_one(channel) * (1.0 + 1e-12):
            raise ConfigError('sweep.p_values', f'{p} is outside (0, p_b ceiling]')
    if not cfg.sweep.h_values or min(cfg.sweep.h_values) < 1:
        raise ConfigError('sweep.h_values', 'need at least one H >= 1')
    if cfg.energy.profile not in cfg.energy.profiles and cfg.energy.profile not in PROFILES:
        raise ConfigError('energy.profile', f'unknown profile {cfg.energy.profile!r}')
    if cfg.jcp.h_max < cfg.jcp.h_min:
        raise ConfigError('jcp.h_max', 'must not be below jcp.h_min')


def ceiling_or_one(channel: ChannelConfig) -> float:
    if channel.mode is ChannelMode.IDEAL:
        return 1.0
    return max_probability(channel)


def parse_config(document: dict) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(document)
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ConfigError(_field_path(error), error['msg']) from None
    check_cross_fields(cfg)
    return cfg


def load_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    """
    Reads and validates an experiment configuration; ``None`` yields the
    defaults.

    Raises
    ------
    ConfigError
        On unreadable TOML, unknown keys or out-of-domain values.
    """
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError('<file>', f'cannot read {path}: {exc}') from None
    try:
        document = tomlkit.parse(text).unwrap()
    except ParseError as exc:
        raise ConfigError('<file>', f'invalid TOML: {exc}') from None
    return parse_config(document)
