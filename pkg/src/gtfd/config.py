"""JSON experiment configuration: train / data / arch blocks, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from . import nn
from .data import DataSpec
from .train import Nets, TrainConfig

GENERATOR_KEYS = {
    "ae1d": {"widths", "bottleneck"},
    "unet": {"widths"},
    "linear": {"init"},
    "mlp": {"hidden", "activation"},
}
CRITIC_KEYS = {
    "resnet": {"base_channels", "n_blocks", "slope"},
    "mlp": {"hidden", "activation"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ArchConfig:
    generator: dict = field(default_factory=lambda: {"kind": "ae1d"})
    critic: dict = field(default_factory=lambda: {"kind": "resnet"})

    def __post_init__(self):
        for block, table, default in (("generator", GENERATOR_KEYS, "ae1d"), ("critic", CRITIC_KEYS, "resnet")):
            d = {"kind": default, **getattr(self, block)}
            setattr(self, block, d)
            kind = d["kind"]
            if kind not in table:
                raise ConfigError(f"arch.{block}.kind must be one of {sorted(table)}, got {kind!r}")
            extra = set(d) - table[kind] - {"kind"}
            if extra:
                raise ConfigError(f"unknown keys in arch.{block} ({kind}): {sorted(extra)}")


def _strict(cls, d: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSpec = field(default_factory=DataSpec)
    arch: ArchConfig = field(default_factory=ArchConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        extra = set(d) - {"train", "data", "arch"}
        if extra:
            raise ConfigError(f"unknown top-level config keys: {sorted(extra)}")
        return cls(_strict(TrainConfig, d.get("train", {}), "train"),
                   _strict(DataSpec, d.get("data", {}), "data"),
                   _strict(ArchConfig, d.get("arch", {}), "arch"))

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as f:
            try:
                return cls.from_dict(json.load(f))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e})") from None

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(), "data": asdict(self.data), "arch": asdict(self.arch)}


def build_generator(gen: dict, sample_shape: tuple) -> nn.NetworkSpec:
    kind = gen["kind"]
    if kind == "ae1d":
        return nn.build_generator_1d(sample_shape[-1], tuple(gen.get("widths", (16, 32, 64))),
                                     gen.get("bottleneck", 64))
    if kind == "unet":
        return nn.build_generator_unet(sample_shape[0], sample_shape[1:], tuple(gen.get("widths", (16, 32, 64))))
    if kind == "linear":
        return nn.build_linear(sample_shape[0], gen.get("init"))
    return nn.build_mlp(sample_shape[0], tuple(gen.get("hidden", (16,))), sample_shape[0],
                        gen.get("activation", "relu"), role="generator")


def build_critic(crit: dict, sample_shape: tuple) -> nn.NetworkSpec:
    if crit["kind"] == "resnet":
        return nn.build_critic(len(sample_shape) - 1, sample_shape[0], sample_shape[1:],
                               crit.get("base_channels", 16), crit.get("n_blocks", 5),
                               crit.get("slope", 0.2))
    return nn.build_mlp(sample_shape[0], tuple(crit.get("hidden", (64, 64))), 1,
                        crit.get("activation", "leakyrelu"), role="critic")


def build_nets(cfg: ExperimentConfig, sample_shape: tuple) -> Nets:
    """Specs and freshly initialised parameters for every network the mode needs."""
    seed = cfg.train.seed
    g_spec = build_generator(cfg.arch.generator, sample_shape)
    nets = Nets(g_spec, nn.init_params(g_spec, seed, stream=101))
    for i, name in enumerate(cfg.train.active_terms):
        spec = build_critic(cfg.arch.critic, sample_shape)
        nets.critic_specs[name] = spec
        nets.critics[name] = nn.init_params(spec, seed, stream=102 + i)
    return nets
