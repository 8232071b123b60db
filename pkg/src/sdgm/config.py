"""Flat ``key = value`` run configuration with typed parsing."""
from __future__ import annotations

import typing
from dataclasses import asdict, dataclass, fields, replace

from .data import AugmentConfig, SynthConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .modulation import ModulationConfig
from .trainer import TrainConfig

REQUIRED = ("seed",)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data
    dataset: str = ""  # empty: synthetic; else a dataset container or a UBC directory
    pairs_file: str = ""
    patch_size: int = 16
    num_classes: int = 200
    patches_per_class: int = 4
    synth_noise: float = 0.03
    test_num_classes: int = 200
    eval_pairs: int = 2000
    # augmentation
    aug_rot90: bool = True
    aug_flip: bool = True
    aug_max_angle: float = 0.1
    aug_min_crop: float = 0.85
    # encoder
    widths: tuple = (256, 128)
    output_dim: int = 32
    dropout_rate: float = 0.3
    use_frn: bool = True
    input_norm: bool = True
    # optimisation
    batch_size: int = 64
    total_iterations: int = 2000
    lr_init: float = 4.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.1
    power_init: float = 10000.0
    # modulation
    m: float = 0.6
    alpha: float = 0.9
    tau: float = 0.6
    self_weight: str = "af"
    power_adjust: bool = True
    # bookkeeping
    log_interval: int = 10
    checkpoint_interval: int = 0  # 0: final checkpoint only

    def synth(self, test: bool = False) -> SynthConfig:
        return SynthConfig(
            num_classes=self.test_num_classes if test else self.num_classes,
            patches_per_class=self.patches_per_class,
            patch_size=self.patch_size,
            noise=self.synth_noise,
            seed=self.seed * 2 + (1 if test else 0),
        )

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            input_dim=self.patch_size ** 2,
            widths=self.widths,
            output_dim=self.output_dim,
            dropout_rate=self.dropout_rate,
            use_frn=self.use_frn,
            input_norm=self.input_norm,
            seed=self.seed,
        )

    def modulation(self) -> ModulationConfig:
        return ModulationConfig(m=self.m, alpha=self.alpha, tau=self.tau,
                                self_weight=self.self_weight, power_adjust=self.power_adjust)

    def augment(self) -> AugmentConfig:
        return AugmentConfig(rot90=self.aug_rot90, flip=self.aug_flip,
                             max_angle=self.aug_max_angle, min_crop=self.aug_min_crop)

    def train(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            total_iterations=self.total_iterations,
            lr_init=self.lr_init,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            warmup_fraction=self.warmup_fraction,
            power_init=self.power_init,
            modulation=self.modulation(),
            augment=self.augment(),
            seed=self.seed,
        )

    def validate(self) -> "RunConfig":
        try:
            self.encoder(), self.train(), self.synth()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


_TYPES = typing.get_type_hints(RunConfig)


def _parse_value(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(t) for t in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r} (expected {kind.__name__})") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val.strip("\"'"))
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"{source}: missing required key {key!r}")
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in asdict(cfg).items():
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def override(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None}).validate()
