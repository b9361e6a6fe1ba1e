"""Run configuration and its ``key = value`` INI text form."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .afn import LossWeights
from .data import AugmentConfig
from .fcn import BackbonePlan, ConfigError
from .model import ModelConfig
from .optim import OptimConfig


@dataclass
class DataConfig:
    kind: str = "synthetic"  # "synthetic" | "folder"
    image_size: int = 32
    # synthetic
    classes: int = 7
    per_class: int = 200
    eval_per_class: int = 50
    noise: float = 0.05
    seed: int = 1
    # folder
    root: str = ""
    train_manifest: str = "manifest.csv"
    eval_manifest: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "folder"):
            raise ConfigError(f"unknown data kind {self.kind!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    epochs: int = 40
    batch_size: int = 256
    epoch_size: int = 0  # 0 -> training-set size
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model.num_heads == 1 and self.weights.partition != 0:
            raise ConfigError("a single attention head requires the partition weight to be 0")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 for batch-norm training")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.data.kind == "synthetic" and self.data.classes != self.model.num_classes:
            raise ConfigError(
                f"synthetic data has {self.data.classes} classes but the model expects {self.model.num_classes}"
            )
        k = self.model.plan.downsample
        if self.data.image_size % k:
            raise ConfigError(f"image size {self.data.image_size} not divisible by downsampling factor {k}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_model(self, **changes) -> "RunConfig":
        return self.replace(model=dataclasses.replace(self.model, **changes))

    def with_weights(self, affinity: Optional[float] = None, partition: Optional[float] = None) -> "RunConfig":
        w = self.weights
        return self.replace(
            weights=LossWeights(
                w.affinity if affinity is None else affinity,
                w.partition if partition is None else partition,
            )
        )

    # ------------------------------------------------------------- presets
    @classmethod
    def full(cls) -> "RunConfig":
        """Full-size protocol: 18-layer residual plan, 224 px, K=4, 40 epochs, batch 256."""
        return cls(
            model=ModelConfig(plan=BackbonePlan.resnet18(), num_heads=4, num_classes=7),
            data=DataConfig(kind="folder", image_size=224, classes=7),
        )

    @classmethod
    def toy(cls) -> "RunConfig":
        """Desk-scale run on the synthetic 4-class set."""
        return cls(
            model=ModelConfig(plan=BackbonePlan.toy(), num_heads=4, num_classes=4),
            optim=OptimConfig.adam(lr=1e-3),
            data=DataConfig(kind="synthetic", classes=4, per_class=200, eval_per_class=50, image_size=32),
            augment=AugmentConfig(flip_p=0.5, rotate_p=0.5, erase_p=0.25),
            epochs=15,
            batch_size=32,
        )

    # ---------------------------------------------------------- text form
    def to_text(self) -> str:
        m, p = self.model, self.model.plan
        a = self.augment
        sections = {
            "model": {
                "widths": _ints(p.widths),
                "blocks": _ints(p.blocks),
                "strides": _ints(p.strides),
                "stem": p.stem,
                "in_channels": p.in_channels,
                "num_heads": m.num_heads,
                "feature_length": m.feature_dim,
                "num_classes": m.num_classes,
                "spatial_reduction": m.spatial_reduction,
                "channel_reduction": m.channel_reduction,
            },
            "loss": {"affinity": self.weights.affinity, "partition": self.weights.partition},
            "optim": dataclasses.asdict(self.optim),
            "data": dataclasses.asdict(self.data),
            "augment": {
                "flip_p": a.flip_p,
                "rotate_p": a.rotate_p,
                "rotate_degrees": a.rotate_degrees,
                "erase_p": a.erase_p,
                "erase_area": _floats(a.erase_area),
                "erase_aspect": _floats(a.erase_aspect),
                "fill": "" if a.fill is None else _floats(a.fill),
            },
            "train": {
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "epoch_size": self.epoch_size,
                "seed": self.seed,
                "deterministic": self.deterministic,
            },
        }
        lines = []
        for name, values in sections.items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_fmt(v)}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()

    @classmethod
    def from_text(cls, text: str, base: Optional["RunConfig"] = None) -> "RunConfig":
        """Parse INI text; keys not present keep the values from ``base`` (default: ``RunConfig()``)."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        known = {"model", "loss", "optim", "data", "augment", "train"}
        unknown = set(parser.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        base = base or cls()
        sec = {s: dict(parser[s]) for s in parser.sections()}

        def take(section: str, key: str, default, conv):
            values = sec.get(section, {})
            if key not in values:
                return default
            raw = values.pop(key)
            try:
                return conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None

        p, m = base.model.plan, base.model
        plan = BackbonePlan(
            widths=take("model", "widths", p.widths, _parse_ints),
            blocks=take("model", "blocks", p.blocks, _parse_ints),
            strides=take("model", "strides", p.strides, _parse_ints),
            stem=take("model", "stem", p.stem, str),
            in_channels=take("model", "in_channels", p.in_channels, int),
        )
        feature_length = take("model", "feature_length", None, int)
        if feature_length is not None and feature_length != plan.feature_dim:
            raise ConfigError(
                f"feature_length {feature_length} must equal the backbone width {plan.feature_dim}"
            )
        model = ModelConfig(
            plan=plan,
            num_heads=take("model", "num_heads", m.num_heads, int),
            num_classes=take("model", "num_classes", m.num_classes, int),
            spatial_reduction=take("model", "spatial_reduction", m.spatial_reduction, int),
            channel_reduction=take("model", "channel_reduction", m.channel_reduction, int),
        )
        weights = LossWeights(
            take("loss", "affinity", base.weights.affinity, float),
            take("loss", "partition", base.weights.partition, float),
        )
        optim = OptimConfig(**{
            f.name: take("optim", f.name, getattr(base.optim, f.name), _converter(f.type))
            for f in dataclasses.fields(OptimConfig)
        })
        data = DataConfig(**{
            f.name: take("data", f.name, getattr(base.data, f.name), _converter(f.type))
            for f in dataclasses.fields(DataConfig)
        })
        a = base.augment
        fill = take("augment", "fill", a.fill, lambda s: _parse_floats(s) if s.strip() else None)
        augment = AugmentConfig(
            flip_p=take("augment", "flip_p", a.flip_p, float),
            rotate_p=take("augment", "rotate_p", a.rotate_p, float),
            rotate_degrees=take("augment", "rotate_degrees", a.rotate_degrees, float),
            erase_p=take("augment", "erase_p", a.erase_p, float),
            erase_area=take("augment", "erase_area", a.erase_area, _parse_floats),
            erase_aspect=take("augment", "erase_aspect", a.erase_aspect, _parse_floats),
            fill=fill,
        )
        cfg = cls(
            model=model,
            weights=weights,
            optim=optim,
            data=data,
            augment=augment,
            epochs=take("train", "epochs", base.epochs, int),
            batch_size=take("train", "batch_size", base.batch_size, int),
            epoch_size=take("train", "epoch_size", base.epoch_size, int),
            seed=take("train", "seed", base.seed, int),
            deterministic=take("train", "deterministic", base.deterministic, _parse_bool),
        )
        leftovers = {f"[{s}] {k}" for s, vals in sec.items() for k in vals}
        if leftovers:
            raise ConfigError(f"unknown config keys: {sorted(leftovers)}")
        return cfg

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path, base: Optional["RunConfig"] = None) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), base)

    def override(self, assignments: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` overrides on top of this config; a repeated key keeps its last value."""
        lines: dict[str, dict[str, str]] = {}
        for item in assignments:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            lines.setdefault(section, {})[name.strip()] = value.strip()
        text = "\n".join(f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items()) for s, kv in lines.items())
        return RunConfig.from_text(text, base=self)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _ints(xs) -> str:
    return ", ".join(str(int(x)) for x in xs)


def _floats(xs) -> str:
    return ", ".join(repr(float(x)) for x in xs)


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _converter(type_name):
    name = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", "")
    return {"int": int, "float": float, "str": str, "bool": _parse_bool}.get(name, str)
