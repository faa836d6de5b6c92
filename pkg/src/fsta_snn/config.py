"""Run configuration: one strict YAML document per run.

Every section maps onto a dataclass. Parsing walks the YAML node tree so
errors (unknown key, wrong type, failed validation, missing file) carry the
line they refer to. Relative paths resolve against the config file's folder.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import DataConfig
from .fsta import FstaConfig
from .model import CATALOG, LAYER_KINDS, LayerSpec, NetworkSpec, insert_fsta
from .neuron import LifParams
from .train import TrainConfig

CUSTOM_ARCH = "custom"


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class LayerSection:
    kind: str
    channels: int | None = None
    kernel: int = 3
    stride: int = 1
    stage: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS or self.kind == "fsta":
            raise ValueError(f"layer kind must be one of {[k for k in LAYER_KINDS if k != 'fsta']}")


@dataclass
class NetworkSection:
    arch: str = "snn-tiny"
    num_classes: int | None = None  # None: taken from the dataset
    input_shape: list[int] | None = None  # None: taken from the dataset
    residual: str = "membrane"
    widths: list[int] | None = None  # resnet20-snn stage widths
    layers: list[LayerSection] | None = None  # required when arch is "custom"
    lif: LifParams = field(default_factory=LifParams)

    def __post_init__(self):
        if self.arch != CUSTOM_ARCH and self.arch not in CATALOG:
            raise ValueError(f"unknown arch {self.arch!r}; choose from {sorted(CATALOG) + [CUSTOM_ARCH]}")
        if self.arch == CUSTOM_ARCH and not self.layers:
            raise ValueError("arch 'custom' needs a non-empty layers list")
        if self.arch != CUSTOM_ARCH and self.layers is not None:
            raise ValueError("layers may only be given with arch 'custom'")
        if self.widths is not None and self.arch != "resnet20-snn":
            raise ValueError("widths only applies to resnet20-snn")
        if self.input_shape is not None and len(self.input_shape) != 3:
            raise ValueError("input_shape must be [C, H, W]")


@dataclass
class FstaSection:
    enabled: bool = False
    placement: list[int] = field(default_factory=lambda: [0, 1])
    kernel_size: int = 7
    mode: str = "serial"
    learnable_scales: bool = True

    def __post_init__(self):
        self.module_config()

    def module_config(self) -> FstaConfig:
        return FstaConfig(self.kernel_size, self.mode, self.learnable_scales)


@dataclass
class SpectrumSection:
    trace: str | None = None  # spike container file or folder of them; skips inference
    split: str = "test"
    max_samples: int = 64
    per_channel: bool = False
    halfwidths: list[int] = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError("split must be 'train' or 'test'")
        if self.max_samples < 1:
            raise ValueError("max_samples must be >= 1")


@dataclass
class EnergySection:
    acs: float | None = None  # given together: skip counting and price these directly
    macs: float | None = None
    e_ac_pj: float = 0.9
    e_mac_pj: float = 4.6
    split: str = "test"
    max_samples: int = 64

    def __post_init__(self):
        if (self.acs is None) != (self.macs is None):
            raise ValueError("acs and macs must be given together")
        if self.acs is not None and min(self.acs, self.macs) < 0:
            raise ValueError("op counts must be non-negative")
        if not (self.e_ac_pj > 0 and self.e_mac_pj > 0):
            raise ValueError("energy per op must be positive")


@dataclass
class CompareSection:
    base: str | None = None
    fsta: str | None = None


@dataclass
class RunConfig:
    run_id: str | None = None
    seed: int = 0
    out: str | None = None  # report root; falls back to FSTA_REPORT_ROOT, then ./reports
    checkpoint: str | None = None
    network: NetworkSection = field(default_factory=NetworkSection)
    fsta: FstaSection = field(default_factory=FstaSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    spectrum: SpectrumSection = field(default_factory=SpectrumSection)
    energy: EnergySection = field(default_factory=EnergySection)
    compare: CompareSection = field(default_factory=CompareSection)

    def __post_init__(self):
        # One seed per run drives initialisation and shuffling.
        self.train.seed = self.seed


# Fields that exist on the dataclass but are not user-settable.
HIDDEN = {TrainConfig: {"seed"}}
# (class, field) pairs holding file-system paths that must exist.
PATH_FIELDS = {(RunConfig, "checkpoint"), (DataConfig, "path"), (SpectrumSection, "trace"),
               (CompareSection, "base"), (CompareSection, "fsta")}


# ------------------------------------------------------------------- parsing
class _Walker:
    def __init__(self, source: str, base_dir: Path):
        self.source = source
        self.base_dir = base_dir
        self.loader = yaml.SafeLoader("")

    def error(self, msg, node) -> ConfigError:
        return ConfigError(msg, node.start_mark.line + 1 if node is not None else None, self.source)

    def scalar(self, node):
        if not isinstance(node, yaml.ScalarNode):
            raise self.error("expected a scalar value", node)
        return self.loader.construct_object(node, deep=True)

    def convert(self, tp, node, where: str):
        origin = typing.get_origin(tp)
        if origin in (typing.Union, types.UnionType):
            args = [a for a in typing.get_args(tp) if a is not type(None)]
            if isinstance(node, yaml.ScalarNode) and node.tag == "tag:yaml.org,2002:null":
                return None
            return self.convert(args[0], node, where)
        if dataclasses.is_dataclass(tp):
            return self.dataclass(tp, node, where)
        if origin in (list, tuple):
            if not isinstance(node, yaml.SequenceNode):
                raise self.error(f"{where}: expected a list", node)
            (item,) = typing.get_args(tp)[:1]
            return [self.convert(item, n, f"{where}[{i}]") for i, n in enumerate(node.value)]
        value = self.scalar(node)
        if tp is bool:
            if not isinstance(value, bool):
                raise self.error(f"{where}: expected true/false, got {value!r}", node)
            return value
        if tp is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise self.error(f"{where}: expected an integer, got {value!r}", node)
            return value
        if tp is float:
            if isinstance(value, bool):
                raise self.error(f"{where}: expected a number, got {value!r}", node)
            if isinstance(value, str):  # YAML 1.1 reads 1e-3 as a string
                try:
                    return float(value)
                except ValueError:
                    raise self.error(f"{where}: expected a number, got {value!r}", node) from None
            if not isinstance(value, (int, float)):
                raise self.error(f"{where}: expected a number, got {value!r}", node)
            return float(value)
        if tp is str:
            if not isinstance(value, str):
                raise self.error(f"{where}: expected a string, got {value!r}", node)
            return value
        raise self.error(f"{where}: unsupported field type {tp}", node)

    def dataclass(self, cls, node, where: str):
        if isinstance(node, yaml.ScalarNode) and node.tag == "tag:yaml.org,2002:null":
            return cls()
        if not isinstance(node, yaml.MappingNode):
            raise self.error(f"{where or 'document'}: expected a mapping", node)
        hints = typing.get_type_hints(cls)
        allowed = {f.name for f in dataclasses.fields(cls)} - HIDDEN.get(cls, set())
        kwargs, lines = {}, {}
        for knode, vnode in node.value:
            key = self.scalar(knode)
            path = f"{where}.{key}" if where else str(key)
            if key not in allowed:
                raise self.error(f"unknown key {path!r}; allowed: {sorted(allowed)}", knode)
            if key in kwargs:
                raise self.error(f"duplicate key {path!r}", knode)
            value = self.convert(hints[key], vnode, path)
            if (cls, key) in PATH_FIELDS and value is not None:
                value = self.existing_path(value, vnode, path)
            kwargs[key] = value
            lines[key] = vnode
        missing = [f.name for f in dataclasses.fields(cls)
                   if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
                   and f.name not in kwargs]
        if missing:
            raise self.error(f"{where or 'document'}: missing required field(s) {missing}", node)
        try:
            return cls(**kwargs)
        except (ValueError, TypeError) as exc:
            # Point at the offending field when the message names one.
            culprit = next((n for k, n in lines.items() if k in str(exc)), node)
            raise self.error(f"{where or 'document'}: {exc}", culprit) from None

    def existing_path(self, value: str, node, where: str) -> str:
        p = Path(value).expanduser()
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.exists():
            raise self.error(f"{where}: path {str(p)!r} does not exist", node)
        return str(p.resolve())


def parse_config_text(text: str, source: str = "<config>", base_dir=None) -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    walker = _Walker(source, Path(base_dir) if base_dir is not None else Path.cwd())
    if root is None:
        return RunConfig()
    return walker.dataclass(RunConfig, root, "")


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config_text(text, str(path), path.parent)


def to_dict(cfg) -> dict:
    out = {}
    hidden = HIDDEN.get(type(cfg), set())
    for f in dataclasses.fields(cfg):
        if f.name in hidden:
            continue
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, (list, tuple)):
            v = [to_dict(x) if dataclasses.is_dataclass(x) else x for x in v]
        out[f.name] = v
    return out


def serialize(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


# ------------------------------------------------------------ construction
def network_spec(cfg: RunConfig, input_shape, num_classes: int) -> NetworkSpec:
    """Resolve the network section against the dataset's shape and class count."""
    net = cfg.network
    shape = tuple(net.input_shape) if net.input_shape is not None else tuple(input_shape)
    classes = net.num_classes if net.num_classes is not None else num_classes
    t = cfg.train.timesteps
    if net.arch == CUSTOM_ARCH:
        layers = [LayerSpec(l.kind, l.channels, l.kernel, l.stride, l.stage) for l in net.layers]
        spec = NetworkSpec(CUSTOM_ARCH, shape, t, layers, classes)
    elif net.arch == "resnet20-snn" and net.widths is not None:
        spec = CATALOG[net.arch](classes, shape, t, widths=tuple(net.widths))
    else:
        spec = CATALOG[net.arch](classes, shape, t)
    spec = dataclasses.replace(spec, residual=net.residual, lif=net.lif)
    if cfg.fsta.enabled:
        spec = insert_fsta(spec, cfg.fsta.placement, cfg.fsta.module_config())
    return spec
