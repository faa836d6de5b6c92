"""Spiking network construction, forward passes and spike-trace capture.

Activations are carried as ``[T, N, C, H, W]`` tensors. The static input image
is convolved once and the (identical) result is presented at every timestep.
Convolutions fold T into the batch axis, which also makes batch-norm
statistics span (T, N, H, W).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .fsta import AttentionTrace, FstaConfig, FstaModule
from .neuron import LifParams, lif_sequence
from .numerics import ShapeError, Tensor

LAYER_KINDS = ("conv_bn_lif", "residual_block", "avgpool", "flatten", "classifier", "fsta")
RESIDUAL_MODES = ("membrane", "spike_add")


class BuildError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    channels: int | None = None
    kernel: int = 3
    stride: int = 1
    stage: int | None = None
    fsta: FstaConfig | None = None


@dataclass
class NetworkSpec:
    name: str
    input_shape: tuple[int, int, int]
    timesteps: int
    layers: list[LayerSpec]
    num_classes: int
    fsta_placement: list[int] = field(default_factory=list)
    residual: str = "membrane"
    lif: LifParams = field(default_factory=LifParams)

    @property
    def stages(self) -> list[int]:
        return sorted({l.stage for l in self.layers if l.stage is not None})


# ------------------------------------------------------------------ catalog
def snn_tiny(num_classes: int = 10, input_shape=(3, 32, 32), timesteps: int = 4) -> NetworkSpec:
    """Two conv stages (16 then 32 channels), one residual block each, GAP, classifier."""
    layers = [
        LayerSpec("conv_bn_lif", 16, stage=0),
        LayerSpec("residual_block", 16, stage=0),
        LayerSpec("conv_bn_lif", 32, stride=2, stage=1),
        LayerSpec("residual_block", 32, stage=1),
        LayerSpec("avgpool"),
        LayerSpec("flatten"),
        LayerSpec("classifier", num_classes),
    ]
    return NetworkSpec("snn-tiny", tuple(input_shape), timesteps, layers, num_classes)


def resnet20_snn(num_classes: int = 10, input_shape=(3, 32, 32), timesteps: int = 4,
                 widths=(64, 128, 256)) -> NetworkSpec:
    """Approximate ResNet-20 layout: stem + 3 stages x 3 basic blocks + classifier.

    Stage widths are an assumption (the reference widths are not published);
    override ``widths`` as needed.
    """
    layers = [LayerSpec("conv_bn_lif", widths[0])]
    for s, width in enumerate(widths):
        for b in range(3):
            stride = 2 if (s > 0 and b == 0) else 1
            layers.append(LayerSpec("residual_block", width, stride=stride, stage=s))
    layers += [LayerSpec("avgpool"), LayerSpec("flatten"), LayerSpec("classifier", num_classes)]
    return NetworkSpec("resnet20-snn", tuple(input_shape), timesteps, layers, num_classes)


def vgg_tiny(num_classes: int = 10, input_shape=(3, 32, 32), timesteps: int = 4) -> NetworkSpec:
    """Plain (non-residual) conv stack for spectral-preference comparisons."""
    layers = [
        LayerSpec("conv_bn_lif", 16, stage=0),
        LayerSpec("conv_bn_lif", 16, stage=0),
        LayerSpec("conv_bn_lif", 32, stride=2, stage=1),
        LayerSpec("conv_bn_lif", 32, stage=1),
        LayerSpec("avgpool"),
        LayerSpec("flatten"),
        LayerSpec("classifier", num_classes),
    ]
    return NetworkSpec("vgg-tiny", tuple(input_shape), timesteps, layers, num_classes)


CATALOG = {"snn-tiny": snn_tiny, "resnet20-snn": resnet20_snn, "vgg-tiny": vgg_tiny}


def insert_fsta(spec: NetworkSpec, placement, config: FstaConfig | None = None) -> NetworkSpec:
    """Return a copy of ``spec`` with an attention layer after each listed stage."""
    config = FstaConfig() if config is None else config
    placement = list(placement)
    stages = spec.stages
    for idx in placement:
        if idx not in stages:
            raise IndexError(f"stage {idx} out of range; network has stages {stages}")
    last_of_stage = {}
    for i, layer in enumerate(spec.layers):
        if layer.stage is not None:
            last_of_stage[layer.stage] = i
    after = {last_of_stage[s] for s in placement}
    layers = []
    for i, layer in enumerate(spec.layers):
        layers.append(copy.deepcopy(layer))
        if i in after:
            layers.append(LayerSpec("fsta", stage=layer.stage, fsta=copy.deepcopy(config)))
    return replace(spec, layers=layers, fsta_placement=sorted(set(spec.fsta_placement) | set(placement)))


def validate_spec(spec: NetworkSpec) -> list[tuple]:
    """Walk the layer chain and return each layer's output shape; raises BuildError."""
    if not spec.layers:
        raise BuildError(f"network {spec.name!r} has no layers")
    if spec.timesteps < 1:
        raise BuildError("timesteps must be >= 1")
    if spec.residual not in RESIDUAL_MODES:
        raise BuildError(f"residual mode must be one of {RESIDUAL_MODES}")
    if len(spec.input_shape) != 3 or min(spec.input_shape) < 1:
        raise BuildError(f"input_shape must be (C, H, W), got {spec.input_shape}")
    shape: tuple = tuple(spec.input_shape)
    shapes = []
    for i, layer in enumerate(spec.layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind not in LAYER_KINDS:
            raise BuildError(f"{where}: unknown layer kind")
        spatial = len(shape) == 3
        if layer.kind in ("conv_bn_lif", "residual_block", "avgpool", "fsta", "flatten") and not spatial:
            raise BuildError(f"{where}: needs a spatial [C, H, W] input, got flat {shape}")
        if layer.kind in ("conv_bn_lif", "residual_block"):
            c, h, w = shape
            cout = layer.channels if layer.channels is not None else c
            if layer.kind == "conv_bn_lif" and layer.channels is None:
                raise BuildError(f"{where}: channels required")
            k = layer.kernel
            if k < 1 or k % 2 == 0 or layer.stride < 1:
                raise BuildError(f"{where}: kernel must be odd and stride positive")
            pad = k // 2
            if k > h + 2 * pad or k > w + 2 * pad:
                raise BuildError(f"{where}: kernel {k} too large for {h}x{w}")
            shape = (cout, nx.conv_output_size(h, k, layer.stride, pad), nx.conv_output_size(w, k, layer.stride, pad))
        elif layer.kind == "avgpool":
            c, h, w = shape
            if layer.channels is not None:
                raise BuildError(f"{where}: avgpool is global and takes no channels")
            shape = (c, 1, 1)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "classifier":
            if spatial:
                raise BuildError(f"{where}: classifier needs a flattened input, got {shape}")
            out = layer.channels if layer.channels is not None else spec.num_classes
            if out != spec.num_classes:
                raise BuildError(f"{where}: classifier outputs {out} classes, spec says {spec.num_classes}")
            if i != len(spec.layers) - 1:
                raise BuildError(f"{where}: classifier must be the last layer")
            shape = (out,)
        elif layer.kind == "fsta":
            k = (layer.fsta or FstaConfig()).kernel_size
            if k % 2 == 0:
                raise BuildError(f"{where}: DCT kernel must be odd")
        shapes.append(shape)
    if spec.layers[-1].kind != "classifier":
        raise BuildError(f"network {spec.name!r} must end with a classifier")
    return shapes


# ---------------------------------------------------------------- batch norm
@dataclass
class BatchNormState:
    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        dt = nx.get_default_dtype()
        return cls(Tensor(np.ones(channels, dt), requires_grad=True), Tensor(np.zeros(channels, dt), requires_grad=True),
                   np.zeros(channels, dt), np.ones(channels, dt), momentum, eps)

    @property
    def channels(self) -> int:
        return self.scale.shape[0]


def batch_norm(x, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalisation of ``[B, C, H, W]``; batch statistics in training."""
    x = nx.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ShapeError(f"batch_norm expects [B, {state.channels}, H, W], got {x.shape}")
    c = state.channels
    if training:
        mean = x.mean(axes=(0, 2, 3), keepdims=True)
        xc = x - mean
        var = (xc * xc).mean(axes=(0, 2, 3), keepdims=True)
        xhat = xc / nx.sqrt(var + state.eps)
        count = x.size // c
        unbiased = var.data.reshape(c) * (count / max(count - 1, 1))
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean.data.reshape(c)
        state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    else:
        mean = state.running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        std = np.sqrt(state.running_var.reshape(1, c, 1, 1) + state.eps).astype(x.dtype)
        xhat = (x - mean) / std
    return xhat * state.scale.reshape(1, c, 1, 1) + state.shift.reshape(1, c, 1, 1)


# -------------------------------------------------------------------- traces
@dataclass
class SynapseRecord:
    """Geometry of one synaptic operation, for AC/MAC counting.

    ``sources`` names the spiking layers whose (summed) output feeds this op;
    ``None`` means the input is real-valued (analog image, attention output,
    pooled rates).
    """

    name: str
    kind: str  # conv | linear | add | avgpool | fsta
    sources: tuple[str, ...] | None
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: int = 1
    stride: int = 1
    padding: int = 0


@dataclass
class ForwardTrace:
    network: str
    timesteps: int
    batch: int
    spikes: dict[str, np.ndarray] = field(default_factory=dict)  # name -> uint8 [T, N, C, H, W]
    logits: np.ndarray | None = None
    synapses: list[SynapseRecord] = field(default_factory=list)
    attention: dict[str, AttentionTrace] = field(default_factory=dict)


@dataclass
class _Act:
    x: Tensor
    temporal: bool
    sources: tuple[str, ...] | None


class _Ctx:
    def __init__(self, timesteps: int, training: bool, trace: ForwardTrace | None):
        self.timesteps = timesteps
        self.training = training
        self.trace = trace

    def synapse(self, rec: SynapseRecord):
        if self.trace is not None:
            self.trace.synapses.append(rec)

    def spikes(self, name: str, s: Tensor):
        if self.trace is not None:
            self.trace.spikes[name] = s.data.astype(np.uint8)


def _he_normal(rng, shape) -> Tensor:
    fan_in = int(np.prod(shape[1:]))
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(nx.get_default_dtype())
    return Tensor(w, requires_grad=True)


def _fold(x: Tensor) -> Tensor:
    return x.reshape((x.shape[0] * x.shape[1],) + x.shape[2:])


def _unfold(x: Tensor, t: int) -> Tensor:
    return x.reshape((t, x.shape[0] // t) + x.shape[1:])


class _ConvBn:
    def __init__(self, name, cin, cout, k, stride, rng):
        self.name = name
        self.weight = _he_normal(rng, (cout, cin, k, k))
        self.bn = BatchNormState.create(cout)
        self.k, self.stride, self.pad = k, stride, k // 2

    def parameters(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bn.scale": self.bn.scale,
                f"{self.name}.bn.shift": self.bn.shift}

    def buffers(self):
        return {f"{self.name}.bn.running_mean": self.bn.running_mean, f"{self.name}.bn.running_var": self.bn.running_var}

    def __call__(self, act: _Act, ctx: _Ctx) -> Tensor:
        """Returns the BN output, temporal ``[T, N, ...]``."""
        x = _fold(act.x) if act.temporal else act.x
        y = batch_norm(nx.conv2d(x, self.weight, self.stride, self.pad), self.bn, ctx.training)
        in_shape = x.shape[1:]
        ctx.synapse(SynapseRecord(self.name, "conv", act.sources, in_shape, y.shape[1:], self.k, self.stride, self.pad))
        if act.temporal:
            return _unfold(y, ctx.timesteps)
        return nx.broadcast_to(y, (ctx.timesteps,) + y.shape)


class ConvBnLif:
    def __init__(self, name, cin, cout, k, stride, lif: LifParams, rng):
        self.name = name
        self.conv = _ConvBn(f"{name}.conv", cin, cout, k, stride, rng)
        self.lif = lif

    def parameters(self):
        return self.conv.parameters()

    def buffers(self):
        return self.conv.buffers()

    def __call__(self, act: _Act, ctx: _Ctx) -> _Act:
        s = lif_sequence(self.conv(act, ctx), self.lif)
        ctx.spikes(f"{self.name}.lif", s)
        return _Act(s, True, (f"{self.name}.lif",))


class ResidualBlock:
    def __init__(self, name, cin, cout, stride, lif: LifParams, mode: str, rng):
        self.name = name
        self.conv1 = _ConvBn(f"{name}.conv1", cin, cout, 3, stride, rng)
        self.conv2 = _ConvBn(f"{name}.conv2", cout, cout, 3, 1, rng)
        self.proj = _ConvBn(f"{name}.proj", cin, cout, 1, stride, rng) if (cin != cout or stride != 1) else None
        self.lif = lif
        self.mode = mode

    def _parts(self):
        return [p for p in (self.conv1, self.conv2, self.proj) if p is not None]

    def parameters(self):
        out = {}
        for p in self._parts():
            out.update(p.parameters())
        return out

    def buffers(self):
        out = {}
        for p in self._parts():
            out.update(p.buffers())
        return out

    def __call__(self, act: _Act, ctx: _Ctx) -> _Act:
        if not act.temporal:
            act = _Act(nx.broadcast_to(act.x, (ctx.timesteps,) + act.x.shape), True, act.sources)
        s1 = lif_sequence(self.conv1(act, ctx), self.lif)
        ctx.spikes(f"{self.name}.lif1", s1)
        u2 = self.conv2(_Act(s1, True, (f"{self.name}.lif1",)), ctx)
        if self.proj is not None:
            shortcut = self.proj(act, ctx)
            short_sources = None
        else:
            shortcut = act.x
            short_sources = act.sources
            ctx.synapse(SynapseRecord(f"{self.name}.shortcut", "add", act.sources, act.x.shape[2:], act.x.shape[2:]))
        if self.mode == "membrane":
            s2 = lif_sequence(u2 + shortcut, self.lif)
            ctx.spikes(f"{self.name}.lif2", s2)
            return _Act(s2, True, (f"{self.name}.lif2",))
        s2 = lif_sequence(u2, self.lif)
        ctx.spikes(f"{self.name}.lif2", s2)
        if self.proj is not None:
            # spike-add needs a spiking shortcut to stay event-driven
            shortcut = lif_sequence(shortcut, self.lif)
            ctx.spikes(f"{self.name}.proj.lif", shortcut)
            short_sources = (f"{self.name}.proj.lif",)
        srcs = None if short_sources is None else (f"{self.name}.lif2",) + short_sources
        return _Act(s2 + shortcut, True, srcs)


class AvgPool:
    def __init__(self, name):
        self.name = name

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def __call__(self, act: _Act, ctx: _Ctx) -> _Act:
        x = act.x
        if not act.temporal:
            x = nx.broadcast_to(x, (ctx.timesteps,) + x.shape)
        y = x.mean(axes=(3, 4), keepdims=True)
        ctx.synapse(SynapseRecord(self.name, "avgpool", act.sources, x.shape[2:], y.shape[2:]))
        return _Act(y, True, None)


class Flatten:
    def __init__(self, name):
        self.name = name

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def __call__(self, act: _Act, ctx: _Ctx) -> _Act:
        x = act.x
        return _Act(x.reshape(x.shape[:2] + (-1,)), True, act.sources)


class Classifier:
    def __init__(self, name, din, classes, rng):
        self.name = name
        bound = 1.0 / np.sqrt(din)
        dt = nx.get_default_dtype()
        self.weight = Tensor(rng.uniform(-bound, bound, (classes, din)).astype(dt), requires_grad=True)
        self.bias = Tensor(np.zeros(classes, dt), requires_grad=True)

    def parameters(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def buffers(self):
        return {}

    def __call__(self, act: _Act, ctx: _Ctx) -> Tensor:
        y = nx.linear(act.x, self.weight, self.bias)
        ctx.synapse(SynapseRecord(self.name, "linear", act.sources, act.x.shape[2:], y.shape[2:]))
        return y


class FstaLayer:
    def __init__(self, name, timesteps, config: FstaConfig, rng):
        self.name = name
        self.module = FstaModule(timesteps, config, rng)

    def parameters(self):
        return {f"{self.name}.{k}": v for k, v in self.module.parameters().items()}

    def frozen(self):
        return {f"{self.name}.sa.dct": self.module.sa.dct.weights}

    def buffers(self):
        return {}

    def __call__(self, act: _Act, ctx: _Ctx) -> _Act:
        self.module.tracing = ctx.trace is not None
        y = self.module(act.x)
        shape = act.x.shape[2:]
        ctx.synapse(SynapseRecord(self.name, "fsta", act.sources, shape, shape, self.module.sa.kernel_size))
        if ctx.trace is not None and self.module.last_trace is not None:
            ctx.trace.attention[self.name] = self.module.last_trace
        return _Act(y, True, None)


class Network:
    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.shapes = validate_spec(spec)
        self.spec = spec
        self.training = False
        rng = np.random.default_rng(seed)
        self.layers = []
        shape = tuple(spec.input_shape)
        counts: dict[str, int] = {}
        for layer, out_shape in zip(spec.layers, self.shapes):
            prefix = f"s{layer.stage}." if layer.stage is not None else ""
            base = prefix + {"conv_bn_lif": "conv", "residual_block": "res"}.get(layer.kind, layer.kind)
            counts[base] = counts.get(base, -1) + 1
            name = f"{base}{counts[base]}"
            if layer.kind == "conv_bn_lif":
                mod = ConvBnLif(name, shape[0], layer.channels, layer.kernel, layer.stride, spec.lif, rng)
            elif layer.kind == "residual_block":
                mod = ResidualBlock(name, shape[0], out_shape[0], layer.stride, spec.lif, spec.residual, rng)
            elif layer.kind == "avgpool":
                mod = AvgPool(name)
            elif layer.kind == "flatten":
                mod = Flatten(name)
            elif layer.kind == "classifier":
                mod = Classifier(name, shape[0], spec.num_classes, rng)
            else:
                mod = FstaLayer(name, spec.timesteps, layer.fsta or FstaConfig(), rng)
            self.layers.append(mod)
            shape = out_shape

    # ----------------------------------------------------------- state
    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            out.update(layer.parameters())
        return out

    def frozen_parameters(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            if isinstance(layer, FstaLayer):
                out.update(layer.frozen())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def parameter_count(self, include_frozen: bool = False) -> int:
        n = sum(p.size for p in self.parameters().values())
        if include_frozen:
            n += sum(p.size for p in self.frozen_parameters().values())
        return n

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data.copy() for k, v in self.parameters().items()}
        out.update({f"buffer/{k}": v.copy() for k, v in self.buffers().items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params, buffers = self.parameters(), self.buffers()
        expected = {f"param/{k}" for k in params} | {f"buffer/{k}" for k in buffers}
        missing = expected - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[f"param/{k}"])
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: expected {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype).copy()
        for k, b in buffers.items():
            b[...] = state[f"buffer/{k}"]

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    def spiking_layers(self) -> list[str]:
        """Names of every LIF population, in forward order."""
        trace = self.forward(np.zeros((1,) + tuple(self.spec.input_shape)), trace=True, training=False)[1]
        return list(trace.spikes)

    # --------------------------------------------------------- forward
    def forward(self, x, timesteps: int | None = None, trace: bool = False, training: bool | None = None):
        """Returns ``(logits [T, N, classes], ForwardTrace or None)``."""
        x = nx.as_tensor(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError(f"input must be [N, {', '.join(map(str, self.spec.input_shape))}], got {x.shape}")
        t = self.spec.timesteps if timesteps is None else timesteps
        if t < 1:
            raise ValueError("timesteps must be >= 1")
        if t != self.spec.timesteps and any(isinstance(l, FstaLayer) for l in self.layers):
            raise ValueError(f"attention layers are built for T={self.spec.timesteps}")
        training = self.training if training is None else training
        tr = ForwardTrace(self.spec.name, t, x.shape[0]) if trace else None
        ctx = _Ctx(t, training, tr)
        act = _Act(x, False, None)
        out = None
        for layer in self.layers:
            if isinstance(layer, Classifier):
                out = layer(act, ctx)
            else:
                act = layer(act, ctx)
        if tr is not None:
            tr.logits = out.data.copy()
        return out, tr

    __call__ = forward


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    return Network(spec, seed)


def forward(net: Network, x, timesteps: int | None = None, trace: bool = False):
    return net.forward(x, timesteps, trace)
