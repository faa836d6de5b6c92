"""Frequency-based spatial-temporal attention.

Temporal attention re-weights timesteps from pooled statistics; spatial
attention derives a per-pixel gate from a bank of fixed DCT filters. Both
enhance the input as ``X + X * w`` so zeros in a spike map stay zero. The
two are fused as ``scale_t * X_t + scale_s * X_s`` with ``X_s`` computed
either from ``X_t`` (serial) or from ``X`` (parallel).

The module works on batched activations ``[T, N, C, H, W]``; the functions
:func:`sa_forward`, :func:`ta_forward` and :func:`fsta_forward` take a single
sample ``[T, C, H, W]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .frequency import DctBasis, dct_basis
from .numerics import ShapeError, Tensor

MODES = ("serial", "parallel")


@dataclass
class FstaConfig:
    kernel_size: int = 7
    mode: str = "serial"
    learnable_scales: bool = True

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class AttentionTrace:
    freq_w: np.ndarray | None = None  # [N, H, W]
    t_w: np.ndarray | None = None  # [N, T]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(nx.get_default_dtype()), requires_grad=True)


def _scalar(value: float, requires_grad: bool = True) -> Tensor:
    return Tensor(np.array(value, dtype=nx.get_default_dtype()), requires_grad=requires_grad)


class SpatialAttention:
    def __init__(self, kernel_size: int = 7, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.dct: DctBasis = dct_basis(kernel_size)
        k2 = kernel_size * kernel_size
        self.compress_w = _uniform(rng, (1, k2), k2)
        self.compress_b = Tensor(np.zeros(1, dtype=nx.get_default_dtype()), requires_grad=True)
        self.padding = (kernel_size - 1) // 2

    @property
    def kernel_size(self) -> int:
        return self.dct.kernel_size

    def parameters(self) -> dict[str, Tensor]:
        return {"compress.weight": self.compress_w, "compress.bias": self.compress_b}

    def frequency_features(self, x: Tensor) -> Tensor:
        """Mean over T, depthwise DCT filtering, mean over C: ``[T,N,C,H,W] -> [N,k*k,H,W]``.

        Channel averaging commutes with the (linear, shared) filter bank, so
        the channel mean is taken first and the bank runs once per sample.
        """
        _, n, _, h, w = x.shape
        x_mean = x.mean(axes=(0, 2))  # [N, H, W]
        weights = self.dct.weights
        if weights.dtype != x.dtype:
            weights = Tensor(weights.data.astype(x.dtype))
        return nx.conv2d(x_mean.reshape(n, 1, h, w), weights, stride=1, padding=self.padding)

    def weights(self, x: Tensor) -> Tensor:
        """Spatial gate ``freq_w`` in (0, 1), shape [N, H, W]."""
        freq = self.frequency_features(x)  # [N, k2, H, W]
        z = nx.linear(freq.transpose(0, 2, 3, 1), self.compress_w, self.compress_b)  # [N, H, W, 1]
        return nx.sigmoid(z.reshape(z.shape[:3]))

    def __call__(self, x: Tensor, trace: AttentionTrace | None = None) -> Tensor:
        fw = self.weights(x)
        if trace is not None:
            trace.freq_w = fw.data.copy()
        n, h, w = fw.shape
        return x + x * fw.reshape(1, n, 1, h, w)


class TemporalAttention:
    def __init__(self, timesteps: int, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        if timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        self.timesteps = timesteps
        self.alpha = _scalar(0.5)
        self.beta = _scalar(0.5)
        self.map_w = _uniform(rng, (timesteps, timesteps), timesteps)
        self.map_b = Tensor(np.zeros(timesteps, dtype=nx.get_default_dtype()), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"alpha": self.alpha, "beta": self.beta,
                "temporal_map.weight": self.map_w, "temporal_map.bias": self.map_b}

    def weights(self, x: Tensor) -> Tensor:
        """Per-timestep gate ``T_w`` in (0, 1), shape [N, T]."""
        if x.shape[0] != self.timesteps:
            raise ShapeError(f"temporal attention built for T={self.timesteps}, got T={x.shape[0]}")
        f_avg = x.mean(axes=(3, 4))  # [T, N, C]
        f_max = x.max(axes=(3, 4))
        m = self.alpha * f_avg + self.beta * f_max
        m_mean = m.mean(axes=2)  # [T, N]
        return nx.sigmoid(nx.linear(m_mean.transpose(1, 0), self.map_w, self.map_b))

    def __call__(self, x: Tensor, trace: AttentionTrace | None = None) -> Tensor:
        tw = self.weights(x)
        if trace is not None:
            trace.t_w = tw.data.copy()
        n, t = tw.shape
        return x + x * tw.transpose(1, 0).reshape(t, n, 1, 1, 1)


class FstaModule:
    def __init__(self, timesteps: int, config: FstaConfig | None = None, rng: np.random.Generator | None = None):
        self.config = config = FstaConfig() if config is None else config
        rng = np.random.default_rng(0) if rng is None else rng
        self.ta = TemporalAttention(timesteps, rng)
        self.sa = SpatialAttention(config.kernel_size, rng)
        self.scale_t = _scalar(0.5, config.learnable_scales)
        self.scale_s = _scalar(0.5, config.learnable_scales)
        self.mode = config.mode
        self.tracing = False
        self.last_trace: AttentionTrace | None = None

    def parameters(self) -> dict[str, Tensor]:
        params = {f"ta.{k}": v for k, v in self.ta.parameters().items()}
        params.update({f"sa.{k}": v for k, v in self.sa.parameters().items()})
        if self.config.learnable_scales:
            params["scale_t"] = self.scale_t
            params["scale_s"] = self.scale_s
        return params

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 5:
            raise ShapeError(f"FstaModule expects [T, N, C, H, W], got {x.shape}")
        trace = AttentionTrace() if self.tracing else None
        x_t = self.ta(x, trace)
        x_s = self.sa(x_t if self.mode == "serial" else x, trace)
        self.last_trace = trace
        return self.scale_t * x_t + self.scale_s * x_s


def _single(x) -> Tensor:
    x = nx.as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected a [T, C, H, W] tensor, got rank {x.ndim}")
    t, c, h, w = x.shape
    return x.reshape(t, 1, c, h, w)


def sa_forward(sa: SpatialAttention, x) -> Tensor:
    x5 = _single(x)
    return sa(x5).reshape(x5.shape[:1] + x5.shape[2:])


def ta_forward(ta: TemporalAttention, x) -> Tensor:
    x5 = _single(x)
    return ta(x5).reshape(x5.shape[:1] + x5.shape[2:])


def fsta_forward(m: FstaModule, x) -> Tensor:
    x5 = _single(x)
    return m(x5).reshape(x5.shape[:1] + x5.shape[2:])


def fsta_parameter_count(m: FstaModule | None = None, timesteps: int | None = None,
                         kernel_size: int | None = None) -> int:
    """Compress (k*k + 1) + alpha, beta + temporal map (T*T + T) + two scales."""
    if m is not None:
        timesteps = m.ta.timesteps if timesteps is None else timesteps
        kernel_size = m.sa.kernel_size if kernel_size is None else kernel_size
    if timesteps is None or kernel_size is None:
        raise ValueError("need a module or both timesteps and kernel_size")
    k2 = kernel_size * kernel_size
    return k2 + 1 + 2 + timesteps * timesteps + timesteps + 2


def fsta_mac_count(timesteps: int, channels: int, height: int, width: int,
                   kernel_size: int) -> int:
    """Real-valued multiply-accumulates inside one module call, per sample.

    Tally: temporal mean and channel mean, the DCT bank, the 1x1 compression,
    avg/max pooling and their alpha/beta mix, the channel mean and T x T map,
    the two ``X * w`` products and the scaled fusion.
    """
    t, c, hw = timesteps, channels, height * width
    k2 = kernel_size * kernel_size
    spatial = t * c * hw + k2 * k2 * hw + k2 * hw + t * c * hw
    temporal = 2 * t * c * hw + 2 * t * c + t * c + t * t + t * c * hw
    fusion = 2 * t * c * hw
    return spatial + temporal + fusion
