"""Firing statistics, synaptic-operation counts, energy, and spike spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .frequency import Band, band_energy, center_spectrum, dft2d
from .fsta import fsta_mac_count

# ---------------------------------------------------------------- firing


@dataclass
class FiringStats:
    layers: list[str]
    spikes: list[int]
    slots: list[int]

    @property
    def rates(self) -> list[float]:
        return [s / n if n else 0.0 for s, n in zip(self.spikes, self.slots)]

    @property
    def network_rate(self) -> float:
        total = sum(self.slots)
        return sum(self.spikes) / total if total else 0.0

    def rate(self, layer: str) -> float:
        return self.rates[self.layers.index(layer)]

    def merge(self, other: "FiringStats") -> "FiringStats":
        if self.layers != other.layers:
            raise ValueError("cannot merge firing stats with different layer structure")
        return FiringStats(list(self.layers), [a + b for a, b in zip(self.spikes, other.spikes)],
                           [a + b for a, b in zip(self.slots, other.slots)])


def firing_rate(trace) -> FiringStats:
    """Exact spike counts per recorded layer; rates divide once at the end.

    Accepts a ForwardTrace or a plain ``{layer: binary array}`` mapping.
    """
    spikes = trace if isinstance(trace, dict) else trace.spikes
    if not spikes:
        raise ValueError("trace holds no spiking layers")
    layers, counts, slots = [], [], []
    for name, s in spikes.items():
        s = np.asarray(s)
        if s.size and not np.isin(s, (0, 1)).all():
            raise ValueError(f"layer {name!r} holds non-binary values; expected spikes in {{0, 1}}")
        layers.append(name)
        counts.append(int(np.count_nonzero(s)))
        slots.append(int(s.size))
    return FiringStats(layers, counts, slots)


@dataclass
class ReductionReport:
    layers: list[str]
    base: list[float]
    fsta: list[float]
    reduction: list[float | None]  # None where the baseline rate is zero
    network_base: float
    network_fsta: float
    network_reduction: float | None


def _reduction(base: float, new: float) -> float | None:
    return None if base == 0 else (base - new) / base


def compare_runs(base: FiringStats, fsta: FiringStats) -> ReductionReport:
    """Relative firing-rate reduction ``(base - fsta) / base`` per layer and overall."""
    if base.layers != fsta.layers:
        raise ValueError(f"layer structure differs: {base.layers} vs {fsta.layers}")
    rb, rf = base.rates, fsta.rates
    return ReductionReport(list(base.layers), rb, rf, [_reduction(b, f) for b, f in zip(rb, rf)],
                           base.network_rate, fsta.network_rate,
                           _reduction(base.network_rate, fsta.network_rate))


# ------------------------------------------------------------- op counting
@dataclass
class OpCounts:
    acs: float = 0
    macs: float = 0
    params: int = 0
    frozen_params: int = 0
    samples: int = 1
    flops: float | None = None  # definition unknown; never filled in

    def __post_init__(self):
        if min(self.acs, self.macs, self.params, self.frozen_params) < 0:
            raise ValueError("operation counts must be non-negative")

    def per_sample(self) -> "OpCounts":
        n = max(self.samples, 1)
        return OpCounts(self.acs / n, self.macs / n, self.params, self.frozen_params, 1)


@dataclass(frozen=True)
class EnergyModel:
    e_ac: float = 0.9e-12
    e_mac: float = 4.6e-12

    def __post_init__(self):
        if not (self.e_ac > 0 and self.e_mac > 0):
            raise ValueError("energy per operation must be positive")


def energy(counts: OpCounts, model: EnergyModel = EnergyModel()) -> float:
    """Joules: ``acs * e_ac + macs * e_mac``."""
    return counts.acs * model.e_ac + counts.macs * model.e_mac


def conv_fanout_map(h: int, w: int, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Number of output positions whose receptive field covers each input pixel."""
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1

    def axis_cover(n, no):
        cover = np.zeros(n + 2 * padding, dtype=np.int64)
        for o in range(no):
            cover[o * stride:o * stride + kernel] += 1
        return cover[padding:padding + n]

    return np.outer(axis_cover(h, ho), axis_cover(w, wo))


def conv_macs(cin: int, cout: int, kernel: int, ho: int, wo: int) -> int:
    return cin * cout * kernel * kernel * ho * wo


def count_ops(net, trace) -> OpCounts:
    """ACs for synapses driven by spikes, MACs for real-valued arithmetic.

    Each spike is charged to the consuming layer's fan-out. The analog input
    convolution is charged once per timestep. BN is folded into the preceding
    convolution and LIF membrane updates are not counted.
    """
    if trace.network != net.spec.name:
        raise ValueError(f"trace comes from {trace.network!r}, not {net.spec.name!r}")
    t, n = trace.timesteps, trace.batch
    acs, macs = 0, 0
    known = {name for layer in net.layers for name in _synapse_names(layer)}
    for rec in trace.synapses:
        if rec.name not in known:
            raise ValueError(f"trace synapse {rec.name!r} does not belong to this network")
        if rec.kind == "fsta":
            c, h, w = rec.in_shape
            macs += fsta_mac_count(t, c, h, w, rec.kernel) * n
            continue
        if rec.sources is not None:
            for src in rec.sources:
                if src not in trace.spikes:
                    raise ValueError(f"trace lacks spikes for {src!r} feeding {rec.name!r}")
            acs += _spike_driven_acs(rec, [trace.spikes[s] for s in rec.sources])
        else:
            macs += _dense_macs(rec) * t * n
    return OpCounts(acs, macs, net.parameter_count(), sum(p.size for p in net.frozen_parameters().values()), n)


def _synapse_names(layer) -> list[str]:
    from .model import ConvBnLif, ResidualBlock

    if isinstance(layer, ConvBnLif):
        return [layer.conv.name]
    if isinstance(layer, ResidualBlock):
        names = [layer.conv1.name, layer.conv2.name]
        names.append(layer.proj.name if layer.proj is not None else f"{layer.name}.shortcut")
        return names
    return [layer.name]


def _spike_driven_acs(rec, spike_maps: list[np.ndarray]) -> int:
    total = sum(np.asarray(s, dtype=np.int64) for s in spike_maps)
    if rec.kind == "conv":
        cin, h, w = rec.in_shape
        cout = rec.out_shape[0]
        fan = conv_fanout_map(h, w, rec.kernel, rec.stride, rec.padding) * cout
        return int((total.sum(axis=(0, 1, 2)) * fan).sum())
    if rec.kind == "linear":
        return int(total.sum()) * rec.out_shape[0]
    if rec.kind in ("add", "avgpool"):
        return int(total.sum())
    raise ValueError(f"unknown synapse kind {rec.kind!r}")


def _dense_macs(rec) -> int:
    if rec.kind == "conv":
        cin = rec.in_shape[0]
        cout, ho, wo = rec.out_shape
        return conv_macs(cin, cout, rec.kernel, ho, wo)
    if rec.kind == "linear":
        return int(np.prod(rec.in_shape)) * rec.out_shape[0]
    if rec.kind in ("add", "avgpool"):
        return int(np.prod(rec.in_shape))
    raise ValueError(f"unknown synapse kind {rec.kind!r}")


# ----------------------------------------------------------------- spectra
HALFWIDTHS = (0, 1, 2)


@dataclass
class SpectrumEntry:
    layer: str
    timestep: int
    channel: int | None
    probability: np.ndarray  # [H, W] in [0, 1]
    magnitude: np.ndarray  # centred, linear
    log_magnitude: np.ndarray  # log(1 + magnitude)
    bands: dict[str, float] = field(default_factory=dict)


@dataclass
class SpectrumReport:
    entries: list[SpectrumEntry]
    metadata: dict = field(default_factory=dict)

    def layers(self) -> list[str]:
        seen = []
        for e in self.entries:
            if e.layer not in seen:
                seen.append(e.layer)
        return seen

    def get(self, layer: str, timestep: int, channel: int | None = None) -> SpectrumEntry:
        for e in self.entries:
            if e.layer == layer and e.timestep == timestep and e.channel == channel:
                return e
        raise KeyError((layer, timestep, channel))


def _band_profile(spec, halfwidths) -> dict[str, float]:
    out = {}
    for b in halfwidths:
        out[f"horizontal_{b}"] = band_energy(spec, Band.horizontal_axis(b))
        out[f"vertical_{b}"] = band_energy(spec, Band.vertical_axis(b))
    return out


def probability_maps(traces: Iterable, per_channel: bool = False) -> tuple[dict[str, np.ndarray], dict]:
    """Average spikes over samples (and channels unless ``per_channel``).

    Returns ``{layer: [T, H, W]}`` (or ``[T, C, H, W]``) maps plus shape info.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    shapes: dict[str, tuple] = {}
    n_traces = 0
    for tr in traces:
        n_traces += 1
        spikes = tr if isinstance(tr, dict) else tr.spikes
        for name, s in spikes.items():
            s = np.asarray(s, dtype=np.float64)
            if s.ndim == 4:  # [T, C, H, W] single sample
                s = s[:, None]
            if s.ndim != 5:
                raise ValueError(f"layer {name!r}: expected [T, N, C, H, W] spikes, got {s.shape}")
            key_shape = (s.shape[0],) + s.shape[2:]
            if name in shapes and shapes[name] != key_shape:
                raise ValueError(f"layer {name!r} shape {key_shape} differs from earlier {shapes[name]}")
            shapes[name] = key_shape
            part = s.sum(axis=1) if per_channel else s.sum(axis=(1, 2))
            sums[name] = sums.get(name, 0) + part
            counts[name] = counts.get(name, 0) + (s.shape[1] if per_channel else s.shape[1] * s.shape[2])
    if n_traces == 0:
        raise ValueError("spectrum_report needs at least one trace")
    return {k: sums[k] / counts[k] for k in sums}, shapes


def spectrum_report(traces, per_channel: bool = False, halfwidths=HALFWIDTHS, metadata: dict | None = None) -> SpectrumReport:
    """Centred DFT magnitudes of firing-probability maps per layer and timestep."""
    if not isinstance(traces, (list, tuple)):
        traces = [traces]
    maps, _ = probability_maps(traces, per_channel)
    entries = []
    for name, m in maps.items():
        for t in range(m.shape[0]):
            channels = range(m.shape[1]) if per_channel else [None]
            for c in channels:
                prob = m[t] if c is None else m[t, c]
                spec = center_spectrum(dft2d(prob))
                entries.append(SpectrumEntry(name, t, c, prob, spec.magnitudes, np.log1p(spec.magnitudes),
                                             _band_profile(spec, halfwidths)))
    return SpectrumReport(entries, dict(metadata or {}))


def dominant_band(entry: SpectrumEntry, halfwidth: int = 0) -> str:
    h = entry.bands[f"horizontal_{halfwidth}"]
    v = entry.bands[f"vertical_{halfwidth}"]
    if math.isclose(h, v):
        return "mixed"
    return "horizontal" if h > v else "vertical"
