"""Discrete-time leaky integrate-and-fire neurons with surrogate gradients.

One step of the update, for input current ``I`` and post-reset potential ``H``::

    V  = H + (I - (H - v_reset)) / tau
    S  = heaviside(V - v_th)
    H' = v_reset * S + V * (1 - S)

The forward pass fires exactly; the backward pass replaces the derivative of
the step with a surrogate of width ``surrogate_width``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, Tensor, as_tensor, make_result, stack

SURROGATES = ("triangle", "rectangle")


@dataclass(frozen=True)
class LifParams:
    tau: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    surrogate_width: float = 1.0
    surrogate: str = "triangle"
    detach_reset: bool = True

    def __post_init__(self):
        if not self.tau > 1.0:
            raise ValueError(f"tau must exceed 1 so the leak factor lies in (0, 1), got {self.tau}")
        if not self.v_th > self.v_reset:
            raise ValueError(f"v_th ({self.v_th}) must exceed v_reset ({self.v_reset})")
        if not self.surrogate_width > 0:
            raise ValueError("surrogate_width must be positive")
        if self.surrogate not in SURROGATES:
            raise ValueError(f"unknown surrogate {self.surrogate!r}; choose from {SURROGATES}")


@dataclass
class LifState:
    h: Tensor

    @classmethod
    def zeros(cls, shape, params: LifParams | None = None) -> "LifState":
        v0 = 0.0 if params is None else params.v_reset
        return cls(Tensor(np.full(shape, v0)))


def heaviside(x) -> np.ndarray:
    """1 where ``x >= 0`` else 0; the boundary fires."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    return (x >= 0).astype(x.dtype if x.dtype.kind == "f" else np.float64)


def surrogate_grad(x, width: float = 1.0, kind: str = "triangle") -> np.ndarray:
    """Pseudo-derivative of the step function; integrates to 1 over its support."""
    if width <= 0:
        raise ValueError("surrogate width must be positive")
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    if kind == "triangle":
        return np.maximum(0.0, 1.0 - np.abs(x) / width) / width
    if kind == "rectangle":
        return (np.abs(x) < width).astype(x.dtype) / (2.0 * width)
    raise ValueError(f"unknown surrogate {kind!r}")


def surrogate_primitive(x, width: float = 1.0, kind: str = "triangle") -> np.ndarray:
    """Antiderivative of :func:`surrogate_grad`, rising from 0 to 1 across the support."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    if kind == "triangle":
        left = (x + width) ** 2 / (2 * width * width)
        right = 1.0 - (width - x) ** 2 / (2 * width * width)
        y = np.where(x < 0, left, right)
        return np.where(x <= -width, 0.0, np.where(x >= width, 1.0, y))
    if kind == "rectangle":
        return np.clip((x + width) / (2 * width), 0.0, 1.0)
    raise ValueError(f"unknown surrogate {kind!r}")


def spike(x, params: LifParams = LifParams(), smooth: bool = False) -> Tensor:
    """Heaviside forward with surrogate backward.

    ``smooth=True`` swaps the forward for the surrogate's antiderivative, which
    makes the whole model differentiable for finite-difference checks.
    """
    x = as_tensor(x)
    w, kind = params.surrogate_width, params.surrogate
    y = surrogate_primitive(x.data, w, kind) if smooth else heaviside(x.data)
    return make_result(y.astype(x.dtype, copy=False), "spike", (x,),
                       lambda g, xd: (g * surrogate_grad(xd, w, kind),), (x.data,))


def lif_step(state: LifState, current, params: LifParams = LifParams(), smooth: bool = False):
    """Advance one timestep. Returns ``(spikes, next_state)``."""
    current = as_tensor(current)
    h = state.h
    if current.shape != h.shape:
        raise ShapeError(f"input shape {current.shape} does not match state shape {h.shape}")
    v = h + (current - (h - params.v_reset)) / params.tau
    s = spike(v - params.v_th, params, smooth)
    s_reset = s.detach() if params.detach_reset else s
    h_next = params.v_reset * s_reset + v * (1.0 - s_reset)
    return s, LifState(h_next)


def lif_sequence(inputs, params: LifParams = LifParams(), initial: LifState | None = None,
                 smooth: bool = False, fused: bool = True) -> Tensor:
    """Run ``inputs[t]`` through the neuron for t = 0..T-1 and stack the spikes.

    The fused path computes BPTT in one backward rule; ``fused=False`` threads
    :func:`lif_step` through the generic tape and is kept as a cross-check.
    """
    inputs = as_tensor(inputs)
    if inputs.ndim < 1 or inputs.shape[0] < 1:
        raise ShapeError("lif_sequence needs at least one timestep")
    if initial is None:
        initial = LifState.zeros(inputs.shape[1:], params)
    if initial.h.shape != inputs.shape[1:]:
        raise ShapeError(f"initial state {initial.h.shape} does not match input step {inputs.shape[1:]}")
    if not fused or initial.h.requires_grad:
        state, out = initial, []
        for t in range(inputs.shape[0]):
            s, state = lif_step(state, inputs[t], params, smooth)
            out.append(s)
        return stack(out, axis=0)
    return _lif_fused(inputs, initial.h.data, params, smooth)


def _lif_fused(inputs: Tensor, h0: np.ndarray, p: LifParams, smooth: bool) -> Tensor:
    x = inputs.data
    steps = x.shape[0]
    h = h0.astype(x.dtype, copy=True)
    vs = np.empty_like(x)
    ss = np.empty_like(x)
    for t in range(steps):
        v = h + (x[t] - (h - p.v_reset)) / p.tau
        s = surrogate_primitive(v - p.v_th, p.surrogate_width, p.surrogate) if smooth else heaviside(v - p.v_th)
        vs[t], ss[t] = v, s
        h = p.v_reset * s + v * (1.0 - s)

    def _bw(g, vs, ss):
        leak = 1.0 - 1.0 / p.tau
        gx = np.empty_like(g)
        gh = np.zeros_like(g[0])
        for t in range(steps - 1, -1, -1):
            sg = surrogate_grad(vs[t] - p.v_th, p.surrogate_width, p.surrogate)
            gs = g[t]
            if not p.detach_reset:
                gs = gs + gh * (p.v_reset - vs[t])
            gv = gs * sg + gh * (1.0 - ss[t])
            gx[t] = gv / p.tau
            gh = gv * leak
        return (gx,)

    return make_result(ss, "lif_sequence", (inputs,), _bw, (vs, ss))
