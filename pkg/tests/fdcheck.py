"""Central finite-difference gradient checks for the autodiff engine."""
import numpy as np

from fsta_snn import numerics as nx


def numeric_grad(f, t: nx.Tensor, h: float = 1e-5, max_entries: int | None = None, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """d f() / d t at (optionally sampled) flat indices, by central differences."""
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        up = f().item()
        flat[i] = old - h
        down = f().item()
        flat[i] = old
        out[j] = (up - down) / (2 * h)
    return idx, out


def grad_rel_error(f, tensors, h: float = 1e-5, max_entries: int | None = None) -> float:
    """Worst relative error between analytic and numeric gradients over ``tensors``.

    The error for each tensor is ``max |a - n| / max |n|`` (floored at 1e-8), i.e.
    relative to that tensor's gradient scale.
    """
    for t in tensors:
        t.grad = None
    nx.backward(f())
    worst = 0.0
    for t in tensors:
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        idx, num = numeric_grad(f, t, h, max_entries)
        err = np.max(np.abs(analytic[idx] - num)) / max(np.max(np.abs(num)), 1e-8)
        worst = max(worst, float(err))
    return worst
