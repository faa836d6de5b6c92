"""Fourier and cosine transforms plus centred-spectrum utilities.

Conventions: the forward DFT is unnormalised and the inverse carries the
1/N factor. The DCT basis is the unnormalised DCT-II, so the (0, 0)
coefficient equals the plain sum of the input (``GAP(x) * H * W``).

Complex buffers are numpy ``complex128`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import Tensor


@lru_cache(maxsize=64)
def _dft_matrix(n: int, inverse: bool = False) -> np.ndarray:
    k = np.arange(n)
    # reduce k*n mod N before scaling so large indices keep full phase accuracy
    phase = (np.outer(k, k) % n) * (2.0 * np.pi / n)
    sign = 1.0 if inverse else -1.0
    m = np.exp(sign * 1j * phase)
    m.setflags(write=False)
    return m


def dft1d(x, axis: int = -1) -> np.ndarray:
    """``X[k] = sum_n x[n] exp(-j 2 pi k n / N)`` along ``axis``."""
    x = np.asarray(x)
    n = x.shape[axis]
    if n < 1:
        raise ValueError("dft1d needs at least one sample")
    x = np.moveaxis(x.astype(np.complex128), axis, -1)
    return np.moveaxis(x @ _dft_matrix(n).T, -1, axis)


def idft1d(spectrum, axis: int = -1) -> np.ndarray:
    """``x[n] = (1/N) sum_k X[k] exp(j 2 pi k n / N)`` along ``axis``."""
    spectrum = np.asarray(spectrum)
    n = spectrum.shape[axis]
    if n < 1:
        raise ValueError("idft1d needs at least one bin")
    s = np.moveaxis(spectrum.astype(np.complex128), axis, -1)
    return np.moveaxis((s @ _dft_matrix(n, inverse=True).T) / n, -1, axis)


def dft2d(x) -> np.ndarray:
    """2D DFT over the last two axes: rows first, then columns."""
    x = np.asarray(x)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ValueError(f"dft2d needs a [..., M, N] input, got {x.shape}")
    return dft1d(dft1d(x, axis=-1), axis=-2)


def idft2d(spectrum) -> np.ndarray:
    return idft1d(idft1d(spectrum, axis=-1), axis=-2)


# ---------------------------------------------------------------------- DCT
@dataclass(frozen=True)
class DctBasis:
    """Fixed DCT-II filters; channel ``u*k + v`` holds the (u, v) basis pattern."""

    kernel_size: int
    weights: Tensor  # [k*k, 1, k, k], never trained

    @property
    def num_frequencies(self) -> int:
        return self.kernel_size ** 2


def _cos_table(n: int) -> np.ndarray:
    u = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    return np.cos(np.pi * u * (i + 0.5) / n)


@lru_cache(maxsize=None)
def dct_basis(k: int) -> DctBasis:
    if k < 1:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    c = _cos_table(k)  # c[u, i]
    w = np.einsum("ui,vj->uvij", c, c).reshape(k * k, 1, k, k)
    w.setflags(write=False)
    return DctBasis(k, Tensor(w, requires_grad=False))


def dct2d(x) -> np.ndarray:
    """``f[u, v] = sum_ij x[i, j] cos(pi u (i + 1/2) / H) cos(pi v (j + 1/2) / W)``."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"dct2d expects a 2D array, got shape {x.shape}")
    h, w = x.shape
    return _cos_table(h) @ x @ _cos_table(w).T


# ----------------------------------------------------------------- spectra
@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    centered: bool = True

    @property
    def center(self) -> tuple[int, int]:
        h, w = self.magnitudes.shape
        return h // 2, w // 2

    @property
    def energy(self) -> float:
        return float(np.sum(self.magnitudes ** 2))


def quadrant_swap(a: np.ndarray) -> np.ndarray:
    """Roll the last two axes so bin (0, 0) lands at (H//2, W//2)."""
    h, w = a.shape[-2:]
    return np.roll(a, (h // 2, w // 2), axis=(-2, -1))


def center_spectrum(raw) -> Spectrum:
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError(f"center_spectrum expects [H, W], got {raw.shape}")
    mag = np.sqrt(raw.real ** 2 + raw.imag ** 2)
    return Spectrum(quadrant_swap(mag), centered=True)


@dataclass(frozen=True)
class Band:
    """A region of a centred spectrum.

    ``horizontal_axis``: rows within ``halfwidth`` of the centre row (no vertical
    variation, i.e. vertical stripes). ``vertical_axis``: the column analogue.
    ``radial``: bins whose distance from the centre lies in [r_lo, r_hi].
    """

    kind: str
    halfwidth: int = 0
    r_lo: float = 0.0
    r_hi: float = 0.0

    @classmethod
    def horizontal_axis(cls, b: int) -> "Band":
        return cls("horizontal_axis", halfwidth=b)

    @classmethod
    def vertical_axis(cls, b: int) -> "Band":
        return cls("vertical_axis", halfwidth=b)

    @classmethod
    def radial(cls, r_lo: float, r_hi: float) -> "Band":
        return cls("radial", r_lo=r_lo, r_hi=r_hi)

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        ch, cw = h // 2, w // 2
        rows = np.arange(h)[:, None]
        cols = np.arange(w)[None, :]
        if self.kind == "horizontal_axis":
            m = np.broadcast_to(np.abs(rows - ch) <= self.halfwidth, (h, w))
        elif self.kind == "vertical_axis":
            m = np.broadcast_to(np.abs(cols - cw) <= self.halfwidth, (h, w))
        elif self.kind == "radial":
            r = np.hypot(rows - ch, cols - cw)
            m = (r >= self.r_lo) & (r <= self.r_hi)
        else:
            raise ValueError(f"unknown band kind {self.kind!r}")
        if self.kind != "radial" and self.halfwidth < 0:
            raise ValueError("band halfwidth must be >= 0")
        return np.asarray(m)


def band_energy(spec: Spectrum, band: Band) -> float:
    """Fraction of squared magnitude inside ``band``; 0 for an all-zero spectrum."""
    if not spec.centered:
        raise ValueError("band_energy expects a centred spectrum")
    mask = band.mask(spec.magnitudes.shape)
    if not mask.any():
        raise ValueError(f"band {band} selects no bins in a {spec.magnitudes.shape} spectrum")
    power = spec.magnitudes ** 2
    total = power.sum()
    if total == 0:
        return 0.0
    return float(power[mask].sum() / total)
