"""Pure-numpy patch gather/scatter (fallback backend).

Patches follow NHWC layout: for input (n, h, w, c), kernel k and stride s the
patch matrix has shape (n*oh*ow, k*k*c) with rows ordered (n, oy, ox) and
columns ordered (ky, kx, c).  Out-of-bounds taps (zero padding) read zeros on
gather and are dropped on scatter.

The scatter uses ``np.bincount``, which accumulates strictly in input order —
the same order as the compiled backend's loop — so both backends agree
bit-for-bit.
"""

from __future__ import annotations

import functools

import numpy as np

__all__ = ["patch_grid", "extract_patches", "scatter_patches"]


def patch_grid(height: int, width: int, kernel: int, stride: int, pad: int) -> tuple[int, int]:
    """Output (oh, ow) for the given geometry."""
    oh = (height + 2 * pad - kernel) // stride + 1
    ow = (width + 2 * pad - kernel) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("patch geometry yields empty output")
    return oh, ow


@functools.lru_cache(maxsize=64)
def _padded_indices(n: int, h: int, w: int, c: int, kernel: int, stride: int, pad: int):
    """Flat indices into the zero-padded (n, h+2p, w+2p, c) array, one per
    patch element, in canonical order."""
    oh, ow = patch_grid(h, w, kernel, stride, pad)
    hp, wp = h + 2 * pad, w + 2 * pad
    ni = np.arange(n)
    oy = np.arange(oh) * stride
    ox = np.arange(ow) * stride
    ky = np.arange(kernel)
    kx = np.arange(kernel)
    ci = np.arange(c)
    rows = (
        oy[None, :, None, None, None, None]
        + ky[None, None, None, :, None, None]
    )
    cols = (
        ox[None, None, :, None, None, None]
        + kx[None, None, None, None, :, None]
    )
    flat = (
        ni[:, None, None, None, None, None] * (hp * wp * c)
        + rows * (wp * c)
        + cols * c
        + ci[None, None, None, None, None, :]
    )
    idx = np.broadcast_to(flat, (n, oh, ow, kernel, kernel, c))
    return np.ascontiguousarray(idx.reshape(n * oh * ow, kernel * kernel * c))


def extract_patches(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """(n, h, w, c) -> (n*oh*ow, k*k*c) patch matrix."""
    n, h, w, c = x.shape
    idx = _padded_indices(n, h, w, c, kernel, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    return x.reshape(-1)[idx]


def scatter_patches(
    g: np.ndarray, n: int, h: int, w: int, c: int, kernel: int, stride: int, pad: int
) -> np.ndarray:
    """Adjoint of extract_patches: accumulate patch gradients into (n, h, w, c)."""
    idx = _padded_indices(n, h, w, c, kernel, stride, pad)
    hp, wp = h + 2 * pad, w + 2 * pad
    acc = np.bincount(
        idx.reshape(-1), weights=np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
        minlength=n * hp * wp * c,
    )
    acc = acc.reshape(n, hp, wp, c)
    if pad:
        acc = acc[:, pad:-pad, pad:-pad, :]
    return np.ascontiguousarray(acc)
