"""Complex 2-D field primitives: unitary FFTs and window extract/accumulate.

Fields are plain numpy arrays (``complex128`` for complex grids, ``float64``
for real ones). Scan positions are integer ``(y, x)`` offsets of the top-left
corner of a probe window inside the object array. Stacks of windows are
arrays of shape ``(n, h, w)`` with positions of shape ``(n, 2)``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import BoundsError, InvalidInputError


class ScanPosition(NamedTuple):
    y: int
    x: int


def _check_finite(g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise InvalidInputError("grid contains non-finite samples")


def fft2(g: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT over the last two axes (``1/sqrt(N)`` scaling)."""
    g = np.asarray(g)
    _check_finite(g)
    return np.fft.fft2(g, norm="ortho")


def ifft2(g: np.ndarray) -> np.ndarray:
    """Unitary inverse of :func:`fft2`."""
    g = np.asarray(g)
    _check_finite(g)
    return np.fft.ifft2(g, norm="ortho")


def as_positions(positions) -> np.ndarray:
    """Coerce a sequence of ``(y, x)`` pairs to an ``(n, 2)`` int64 array."""
    pos = np.asarray(positions, dtype=np.int64)
    if pos.ndim == 1 and pos.size == 2:
        pos = pos[None, :]
    if pos.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise InvalidInputError(f"positions must have shape (n, 2), got {pos.shape}")
    return pos


def check_bounds(shape: tuple[int, int], positions, h: int, w: int) -> np.ndarray:
    """Return ``positions`` as an array, raising if any window leaves ``shape``."""
    pos = as_positions(positions)
    if pos.shape[0] == 0:
        return pos
    H, W = shape[-2], shape[-1]
    ys, xs = pos[:, 0], pos[:, 1]
    bad = (ys < 0) | (xs < 0) | (ys + h > H) | (xs + w > W)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise BoundsError(
            f"window {h}x{w} at {tuple(int(v) for v in pos[k])} outside array of shape {(H, W)}"
        )
    return pos


def extract_window(obj: np.ndarray, pos, h: int, w: int) -> np.ndarray:
    """Copy of the ``h x w`` sub-grid of ``obj`` whose top-left corner is ``pos``."""
    (y, x), = check_bounds(obj.shape, pos, h, w)
    return obj[y:y + h, x:x + w].copy()


def accumulate_window(target: np.ndarray, pos, patch: np.ndarray) -> None:
    """In-place ``target[window] += patch``."""
    h, w = patch.shape
    (y, x), = check_bounds(target.shape, pos, h, w)
    target[y:y + h, x:x + w] += patch


def _flat_indices(shape, pos: np.ndarray, h: int, w: int) -> np.ndarray:
    W = shape[-1]
    rows = pos[:, 0, None, None] + np.arange(h)[None, :, None]
    cols = pos[:, 1, None, None] + np.arange(w)[None, None, :]
    return rows * W + cols


def extract_windows(obj: np.ndarray, positions, h: int, w: int) -> np.ndarray:
    """Stack of windows, shape ``(n, h, w)``."""
    pos = check_bounds(obj.shape, positions, h, w)
    return obj.ravel()[_flat_indices(obj.shape, pos, h, w)]


def accumulate_windows(target: np.ndarray, positions, patches: np.ndarray) -> None:
    """Overlap-add a stack of patches into ``target`` in place.

    Equal to a sequential loop of :func:`accumulate_window` calls up to
    floating-point summation order.
    """
    patches = np.asarray(patches)
    n, h, w = patches.shape
    pos = check_bounds(target.shape, positions, h, w)
    if pos.shape[0] != n:
        raise InvalidInputError("number of patches and positions differ")
    if n == 0:
        return
    if n <= 16:
        for k in range(n):
            y, x = pos[k]
            target[y:y + h, x:x + w] += patches[k]
        return
    idx = _flat_indices(target.shape, pos, h, w).ravel()
    size = target.size
    if np.iscomplexobj(target):
        flat = patches.ravel()
        summed = np.bincount(idx, weights=flat.real, minlength=size) + 1j * np.bincount(
            idx, weights=flat.imag, minlength=size
        )
    else:
        summed = np.bincount(idx, weights=patches.ravel().real, minlength=size)
    target += summed.reshape(target.shape)
