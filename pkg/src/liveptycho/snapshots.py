"""Colour rendering of complex estimates: hue is phase, brightness is amplitude."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image


def complex_to_rgb(field: np.ndarray, max_amplitude: float | None = None) -> np.ndarray:
    """8-bit RGB with hue ``(phase + pi) / 2pi``, full saturation, value ``|f| / max``.

    ``max_amplitude`` fixes the brightness scale; by default the estimate's
    own maximum amplitude is used.
    """
    field = np.asarray(field)
    amp = np.abs(field)
    scale = float(amp.max()) if max_amplitude is None else float(max_amplitude)
    value = np.zeros_like(amp) if scale <= 0 else np.clip(amp / scale, 0, 1)
    hue = (np.angle(field) + np.pi) / (2 * np.pi)
    hsv = np.stack([hue, np.ones_like(hue), value], axis=-1)
    return np.rint(hsv_to_rgb(hsv) * 255).astype(np.uint8)


def emit_snapshot(field: np.ndarray, path, max_amplitude: float | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(complex_to_rgb(field, max_amplitude), mode="RGB").save(path, format="PNG")
    return path
