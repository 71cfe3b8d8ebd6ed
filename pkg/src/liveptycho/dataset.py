"""In-memory scan dataset: diffraction intensities plus scan positions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid
from .errors import DataError


@dataclass
class ScanDataset:
    """Ordered diffraction intensities ``(K, h, w)`` and top-left positions ``(K, 2)``.

    ``object_shape`` is the canvas the positions refer to.
    """

    intensities: np.ndarray
    positions: np.ndarray
    object_shape: tuple[int, int]

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.intensities.ndim == 2:
            self.intensities = self.intensities[None]
        self.positions = grid.as_positions(self.positions)
        self.object_shape = tuple(int(v) for v in self.object_shape)
        if self.intensities.ndim != 3:
            raise DataError("intensities must be a (K, h, w) stack")
        if len(self.intensities) != len(self.positions):
            raise DataError(
                f"{len(self.intensities)} frames but {len(self.positions)} positions"
            )
        if len(self.positions) == 0:
            raise DataError("empty dataset")
        if not np.all(np.isfinite(self.intensities)) or np.any(self.intensities < 0):
            raise DataError("intensities must be finite and non-negative")
        try:
            grid.check_bounds(self.object_shape, self.positions, *self.probe_shape)
        except grid.BoundsError as exc:
            raise DataError(str(exc)) from exc

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def probe_shape(self) -> tuple[int, int]:
        return self.intensities.shape[1], self.intensities.shape[2]

    @property
    def amplitudes(self) -> np.ndarray:
        return np.sqrt(self.intensities)

    def subset(self, stop: int, start: int = 0) -> "ScanDataset":
        return ScanDataset(self.intensities[start:stop], self.positions[start:stop],
                           self.object_shape)
