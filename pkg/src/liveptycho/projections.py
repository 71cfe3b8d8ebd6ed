"""Constraint projections and the closed-form object/probe updates.

Full versions act on every exit wave of a scan. Partial versions act on the
fluid buffer only and fold in fixed sums over the frozen waves held in
:class:`FrozenAccumulators`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import ConfigError, InvalidInputError


@dataclass
class ExitWaveSet:
    """Exit waves ``(n, h, w)`` paired with top-left scan positions ``(n, 2)``.

    ``n == 0`` is allowed so an emptied fluid buffer can still be passed to
    the partial updates.
    """

    waves: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.waves = np.asarray(self.waves, dtype=np.complex128)
        if self.waves.ndim == 2:
            self.waves = self.waves[None]
        self.positions = grid.as_positions(self.positions)
        if self.waves.ndim != 3:
            raise InvalidInputError("waves must be a stack of 2-D grids")
        if self.waves.shape[0] != self.positions.shape[0]:
            raise InvalidInputError(
                f"{self.waves.shape[0]} waves but {self.positions.shape[0]} positions"
            )

    def __len__(self) -> int:
        return self.waves.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.waves.shape[1], self.waves.shape[2]

    def with_waves(self, waves: np.ndarray) -> "ExitWaveSet":
        return ExitWaveSet(waves, self.positions)

    def copy(self) -> "ExitWaveSet":
        return ExitWaveSet(self.waves.copy(), self.positions.copy())


@dataclass(frozen=True)
class ClipConfig:
    eps_denominator: float = 1e-12
    amp_percentile: float = 0.95

    def __post_init__(self):
        if not self.eps_denominator > 0:
            raise ConfigError("eps_denominator must be positive")
        if not 0 < self.amp_percentile <= 1:
            raise ConfigError("amp_percentile must lie in (0, 1]")


@dataclass
class FrozenAccumulators:
    """Running sums over frozen exit waves for the object and probe updates."""

    obj_num: np.ndarray
    obj_den: np.ndarray
    probe_num: np.ndarray
    probe_den: np.ndarray
    frozen_count: int = 0

    @classmethod
    def zeros(cls, obj_shape, probe_shape) -> "FrozenAccumulators":
        return cls(
            obj_num=np.zeros(obj_shape, dtype=np.complex128),
            obj_den=np.zeros(obj_shape, dtype=np.float64),
            probe_num=np.zeros(probe_shape, dtype=np.complex128),
            probe_den=np.zeros(probe_shape, dtype=np.float64),
        )

    def copy(self) -> "FrozenAccumulators":
        return FrozenAccumulators(
            self.obj_num.copy(), self.obj_den.copy(),
            self.probe_num.copy(), self.probe_den.copy(), self.frozen_count,
        )


def project_amplitudes(wave: np.ndarray, amps: np.ndarray) -> np.ndarray:
    """Replace the Fourier moduli of ``wave`` by ``amps`` keeping the phases.

    Works on a single grid or a stack. Where the spectrum is exactly zero the
    phase is taken as 0.
    """
    wave = np.asarray(wave)
    amps = np.asarray(amps, dtype=np.float64)
    if wave.shape != amps.shape:
        raise InvalidInputError(f"shape mismatch {wave.shape} vs {amps.shape}")
    if np.any(amps < 0):
        raise InvalidInputError("negative amplitude")
    spec = grid.fft2(wave)
    mag = np.abs(spec)
    unit = np.divide(spec, mag, out=np.ones_like(spec), where=mag > 0)
    return grid.ifft2(amps * unit)


def segment(obj: np.ndarray, probe: np.ndarray, positions, origin=(0, 0)) -> ExitWaveSet:
    """Cut ``obj`` into probe windows and multiply each by the probe.

    ``origin`` is the absolute position of ``obj[0, 0]``, which lets the
    engine work on a cropped sub-canvas while keeping absolute positions.
    """
    pos = grid.as_positions(positions)
    h, w = probe.shape
    windows = grid.extract_windows(obj, pos - np.asarray(origin), h, w)
    return ExitWaveSet(probe * windows, pos)


def _object_sums(ews: ExitWaveSet, probe: np.ndarray, num: np.ndarray, den: np.ndarray,
                 origin=(0, 0)) -> None:
    if len(ews) == 0:
        return
    if probe.shape != ews.shape:
        raise InvalidInputError(f"probe shape {probe.shape} != wave shape {ews.shape}")
    rel = ews.positions - np.asarray(origin)
    grid.accumulate_windows(num, rel, np.conj(probe) * ews.waves)
    intensity = np.abs(probe) ** 2
    grid.accumulate_windows(den, rel, np.broadcast_to(intensity, ews.waves.shape))


def _ratio(num: np.ndarray, den: np.ndarray, clip: ClipConfig) -> np.ndarray:
    return num / np.maximum(den, clip.eps_denominator)


def object_update(ews: ExitWaveSet, probe: np.ndarray, obj_shape, clip: ClipConfig = ClipConfig()
                  ) -> np.ndarray:
    """Least-squares object from exit waves and a fixed probe (overlap-add / probe power)."""
    num = np.zeros(obj_shape, dtype=np.complex128)
    den = np.zeros(obj_shape, dtype=np.float64)
    _object_sums(ews, probe, num, den)
    return _ratio(num, den, clip)


def project_consistency(ews: ExitWaveSet, probe: np.ndarray, clip: ClipConfig = ClipConfig(),
                        obj_shape=None) -> ExitWaveSet:
    """Map exit waves onto the set explainable by a single object.

    Only the bounding box of the scan windows is materialised; pass
    ``obj_shape`` to use the full canvas instead (identical result).
    """
    h, w = ews.shape
    if obj_shape is None:
        origin, shape = window_box(ews.positions, h, w)
    else:
        origin, shape = (0, 0), tuple(obj_shape)
    num = np.zeros(shape, dtype=np.complex128)
    den = np.zeros(shape, dtype=np.float64)
    _object_sums(ews, probe, num, den, origin)
    return segment(_ratio(num, den, clip), probe, ews.positions, origin)


def window_box(positions, h: int, w: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """``(origin, shape)`` of the smallest box containing all windows."""
    pos = grid.as_positions(positions)
    y0, x0 = pos.min(axis=0)
    y1, x1 = pos.max(axis=0)
    return (int(y0), int(x0)), (int(y1 - y0 + h), int(x1 - x0 + w))


def partial_object_local(fluid: ExitWaveSet, acc: FrozenAccumulators, probe: np.ndarray,
                         clip: ClipConfig, origin, shape) -> np.ndarray:
    """Partial object update evaluated on the sub-canvas ``[origin, origin+shape)``."""
    y0, x0 = origin
    sl = (slice(y0, y0 + shape[0]), slice(x0, x0 + shape[1]))
    num = acc.obj_num[sl].copy()
    den = acc.obj_den[sl].copy()
    if num.shape != tuple(shape):
        raise grid.BoundsError(f"box {origin}+{shape} outside accumulator canvas")
    _object_sums(fluid, probe, num, den, origin)
    return _ratio(num, den, clip)


def partial_object_update(fluid: ExitWaveSet, acc: FrozenAccumulators, probe: np.ndarray,
                          clip: ClipConfig = ClipConfig()) -> np.ndarray:
    """Object from frozen sums plus the fluid buffer's contribution. ``acc`` is not modified."""
    return partial_object_local(fluid, acc, probe, clip, (0, 0), acc.obj_num.shape)


def project_consistency_partial(fluid: ExitWaveSet, acc: FrozenAccumulators, probe: np.ndarray,
                                clip: ClipConfig = ClipConfig()) -> ExitWaveSet:
    """Consistency projection of the fluid waves against the frozen content."""
    h, w = fluid.shape
    origin, shape = window_box(fluid.positions, h, w)
    local = partial_object_local(fluid, acc, probe, clip, origin, shape)
    return segment(local, probe, fluid.positions, origin)


def probe_update(ews: ExitWaveSet, obj: np.ndarray, clip: ClipConfig = ClipConfig(),
                 origin=(0, 0)) -> np.ndarray:
    """Least-squares probe from exit waves and a fixed object."""
    h, w = ews.shape
    windows = grid.extract_windows(obj, ews.positions - np.asarray(origin), h, w)
    num = np.sum(np.conj(windows) * ews.waves, axis=0)
    den = np.sum(np.abs(windows) ** 2, axis=0)
    return _ratio(num, den, clip)


def percentile_clip(summands: np.ndarray, fraction: float) -> np.ndarray:
    """Clip each summand's amplitudes at its own nearest-rank percentile.

    Phases are kept. ``summands`` is a single grid or an ``(n, h, w)`` stack;
    the percentile is taken per grid over all of its pixels.
    """
    s = np.asarray(summands, dtype=np.complex128)
    single = s.ndim == 2
    if single:
        s = s[None]
    amp = np.abs(s)
    flat = amp.reshape(amp.shape[0], -1)
    thresh = np.quantile(flat, fraction, axis=1, method="inverted_cdf")[:, None, None]
    over = amp > thresh
    scale = np.divide(thresh, amp, out=np.ones_like(amp), where=over)
    out = s * scale
    # rescaling can overshoot the threshold by an ulp; nudge down until it holds
    for _ in range(8):
        bad = np.abs(out) > thresh
        if not bad.any():
            break
        out[bad] *= np.nextafter(1.0, 0.0)
    return out[0] if single else out


def clipped_probe_summands(windows: np.ndarray, waves: np.ndarray, fraction: float
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Probe-update summands ``conj(O_k) Psi_k`` and ``|O_k|^2``, each percentile-clipped.

    Clipping the denominator summands as well keeps a few overshooting
    object pixels from darkening the probe, which would in turn produce
    more overshooting pixels at the next update.
    """
    num = percentile_clip(np.conj(windows) * waves, fraction)
    den = percentile_clip(np.abs(windows) ** 2, fraction).real
    return num, den


def partial_probe_update(fluid: ExitWaveSet, acc: FrozenAccumulators, obj: np.ndarray,
                         clip: ClipConfig, norm_target: float, origin=(0, 0)) -> np.ndarray:
    """Probe from frozen sums plus percentile-clipped fluid summands, rescaled to ``norm_target``."""
    if not norm_target > 0:
        raise ConfigError("norm_target must be positive")
    h, w = fluid.shape
    num = acc.probe_num.copy()
    den = acc.probe_den.copy()
    if len(fluid):
        windows = grid.extract_windows(obj, fluid.positions - np.asarray(origin), h, w)
        s_num, s_den = clipped_probe_summands(windows, fluid.waves, clip.amp_percentile)
        num += s_num.sum(axis=0)
        den += s_den.sum(axis=0)
    return rescale_norm(_ratio(num, den, clip), norm_target)


def rescale_norm(probe: np.ndarray, norm_target: float) -> np.ndarray:
    norm = np.linalg.norm(probe)
    if not norm > 0:
        raise InvalidInputError("cannot rescale an all-zero probe")
    return probe * (norm_target / norm)


def accumulate_frozen(acc: FrozenAccumulators, probe: np.ndarray, obj: np.ndarray,
                      wave: np.ndarray, pos, clip: ClipConfig | None = None,
                      origin=(0, 0)) -> None:
    """Fold one exit wave into the frozen sums using the current estimates.

    When ``clip`` is given the probe summands are percentile-clipped the
    same way as fluid summands in :func:`partial_probe_update`.
    """
    h, w = probe.shape
    if wave.shape != probe.shape:
        raise InvalidInputError("wave must be probe-shaped")
    pos = grid.as_positions(pos)
    grid.accumulate_window(acc.obj_num, pos, np.conj(probe) * wave)
    grid.accumulate_window(acc.obj_den, pos, np.abs(probe) ** 2)
    window = grid.extract_window(obj, pos - np.asarray(origin), h, w)
    if clip is None:
        s_num, s_den = np.conj(window) * wave, np.abs(window) ** 2
    else:
        s_num, s_den = clipped_probe_summands(window, wave, clip.amp_percentile)
    acc.probe_num += s_num
    acc.probe_den += s_den
    acc.frozen_count += 1


@dataclass
class ProbeRefinement:
    """Probe estimate refined inside every consistency projection.

    Passed in place of a fixed probe when the probe is being retrieved;
    ``probe`` is replaced on each call.
    """

    probe: np.ndarray
    norm_target: float
    passes: int = 2

    def __post_init__(self):
        if self.passes < 1:
            raise ConfigError("probe refinement needs at least one pass")
        if not self.norm_target > 0:
            raise ConfigError("norm_target must be positive")


def project_consistency_joint(ews: ExitWaveSet, refine: ProbeRefinement,
                              clip: ClipConfig = ClipConfig(),
                              acc: FrozenAccumulators | None = None) -> ExitWaveSet:
    """Consistency projection over object and probe together.

    Alternates the object update and the norm-locked probe update
    ``refine.passes`` times, then segments the last object with the last
    probe. With ``acc`` the frozen sums enter both updates and fluid probe
    summands are percentile-clipped.
    """
    h, w = ews.shape
    origin, shape = window_box(ews.positions, h, w)
    for _ in range(refine.passes):
        if acc is None:
            num = np.zeros(shape, dtype=np.complex128)
            den = np.zeros(shape, dtype=np.float64)
            _object_sums(ews, refine.probe, num, den, origin)
            local = _ratio(num, den, clip)
            refine.probe = rescale_norm(probe_update(ews, local, clip, origin), refine.norm_target)
        else:
            local = partial_object_local(ews, acc, refine.probe, clip, origin, shape)
            refine.probe = partial_probe_update(ews, acc, local, clip, refine.norm_target, origin)
    return segment(local, refine.probe, ews.positions, origin)
