"""Reconstruction quality metrics.

All metrics first remove the linear phase ramp of the estimate relative to
the ground truth and then absorb a global complex scale, so they measure
only the error that ptychography can actually resolve.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class ReconReport:
    e0_full: float | None = None
    e0_central: float | None = None
    psnr_amp_full: float | None = None
    psnr_amp_central: float | None = None
    overlap_ratio: float | None = None
    projections_evaluated: int = 0
    wall_time: float | None = None

    def to_json_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, float) and math.isinf(value):
                out[key] = "inf"
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "ReconReport":
        data = {k: (math.inf if v == "inf" else v) for k, v in data.items()}
        return cls(**data)


def central_region(shape, size: int) -> tuple[slice, slice]:
    """Slices of the centred ``size x size`` window of an array of ``shape``."""
    H, W = shape[-2:]
    if size > H or size > W or size <= 0:
        raise InvalidInputError(f"region {size} does not fit in {(H, W)}")
    y0, x0 = (H - size) // 2, (W - size) // 2
    return slice(y0, y0 + size), slice(x0, x0 + size)


def _region(shape, region):
    if region is None:
        return slice(None), slice(None)
    if isinstance(region, (int, np.integer)):
        return central_region(shape, int(region))
    return tuple(region)


def _dtft_objective(p, ys, xs, u):
    """``|X(u)|^2`` with gradient and Hessian for the 2-D DTFT of ``p``."""
    ey = np.exp(-2j * np.pi * u[0] * ys)
    ex = np.exp(-2j * np.pi * u[1] * xs)
    wy, wx = -2j * np.pi * ys, -2j * np.pi * xs
    X = ey @ p @ ex
    Xy = (wy * ey) @ p @ ex
    Xx = ey @ p @ (wx * ex)
    Xyy = (wy ** 2 * ey) @ p @ ex
    Xxx = ey @ p @ (wx ** 2 * ex)
    Xyx = (wy * ey) @ p @ (wx * ex)
    f = abs(X) ** 2
    grad = 2 * np.real(np.conj(X) * np.array([Xy, Xx]))
    d = np.array([Xy, Xx])
    second = np.array([[Xyy, Xyx], [Xyx, Xxx]])
    hess = 2 * np.real(np.conj(d)[:, None] * d[None, :] + np.conj(X) * second)
    return f, grad, hess


def _ramp_frequency(p: np.ndarray) -> np.ndarray:
    """Frequency (cycles/pixel) maximising ``|DTFT(p)|``.

    Coarse search on a 2x zero-padded FFT, then Newton refinement of the
    continuous transform so that the result is exact for arbitrary
    (non-integer) linear ramps.
    """
    H, W = p.shape
    spec = np.abs(np.fft.fft2(p, s=(2 * H, 2 * W)))
    iy, ix = np.unravel_index(int(np.argmax(spec)), spec.shape)
    u = np.array([np.fft.fftfreq(2 * H)[iy], np.fft.fftfreq(2 * W)[ix]])
    ys = np.arange(H) - (H - 1) / 2
    xs = np.arange(W) - (W - 1) / 2
    scale = 1.0 / max(float(np.sum(np.abs(p))) ** 2, 1e-300)
    for _ in range(60):
        f, g, h = _dtft_objective(p, ys, xs, u)
        f, g, h = f * scale, g * scale, h * scale
        step = None
        if np.all(np.linalg.eigvalsh(h) < 0):
            step = -np.linalg.solve(h, g)
        if step is None or np.max(np.abs(step)) > 0.5 / min(H, W):
            step = g / (np.linalg.norm(g) + 1e-300) * (0.25 / max(H, W))
            t = 1.0
            while t > 1e-6 and _dtft_objective(p, ys, xs, u + t * step)[0] * scale < f:
                t *= 0.5
            step = t * step
        u = u + step
        if np.max(np.abs(step)) < 1e-15:
            break
    return u


def remove_phase_ramp(est: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Remove the linear phase ramp and constant phase from ``est``.

    Without ``reference`` the ramp is located at the peak of the spectrum of
    ``est`` itself; with a reference it is the ramp of ``est * conj(reference)``,
    i.e. the ramp of the estimate relative to the reference. The constant
    phase is chosen so the (weighted) mean phase becomes zero.
    """
    est = np.asarray(est, dtype=np.complex128)
    p = est if reference is None else est * np.conj(reference)
    if not np.any(p):
        raise InvalidInputError("cannot remove phase ramp of an all-zero grid")
    u = _ramp_frequency(p)
    H, W = est.shape
    ramp = np.exp(-2j * np.pi * (u[0] * np.arange(H)[:, None] + u[1] * np.arange(W)[None, :]))
    total = np.sum(p * ramp)
    return est * ramp * np.exp(-1j * np.angle(total))


def align(truth: np.ndarray, est: np.ndarray, region=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(truth_region, gamma * est_region)`` after ramp removal and optimal scaling."""
    reg = _region(truth.shape, region)
    if truth.shape != est.shape:
        raise InvalidInputError(f"shape mismatch {truth.shape} vs {est.shape}")
    t = np.asarray(truth, dtype=np.complex128)[reg]
    e = np.asarray(est, dtype=np.complex128)[reg]
    if not np.sum(np.abs(t) ** 2) > 0:
        raise InvalidInputError("ground truth has zero energy in the region")
    if not np.any(e) or np.array_equal(t, e):
        return t, e
    e = remove_phase_ramp(e, reference=t)
    gamma = np.sum(t * np.conj(e)) / np.sum(np.abs(e) ** 2)
    return t, gamma * e


def e0_metric(truth: np.ndarray, est: np.ndarray, region=None) -> float:
    """Normalised squared error ``sum|O - g*Ô|^2 / sum|O|^2`` with the optimal complex ``g``.

    ``region`` is ``None`` (whole array), an int ``N`` for the centred
    ``N x N`` window, or a pair of slices.
    """
    t, e = align(truth, est, region)
    return float(np.sum(np.abs(t - e) ** 2) / np.sum(np.abs(t) ** 2))


def psnr(reference_amp: np.ndarray, est_amp: np.ndarray) -> float:
    """PSNR in dB with the peak set by ``max(reference_amp)``; ``inf`` when identical."""
    mse = float(np.mean((np.asarray(reference_amp) - np.asarray(est_amp)) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(float(np.max(reference_amp)) ** 2 / mse)


def psnr_amplitude(truth: np.ndarray, est: np.ndarray, region=None) -> float:
    """Amplitude PSNR after the same alignment as :func:`e0_metric`."""
    t, e = align(truth, est, region)
    return psnr(np.abs(t), np.abs(e))


def probe_diameter(probe: np.ndarray, energy_fraction: float = 0.9) -> float:
    """Twice the radius (about the intensity centroid) enclosing ``energy_fraction`` of the energy."""
    inten = np.abs(probe) ** 2
    total = inten.sum()
    if not total > 0:
        raise InvalidInputError("probe has no energy")
    yy, xx = np.indices(inten.shape)
    cy, cx = (inten * yy).sum() / total, (inten * xx).sum() / total
    r = np.hypot(yy - cy, xx - cx).ravel()
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(inten.ravel()[order]) / total
    k = int(np.searchsorted(cum, energy_fraction))
    return 2.0 * float(r[order][min(k, r.size - 1)])


def overlap_ratio(positions, diameter: float) -> float:
    """Mean linear overlap ``max(0, 1 - d/D)`` of scan-order-adjacent positions."""
    pos = np.asarray(positions, dtype=np.float64)
    if len(pos) < 2:
        raise InvalidInputError("overlap ratio needs at least two positions")
    if not diameter > 0:
        raise InvalidInputError("probe diameter must be positive")
    d = np.hypot(*np.diff(pos, axis=0).T)
    return float(np.mean(np.maximum(0.0, 1.0 - d / diameter)))


def evaluate(truth: np.ndarray, est: np.ndarray, *, central: int | None = None,
             positions=None, probe: np.ndarray | None = None,
             report: ReconReport | None = None) -> ReconReport:
    """Fill a :class:`ReconReport` with every metric computable from the inputs."""
    report = report or ReconReport()
    report.e0_full = e0_metric(truth, est)
    report.psnr_amp_full = psnr_amplitude(truth, est)
    if central is not None:
        report.e0_central = e0_metric(truth, est, central)
        report.psnr_amp_central = psnr_amplitude(truth, est, central)
    if positions is not None and probe is not None and len(positions) >= 2:
        report.overlap_ratio = overlap_ratio(positions, probe_diameter(probe))
    return report
