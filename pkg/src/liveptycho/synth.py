"""Synthetic experiments: complex test objects, Zernike-aberrated probes,
Archimedes spiral scans and the noiseless far-field forward model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from matplotlib.colors import rgb_to_hsv
from PIL import Image, UnidentifiedImageError

from . import grid
from .dataset import ScanDataset
from .errors import ConfigError, DataError

ObjectMode = Literal["hsv", "phase_only", "pair", "procedural"]
_IMAGES_NEEDED = {"hsv": 1, "phase_only": 1, "pair": 2, "procedural": 0}


# -- objects -------------------------------------------------------------

@dataclass(frozen=True)
class ObjectSpec:
    mode: ObjectMode = "procedural"
    size: int = 256
    amp_offset: float = 0.5
    phase_scale: float = 0.6
    images: tuple = ()

    def __post_init__(self):
        if self.mode not in _IMAGES_NEEDED:
            raise ConfigError(f"unknown object mode {self.mode!r}")
        if not 0 <= self.amp_offset <= 1:
            raise ConfigError("amp_offset must lie in [0, 1]")
        if not 0.3 <= self.phase_scale <= 0.99:
            raise ConfigError("phase_scale must lie in [0.3, 0.99]")
        if len(self.images) < _IMAGES_NEEDED[self.mode]:
            raise ConfigError(f"mode {self.mode!r} needs {_IMAGES_NEEDED[self.mode]} image(s)")

    @classmethod
    def random(cls, rng: np.random.Generator, mode: ObjectMode = "procedural", size: int = 256,
               images: Sequence = ()) -> "ObjectSpec":
        """Draw the amplitude offset from U[0, 1] and the phase scale from U[0.3, 0.99]."""
        return cls(mode, size, float(rng.uniform(0, 1)), float(rng.uniform(0.3, 0.99)),
                   tuple(images))


def load_rgb(source, size: int) -> np.ndarray:
    """Centre-crop to a square, resize to ``size`` and return RGB floats in [0, 1]."""
    if isinstance(source, np.ndarray):
        arr = np.asarray(source, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DataError(f"expected an (H, W, 3) RGB array, got {arr.shape}")
        if arr.max() > 1:
            arr = arr / 255.0
        img = Image.fromarray(np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8))
    else:
        try:
            img = Image.open(Path(source))
            img.load()
        except (OSError, UnidentifiedImageError) as exc:
            raise DataError(f"cannot read image {source}: {exc}") from exc
        if img.mode not in ("RGB", "RGBA", "L", "P"):
            raise DataError(f"unsupported image mode {img.mode}")
        img = img.convert("RGB")
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side)).resize((size, size), Image.BICUBIC)
    return np.asarray(img, dtype=np.float64) / 255.0


def to_gray(rgb: np.ndarray) -> np.ndarray:
    return rgb @ np.array([0.299, 0.587, 0.114])


def smooth_texture(size: int, rng: np.random.Generator, widths=(0.01, 0.03, 0.08)) -> np.ndarray:
    """Band-limited random texture in [0, 1], a sum of Gaussian-filtered noise fields.

    ``widths`` are filter standard deviations in cycles per pixel.
    """
    f = np.fft.fftfreq(size)
    fr2 = f[:, None] ** 2 + f[None, :] ** 2
    field_ = np.zeros((size, size))
    for width in widths:
        noise = rng.standard_normal((size, size))
        band = np.real(np.fft.ifft2(np.fft.fft2(noise) * np.exp(-fr2 / (2 * width ** 2))))
        field_ += band / band.std()
    field_ -= field_.min()
    return field_ / field_.max()


def make_object(spec: ObjectSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Complex object ``((A + a)/(1 + a)) * exp(2j*pi*b*phi)`` from images or textures."""
    size = spec.size
    if spec.mode == "procedural":
        if rng is None:
            raise ConfigError("procedural mode needs an rng")
        phase_src = smooth_texture(size, rng)
        amp_src = smooth_texture(size, rng)
    elif spec.mode == "hsv":
        hsv = rgb_to_hsv(load_rgb(spec.images[0], size))
        phase_src, amp_src = hsv[..., 0], hsv[..., 2]
    elif spec.mode == "phase_only":
        phase_src = to_gray(load_rgb(spec.images[0], size))
        amp_src = np.ones((size, size))
    else:
        phase_src = to_gray(load_rgb(spec.images[0], size))
        amp_src = to_gray(load_rgb(spec.images[1], size))
    a, b = spec.amp_offset, spec.phase_scale
    amplitude = (amp_src + a) / (1 + a)
    return amplitude * np.exp(2j * np.pi * b * phase_src)


# -- probes --------------------------------------------------------------

def noll_to_nm(j: int) -> tuple[int, int]:
    """Noll index (from 1) to radial order ``n`` and signed azimuthal frequency ``m``."""
    if j < 1:
        raise ValueError("Noll indices start at 1")
    n, rem = 0, j - 1
    while rem > n:
        n += 1
        rem -= n
    m = (-1) ** j * ((n % 2) + 2 * ((rem + ((n + 1) % 2)) // 2))
    return n, m


def noll_count(max_degree: int) -> int:
    return (max_degree + 1) * (max_degree + 2) // 2


def zernike_radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    out = np.zeros_like(rho, dtype=np.float64)
    for k in range((n - m) // 2 + 1):
        c = (-1) ** k * math.factorial(n - k) / (
            math.factorial(k) * math.factorial((n + m) // 2 - k) * math.factorial((n - m) // 2 - k))
        out += c * rho ** (n - 2 * k)
    return out


def zernike(j: int, rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Noll-normalised Zernike polynomial ``Z_j`` (unit RMS over the unit disk)."""
    n, m = noll_to_nm(j)
    radial = zernike_radial(n, m, rho)
    if m == 0:
        return math.sqrt(n + 1) * radial
    norm = math.sqrt(2 * (n + 1))
    return norm * radial * (np.cos(m * phi) if m > 0 else np.sin(-m * phi))


def zernike_sum(coefficients: np.ndarray, rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho, dtype=np.float64)
    for j, c in enumerate(coefficients, start=1):
        if c:
            out += c * zernike(j, rho, phi)
    return out


@dataclass(frozen=True)
class ProbeSpec:
    size: int = 64
    max_degree: int = 4
    coeff_sigma: float = 0.2
    radius_fraction: float = 1 / 9
    seed: int = 0
    coefficients: tuple | None = None   # Noll-ordered, index 0 is piston

    @classmethod
    def random(cls, seed: int, size: int = 64, **kwargs) -> "ProbeSpec":
        """Aperture radius fraction drawn from U[1/11, 1/7]."""
        rng = np.random.default_rng([seed, 1])
        return cls(size=size, radius_fraction=float(rng.uniform(1 / 11, 1 / 7)), seed=seed,
                   **kwargs)

    def draw_coefficients(self) -> np.ndarray:
        if self.coefficients is not None:
            c = np.zeros(noll_count(self.max_degree))
            c[:len(self.coefficients)] = self.coefficients
        else:
            rng = np.random.default_rng(self.seed)
            c = rng.normal(0.0, self.coeff_sigma, noll_count(self.max_degree))
        c[0] = 0.0
        return c


def aperture(spec: ProbeSpec) -> np.ndarray:
    """Circular pupil with the Zernike phase, zero outside the radius."""
    radius = spec.radius_fraction * spec.size
    if radius < 2:
        raise ConfigError(f"aperture radius {radius:.2f} px is below 2 px")
    if radius > spec.size / 2:
        raise ConfigError("aperture does not fit in the array")
    c = (spec.size) / 2
    yy, xx = np.indices((spec.size, spec.size)) - c
    rho = np.hypot(yy, xx) / radius
    phi = np.arctan2(yy, xx)
    inside = rho <= 1
    phase = zernike_sum(spec.draw_coefficients(), rho, phi)
    return np.where(inside, np.exp(1j * phase), 0)


def make_zernike_probe(spec: ProbeSpec) -> np.ndarray:
    """Focused probe: centred unitary DFT of the aberrated circular aperture."""
    pupil = aperture(spec)
    return np.fft.fftshift(grid.fft2(np.fft.ifftshift(pupil)))


# -- scan ----------------------------------------------------------------

@dataclass(frozen=True)
class ScanSpec:
    count: int = 400
    pitch: float = 5.0
    sampling: Literal["arc_length", "uniform_theta"] = "arc_length"
    center: tuple[float, float] | None = None   # probe-centre coordinates; default: object centre
    max_radius: float | None = None             # default: largest in-bounds radius

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("count must be positive")
        if not self.pitch > 0:
            raise ConfigError("pitch must be positive")
        if self.sampling not in ("arc_length", "uniform_theta"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")


def spiral_arc_length(theta, pitch: float):
    """Arc length of ``r = pitch * theta`` from 0 to ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    return 0.5 * pitch * (theta * np.sqrt(1 + theta ** 2) + np.arcsinh(theta))


def _invert_arc_length(s: np.ndarray, pitch: float) -> np.ndarray:
    # s(theta) is convex and s >= pitch*theta^2/2, so Newton from this guess
    # approaches the root monotonically from above
    theta = np.sqrt(2 * s / pitch)
    for _ in range(100):
        step = (spiral_arc_length(theta, pitch) - s) / (pitch * np.sqrt(1 + theta ** 2))
        theta = theta - step
        if np.max(np.abs(step)) < 1e-14:
            break
    return theta


def spiral_geometry(spec: ScanSpec, object_shape, probe_shape) -> tuple[np.ndarray, np.ndarray]:
    """Continuous spiral as ``(theta, centres)`` with centres ``(K, 2)`` in probe-centre coordinates."""
    H, W = object_shape
    h, w = probe_shape
    cy, cx = spec.center if spec.center is not None else (H / 2, W / 2)
    limit = min(cy - h / 2, H - h / 2 - cy, cx - w / 2, W - w / 2 - cx)
    if limit < 0:
        raise ConfigError("scan centre leaves no room for the probe window")
    r_max = limit if spec.max_radius is None else spec.max_radius
    if r_max > limit + 1e-9:
        raise ConfigError(f"spiral radius {r_max} exceeds in-bounds limit {limit}")
    if spec.count == 1:
        theta = np.zeros(1)
    else:
        theta_max = r_max / spec.pitch
        if spec.sampling == "uniform_theta":
            theta = np.linspace(0.0, theta_max, spec.count)
        else:
            targets = np.linspace(0.0, spiral_arc_length(theta_max, spec.pitch), spec.count)
            theta = _invert_arc_length(targets, spec.pitch)
            theta[-1] = theta_max
    r = spec.pitch * theta
    centres = np.stack([cy + r * np.sin(theta), cx + r * np.cos(theta)], axis=1)
    return theta, centres


def make_spiral_positions(spec: ScanSpec, object_shape, probe_shape) -> np.ndarray:
    """Integer top-left window offsets along an Archimedes spiral, shape ``(K, 2)``."""
    _, centres = spiral_geometry(spec, object_shape, probe_shape)
    h, w = probe_shape
    topleft = np.rint(centres - np.array([h / 2, w / 2])).astype(np.int64)
    try:
        return grid.check_bounds(object_shape, topleft, h, w)
    except grid.BoundsError as exc:
        raise ConfigError(str(exc)) from exc


# -- forward model ---------------------------------------------------------

def forward_model(obj: np.ndarray, probe: np.ndarray, positions,
                  photons: float | None = None, rng: np.random.Generator | None = None
                  ) -> np.ndarray:
    """Far-field intensities ``|F(P * O_k)|^2`` for every position, ``(K, h, w)``.

    ``photons`` switches on Poisson counting noise with that mean total count
    per frame; the default is noiseless.
    """
    h, w = probe.shape
    exit_waves = probe * grid.extract_windows(obj, positions, h, w)
    intensities = np.abs(grid.fft2(exit_waves)) ** 2
    if photons is not None:
        rng = rng or np.random.default_rng()
        scale = photons / intensities.sum(axis=(1, 2), keepdims=True).clip(min=1e-300)
        intensities = rng.poisson(intensities * scale) / scale
    return intensities


# -- whole experiment ----------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    object_size: int = 256
    probe_size: int = 32
    positions: int = 400
    pitch: float = 5.0
    object_mode: ObjectMode = "procedural"
    images: tuple = ()
    sampling: Literal["arc_length", "uniform_theta"] = "arc_length"
    seed: int = 0


@dataclass
class Simulation:
    object: np.ndarray
    probe: np.ndarray
    dataset: ScanDataset
    object_spec: ObjectSpec
    probe_spec: ProbeSpec
    scan_spec: ScanSpec


def simulate(config: SimulationConfig) -> Simulation:
    """Generate object, probe, spiral scan and intensities from one seed."""
    obj_seq, probe_seq = np.random.SeedSequence(config.seed).spawn(2)
    obj_rng = np.random.default_rng(obj_seq)
    object_spec = ObjectSpec.random(obj_rng, config.object_mode, config.object_size, config.images)
    obj = make_object(object_spec, obj_rng)
    probe_spec = ProbeSpec.random(int(probe_seq.generate_state(1)[0]), config.probe_size)
    probe = make_zernike_probe(probe_spec)
    scan_spec = ScanSpec(config.positions, config.pitch, config.sampling)
    positions = make_spiral_positions(scan_spec, obj.shape, probe.shape)
    intensities = forward_model(obj, probe, positions)
    dataset = ScanDataset(intensities, positions, obj.shape)
    return Simulation(obj, probe, dataset, object_spec, probe_spec, scan_spec)
