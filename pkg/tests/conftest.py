import numpy as np
import pytest

from liveptycho.projections import ExitWaveSet

ACCEPTANCE_LINES: dict[int, str] = {}


def dft_matrix(n: int) -> np.ndarray:
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)


def direct_dft2(g: np.ndarray) -> np.ndarray:
    """Quadratic-time unitary 2-D DFT, independent of numpy.fft."""
    h, w = g.shape
    return dft_matrix(h) @ g @ dft_matrix(w).T


def direct_idft2(g: np.ndarray) -> np.ndarray:
    h, w = g.shape
    return np.conj(dft_matrix(h)) @ g @ np.conj(dft_matrix(w)).T


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_problem(rng, obj_size=(20, 20), probe_size=(6, 6), k=4):
    """Random object, nowhere-vanishing probe and in-bounds positions."""
    obj = crandn(rng, *obj_size)
    probe = crandn(rng, *probe_size)
    probe += 3 * np.exp(1j * np.angle(probe))  # keep |probe| bounded away from 0
    h, w = probe_size
    ys = rng.integers(0, obj_size[0] - h + 1, k)
    xs = rng.integers(0, obj_size[1] - w + 1, k)
    return obj, probe, np.stack([ys, xs], axis=1)


def random_waves(rng, positions, probe_size):
    return ExitWaveSet(crandn(rng, len(positions), *probe_size), positions)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


def oracle_pa(waves: np.ndarray, amps: np.ndarray) -> np.ndarray:
    """Amplitude projection through the direct DFT, wave by wave."""
    out = np.empty_like(waves, dtype=complex)
    for k in range(len(waves)):
        spec = direct_dft2(waves[k])
        phase = np.where(np.abs(spec) > 0, np.exp(1j * np.angle(spec)), 1.0)
        out[k] = direct_idft2(amps[k] * phase)
    return out


def oracle_pc(waves: np.ndarray, positions, probe: np.ndarray, obj_shape,
              frozen=((), ())) -> np.ndarray:
    """Consistency projection with explicit loops, optionally with extra frozen waves."""
    h, w = probe.shape
    num = np.zeros(obj_shape, complex)
    den = np.zeros(obj_shape)
    all_waves = list(frozen[0]) + list(waves)
    all_pos = list(frozen[1]) + list(positions)
    for wave, (y, x) in zip(all_waves, all_pos):
        num[y:y + h, x:x + w] += np.conj(probe) * wave
        den[y:y + h, x:x + w] += np.abs(probe) ** 2
    obj = num / np.maximum(den, 1e-12)
    return np.stack([probe * obj[y:y + h, x:x + w] for y, x in positions])
