"""Batch ER/DM and their live single-buffer steps (LER/LDM).

Every step takes an optional ``acc``: with ``acc=None`` the full consistency
projection is used, otherwise the partial one against the frozen sums. The
live steps are thin aliases that make the accumulator mandatory.
"""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import grid
from .dataset import ScanDataset
from .errors import ConfigError, InvalidInputError
from .projections import (
    ClipConfig,
    ExitWaveSet,
    FrozenAccumulators,
    ProbeRefinement,
    object_update,
    project_amplitudes,
    project_consistency,
    project_consistency_joint,
    project_consistency_partial,
    rescale_norm,
)

ProbeMode = Literal["known", "retrieve"]


@dataclass(frozen=True)
class SolverConfig:
    iterations: int
    beta: float = 1.0
    probe_mode: ProbeMode = "known"
    clip: ClipConfig = ClipConfig()
    seed: int = 0
    probe_passes: int = 2   # object/probe alternations per consistency projection

    def __post_init__(self):
        if self.beta == 0:
            raise ConfigError("beta must be non-zero")
        if self.probe_passes < 1:
            raise ConfigError("probe_passes must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.probe_mode not in ("known", "retrieve"):
            raise ConfigError(f"unknown probe_mode {self.probe_mode!r}")


@dataclass(frozen=True)
class Schedule:
    """Ordered ``(algorithm, count)`` pairs run once per buffer shift."""

    steps: tuple[tuple[str, int], ...]

    def __post_init__(self):
        steps = tuple((str(a).upper(), int(c)) for a, c in self.steps)
        for alg, count in steps:
            if alg not in ("LDM", "LER"):
                raise ConfigError(f"unknown schedule algorithm {alg!r}")
            if count <= 0:
                raise ConfigError("schedule counts must be positive")
        if not steps:
            raise ConfigError("empty schedule")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        """Parse ``"ldm:8,ler:2"``."""
        steps = []
        for part in text.split(","):
            try:
                alg, count = part.split(":")
                steps.append((alg.strip(), int(count)))
            except ValueError as exc:
                raise ConfigError(f"bad schedule entry {part!r}") from exc
        return cls(tuple(steps))

    @classmethod
    def uniform(cls, alg: str, count: int) -> "Schedule":
        return cls(((alg, count),))

    @property
    def total(self) -> int:
        return sum(c for _, c in self.steps)

    def expand(self) -> list[str]:
        return [alg for alg, count in self.steps for _ in range(count)]

    def __str__(self) -> str:
        return ",".join(f"{a.lower()}:{c}" for a, c in self.steps)


def _check_amps(ews: ExitWaveSet, amps: np.ndarray) -> np.ndarray:
    amps = np.asarray(amps, dtype=np.float64)
    if amps.shape != ews.waves.shape:
        raise InvalidInputError(f"amplitudes {amps.shape} do not match waves {ews.waves.shape}")
    return amps


def _consistency(ews, probe, clip, acc, counter):
    if counter is not None:
        counter["consistency"] += 1
    if isinstance(probe, ProbeRefinement):
        if counter is not None:
            counter["probe_update"] += probe.passes
        return project_consistency_joint(ews, probe, clip, acc)
    if acc is None:
        return project_consistency(ews, probe, clip)
    return project_consistency_partial(ews, acc, probe, clip)


def _amplitude(waves, amps, counter):
    if counter is not None:
        counter["amplitude"] += 1
    return project_amplitudes(waves, amps)


def er_step(ews: ExitWaveSet, amps, probe, clip: ClipConfig = ClipConfig(),
            acc: FrozenAccumulators | None = None, counter: Counter | None = None) -> ExitWaveSet:
    """One error-reduction iteration: amplitude projection of the consistency projection."""
    amps = _check_amps(ews, amps)
    pc = _consistency(ews, probe, clip, acc, counter)
    return ews.with_waves(_amplitude(pc.waves, amps, counter))


def dm_step(ews: ExitWaveSet, amps, probe, beta: float = 1.0, clip: ClipConfig = ClipConfig(),
            acc: FrozenAccumulators | None = None, counter: Counter | None = None) -> ExitWaveSet:
    """One difference-map iteration with relaxation ``beta``.

    ``beta == 1`` uses the reduced form ``psi + P_A(2 P_C psi - psi) - P_C psi``
    (two projections instead of four).
    """
    if beta == 0:
        raise ConfigError("beta must be non-zero")
    amps = _check_amps(ews, amps)
    psi = ews.waves
    if beta == 1:
        pc = _consistency(ews, probe, clip, acc, counter).waves
        return ews.with_waves(psi + _amplitude(2 * pc - psi, amps, counter) - pc)
    pa = _amplitude(psi, amps, counter)
    pc = _consistency(ews, probe, clip, acc, counter).waves
    f_c = pc + (pc - psi) / beta
    f_a = pa - (pa - psi) / beta
    a_of_fc = _amplitude(f_c, amps, counter)
    c_of_fa = _consistency(ews.with_waves(f_a), probe, clip, acc, counter).waves
    return ews.with_waves(psi + beta * (a_of_fc - c_of_fa))


def ler_step(fluid: ExitWaveSet, fluid_amps, acc: FrozenAccumulators, probe,
             clip: ClipConfig = ClipConfig(), counter: Counter | None = None) -> ExitWaveSet:
    return er_step(fluid, fluid_amps, probe, clip, acc=acc, counter=counter)


def ldm_step(fluid: ExitWaveSet, fluid_amps, acc: FrozenAccumulators, probe, beta: float = 1.0,
             clip: ClipConfig = ClipConfig(), counter: Counter | None = None) -> ExitWaveSet:
    return dm_step(fluid, fluid_amps, probe, beta, clip, acc=acc, counter=counter)


def amplitude_residual(ews: ExitWaveSet, amps) -> float:
    """Sum over waves of ``|| |F psi| - A ||^2``."""
    return float(np.sum((np.abs(grid.fft2(ews.waves)) - amps) ** 2))


def init_probe_guess(frames, seed: int) -> tuple[np.ndarray, float]:
    """Complex Gaussian noise probe scaled to the brightest frame's amplitude norm.

    Returns ``(probe, norm_target)``. Frames are intensities.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise InvalidInputError("need at least one frame")
    norm_target = max(float(np.linalg.norm(np.sqrt(f))) for f in frames)
    if not norm_target > 0:
        raise InvalidInputError("all frames are dark; cannot set probe norm")
    rng = np.random.default_rng(seed)
    shape = frames[0].shape
    noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return rescale_norm(noise, norm_target), norm_target


def zero_phase_waves(dataset: ScanDataset) -> ExitWaveSet:
    return ExitWaveSet(grid.ifft2(dataset.amplitudes.astype(np.complex128)), dataset.positions)


@dataclass
class ClassicRun:
    object: np.ndarray
    probe: np.ndarray
    waves: ExitWaveSet
    counter: Counter = field(default_factory=Counter)
    wall_time: float = 0.0


def iterate_classic(dataset: ScanDataset, config: SolverConfig, alg: str,
                    initial_probe: np.ndarray | None = None,
                    initial_waves: ExitWaveSet | None = None,
                    norm_target: float | None = None,
                    on_iteration: Callable[[int, ExitWaveSet, np.ndarray], None] | None = None,
                    ) -> ClassicRun:
    """Run ER or DM over all waves and return the final waves alongside the estimates."""
    alg = alg.upper()
    if alg not in ("ER", "DM"):
        raise ConfigError(f"unknown algorithm {alg!r}")
    if initial_probe is None:
        if config.probe_mode == "known":
            raise ConfigError("known-probe mode requires a probe")
        initial_probe, guess_norm = init_probe_guess(dataset.intensities, config.seed)
        norm_target = norm_target or guess_norm
    probe = np.array(initial_probe, dtype=np.complex128)
    if probe.shape != dataset.probe_shape:
        raise ConfigError(f"probe shape {probe.shape} != frame shape {dataset.probe_shape}")
    if config.probe_mode == "retrieve" and norm_target is None:
        norm_target = float(np.linalg.norm(probe))
    ews = zero_phase_waves(dataset) if initial_waves is None else initial_waves.copy()
    amps = dataset.amplitudes
    counter: Counter = Counter()
    # in retrieve mode the probe is refined inside every consistency projection
    refine = None
    if config.probe_mode == "retrieve":
        refine = ProbeRefinement(probe, norm_target, config.probe_passes)
    start = time.perf_counter()
    for j in range(config.iterations):
        target = probe if refine is None else refine
        if alg == "ER":
            ews = er_step(ews, amps, target, config.clip, counter=counter)
        else:
            ews = dm_step(ews, amps, target, config.beta, config.clip, counter=counter)
        if refine is not None:
            probe = refine.probe
        if on_iteration is not None:
            on_iteration(j, ews, probe)
    obj = object_update(ews, probe, dataset.object_shape, config.clip)
    return ClassicRun(obj, probe, ews, counter, time.perf_counter() - start)


def run_classic(dataset: ScanDataset, config: SolverConfig, alg: str = "DM",
                initial_probe: np.ndarray | None = None, **kwargs):
    """Classic batch reconstruction. Returns ``(object, probe, report)``.

    The report carries runtime counters only; fill in the error metrics with
    :func:`liveptycho.analysis.evaluate` when ground truth is available.
    """
    from .analysis import ReconReport

    run = iterate_classic(dataset, config, alg, initial_probe, **kwargs)
    report = ReconReport(
        projections_evaluated=int(run.counter["amplitude"] + run.counter["consistency"]),
        wall_time=run.wall_time,
    )
    return run.object, run.probe, report
