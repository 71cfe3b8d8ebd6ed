"""Live reconstruction engine: a fixed-size buffer sliding along the scan.

Frames are queued with :meth:`LiveEngine.push_frame`. Each call to
:meth:`LiveEngine.advance` runs ``J`` schedule iterations on the ``B`` fluid
exit waves, freezes the oldest one into the running sums and shifts the
buffer by one position. Work per frozen wave is independent of how many
frames came before it.
"""
from __future__ import annotations

import threading
from collections import Counter, deque
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from . import grid
from .dataset import ScanDataset
from .errors import ConfigError, InvalidInputError, StateError
from .projections import (
    ClipConfig,
    ExitWaveSet,
    FrozenAccumulators,
    ProbeRefinement,
    accumulate_frozen,
    partial_object_local,
    project_amplitudes,
    window_box,
)
from .solvers import (
    ProbeMode,
    Schedule,
    SolverConfig,
    init_probe_guess,
    iterate_classic,
    ldm_step,
    ler_step,
)

__all__ = [
    "EngineConfig", "FreezeEvent", "LiveEngine", "NotReady", "Snapshot",
    "informed_phase_init", "init_probe_guess",
]


@dataclass(frozen=True)
class EngineConfig:
    buffer_size: int = 10
    iters_per_shift: int = 10
    schedule: Schedule | None = None
    beta: float = 1.0
    probe_mode: ProbeMode = "known"
    bootstrap_frames: int = 20
    bootstrap_iters: int = 200
    clip: ClipConfig = ClipConfig()
    init_mode: Literal["informed", "naive"] = "informed"
    seed: int = 0
    probe_passes: int = 2   # object/probe alternations per consistency projection

    def __post_init__(self):
        if self.buffer_size < 1:
            raise ConfigError("buffer_size must be >= 1")
        if self.iters_per_shift < 1:
            raise ConfigError("iters_per_shift must be >= 1")
        if self.schedule is None:
            object.__setattr__(self, "schedule", Schedule.uniform("LDM", self.iters_per_shift))
        if self.schedule.total != self.iters_per_shift:
            raise ConfigError(
                f"schedule {self.schedule} sums to {self.schedule.total}, expected {self.iters_per_shift}"
            )
        if self.beta == 0:
            raise ConfigError("beta must be non-zero")
        if self.bootstrap_frames < 0 or self.bootstrap_iters < 0:
            raise ConfigError("bootstrap settings must be non-negative")
        if self.probe_mode not in ("known", "retrieve"):
            raise ConfigError(f"unknown probe_mode {self.probe_mode!r}")
        if self.probe_passes < 1:
            raise ConfigError("probe_passes must be >= 1")
        if self.init_mode not in ("informed", "naive"):
            raise ConfigError(f"unknown init_mode {self.init_mode!r}")


@dataclass(frozen=True)
class FreezeEvent:
    index: int          # scan index of the wave just frozen
    frontier: int       # number of frozen waves after this event
    projections: int    # projection evaluations spent in this cycle


@dataclass(frozen=True)
class NotReady:
    reason: str


@dataclass
class Snapshot:
    object: np.ndarray
    probe: np.ndarray | None
    frontier: int


def informed_phase_init(amps: np.ndarray, object_est: np.ndarray, probe_est: np.ndarray,
                        pos, origin=(0, 0)) -> np.ndarray:
    """Initial exit wave: measured amplitudes with phases predicted by the current estimates."""
    h, w = probe_est.shape
    window = grid.extract_window(object_est, np.asarray(pos) - np.asarray(origin), h, w)
    return project_amplitudes(probe_est * window, amps)


def naive_init(amps: np.ndarray) -> np.ndarray:
    return grid.ifft2(np.asarray(amps, dtype=np.complex128))


class LiveEngine:
    """Streaming reconstruction state machine.

    Phases: ``bootstrapping`` (only when ``bootstrap_frames > 0``) ->
    ``streaming`` -> ``draining`` (after :meth:`finalize`) -> ``done``.

    ``push_frame`` may be called from a producer thread while another thread
    drives ``advance``; the pending queue is the only shared structure.
    ``snapshot`` is safe from any thread.
    """

    def __init__(self, config: EngineConfig, object_shape, probe: np.ndarray | None = None,
                 on_iteration: Callable[[int, ExitWaveSet, np.ndarray], None] | None = None):
        if config.probe_mode == "known" and probe is None:
            raise ConfigError("known-probe mode requires a probe")
        self.config = config
        self.object_shape = tuple(int(v) for v in object_shape)
        self.on_iteration = on_iteration
        self.probe_est = None if probe is None else np.array(probe, dtype=np.complex128)
        self.probe_norm_target = None
        if self.probe_est is not None:
            self.probe_norm_target = float(np.linalg.norm(self.probe_est))
        self.object_est = np.zeros(self.object_shape, dtype=np.complex128)
        self.acc: FrozenAccumulators | None = None
        self.fluid: ExitWaveSet | None = None
        self.fluid_amps: np.ndarray | None = None
        self.fluid_index: list[int] = []
        self.loaded = 0
        self.bootstrapped = False
        self.phase = "bootstrapping" if config.bootstrap_frames > 0 else "streaming"
        self.counter: Counter = Counter()
        self._pending: deque = deque()
        self._pending_cv = threading.Condition()
        self._closed = False
        self._state_lock = threading.RLock()
        if self.probe_est is not None:
            self._ensure_acc(self.probe_est.shape)

    # -- ingestion -------------------------------------------------------

    def push_frame(self, intensity: np.ndarray, pos) -> None:
        """Queue one diffraction intensity and its top-left scan position."""
        intensity = np.asarray(intensity, dtype=np.float64)
        if intensity.ndim != 2:
            raise InvalidInputError("intensity must be a 2-D grid")
        if self.probe_est is not None and intensity.shape != self.probe_est.shape:
            raise InvalidInputError(f"frame shape {intensity.shape} != probe {self.probe_est.shape}")
        if not np.all(np.isfinite(intensity)) or np.any(intensity < 0):
            raise InvalidInputError("intensity must be finite and non-negative")
        pos = grid.check_bounds(self.object_shape, pos, *intensity.shape)[0]
        with self._pending_cv:
            if self._closed:
                raise StateError("engine is finalized; no more frames accepted")
            if self._pending and self._pending[0][0].shape != intensity.shape:
                raise InvalidInputError("all frames must share one shape")
            self._pending.append((intensity, pos))
            self._pending_cv.notify_all()

    @property
    def pending_count(self) -> int:
        with self._pending_cv:
            return len(self._pending)

    def wait_for_frames(self, count: int = 1, timeout: float | None = None) -> bool:
        """Block until at least ``count`` frames are pending (or the engine is closed)."""
        with self._pending_cv:
            return self._pending_cv.wait_for(
                lambda: len(self._pending) >= count or self._closed, timeout)

    def _take(self, n: int) -> list:
        with self._pending_cv:
            return [self._pending.popleft() for _ in range(min(n, len(self._pending)))]

    # -- state helpers ---------------------------------------------------

    @property
    def frontier(self) -> int:
        return 0 if self.acc is None else self.acc.frozen_count

    def _ensure_acc(self, probe_shape):
        if self.acc is None:
            self.acc = FrozenAccumulators.zeros(self.object_shape, probe_shape)

    def _retrieve(self) -> bool:
        return self.config.probe_mode == "retrieve"

    def _frozen_clip(self) -> ClipConfig | None:
        return self.config.clip if self._retrieve() else None

    def _set_fluid(self, waves, positions, amps, indices):
        self.fluid = ExitWaveSet(np.asarray(waves).reshape(-1, *self.probe_est.shape), positions)
        self.fluid_amps = np.asarray(amps, dtype=np.float64).reshape(self.fluid.waves.shape)
        self.fluid_index = list(indices)

    def _append_fluid(self, wave, pos, amps, index):
        if self.fluid is None or len(self.fluid) == 0:
            self._set_fluid(wave[None], [pos], amps[None], [index])
            return
        self._set_fluid(
            np.concatenate([self.fluid.waves, wave[None]]),
            np.concatenate([self.fluid.positions, np.asarray(pos)[None]]),
            np.concatenate([self.fluid_amps, amps[None]]),
            self.fluid_index + [index],
        )

    def fluid_size(self) -> int:
        return 0 if self.fluid is None else len(self.fluid)

    def state_nbytes(self) -> int:
        """Bytes held by the buffer, probe and probe-shaped sums (object canvas excluded)."""
        total = 0
        if self.fluid is not None:
            total += self.fluid.waves.nbytes + self.fluid.positions.nbytes + self.fluid_amps.nbytes
        if self.acc is not None:
            total += self.acc.probe_num.nbytes + self.acc.probe_den.nbytes
        if self.probe_est is not None:
            total += self.probe_est.nbytes
        return total

    # -- bootstrap -------------------------------------------------------

    def bootstrap(self) -> None:
        """Pre-reconstruct the first frames with classic DM and seed the buffer from the result."""
        with self._state_lock:
            if self.config.bootstrap_frames == 0 and self.phase == "streaming":
                return  # disabled: nothing to seed
            self._bootstrap(self.config.bootstrap_frames)

    def _bootstrap(self, n_frames: int) -> None:
        cfg = self.config
        if self.phase != "bootstrapping":
            raise StateError(f"bootstrap not allowed in phase {self.phase!r}")
        if n_frames == 0:
            self.phase = "streaming"
            return
        if self.pending_count < n_frames:
            raise StateError(f"bootstrap needs {n_frames} frames, have {self.pending_count}")
        frames = self._take(n_frames)
        data = ScanDataset(np.stack([f for f, _ in frames]), np.stack([p for _, p in frames]),
                           self.object_shape)
        if self.probe_est is None:
            self.probe_est, self.probe_norm_target = init_probe_guess(data.intensities, cfg.seed)
        self._ensure_acc(self.probe_est.shape)
        solver = SolverConfig(iterations=cfg.bootstrap_iters, beta=1.0,
                              probe_mode=cfg.probe_mode, clip=cfg.clip, seed=cfg.seed,
                              probe_passes=cfg.probe_passes)
        run = iterate_classic(data, solver, "DM", self.probe_est,
                              norm_target=self.probe_norm_target)
        for key, value in run.counter.items():
            self.counter["bootstrap_" + key] += value
        self.probe_est = run.probe
        keep = min(cfg.buffer_size, n_frames)
        for k in range(n_frames - keep):
            accumulate_frozen(self.acc, self.probe_est, run.object, run.waves.waves[k],
                              run.waves.positions[k], self._frozen_clip())
        self._set_fluid(run.waves.waves[n_frames - keep:], run.waves.positions[n_frames - keep:],
                        data.amplitudes[n_frames - keep:], range(n_frames - keep, n_frames))
        self.loaded = n_frames
        self.bootstrapped = True
        self._refresh_object(full=True)
        self.phase = "streaming"

    # -- main cycle ------------------------------------------------------

    def _refresh_object(self, full: bool = False, box=None) -> None:
        h, w = self.probe_est.shape
        fluid = self.fluid if self.fluid is not None else ExitWaveSet(
            np.zeros((0, h, w)), np.zeros((0, 2)))
        if full or box is None:
            origin, shape = (0, 0), self.object_shape
        else:
            origin, shape = box
        local = partial_object_local(fluid, self.acc, self.probe_est, self.config.clip, origin, shape)
        y0, x0 = origin
        self.object_est[y0:y0 + shape[0], x0:x0 + shape[1]] = local

    def _fill(self) -> None:
        cfg = self.config
        B = cfg.buffer_size
        if self.fluid_size() >= B:
            return
        first_buffer = self.loaded == 0
        if first_buffer and self.phase == "streaming" and self.pending_count < B:
            return  # the first buffer is loaded atomically
        frames = self._take(B - self.fluid_size())
        if not frames:
            return
        if self.probe_est is None:
            self.probe_est, self.probe_norm_target = init_probe_guess(
                [f for f, _ in frames], cfg.seed)
        self._ensure_acc(self.probe_est.shape)
        for intensity, pos in frames:
            amps = np.sqrt(intensity)
            index = self.loaded
            naive = cfg.init_mode == "naive" or (not self.bootstrapped and index < B)
            if naive:
                wave = naive_init(amps)
            else:
                wave = informed_phase_init(amps, self.object_est, self.probe_est, pos)
            self._append_fluid(wave, pos, amps, index)
            self.loaded += 1

    def advance(self):
        """Run one buffer cycle. Returns a :class:`FreezeEvent` or :class:`NotReady`."""
        with self._state_lock:
            return self._advance()

    def _advance(self):
        cfg = self.config
        if self.phase == "done":
            raise StateError("engine is done")
        if self.phase == "bootstrapping":
            if self.pending_count < cfg.bootstrap_frames:
                return NotReady("waiting for bootstrap frames")
            self._bootstrap(cfg.bootstrap_frames)
        self._fill()
        if self.fluid_size() == 0:
            return NotReady("buffer empty")
        if self.phase == "streaming" and self.fluid_size() < cfg.buffer_size:
            return NotReady("buffer not full")
        before = self.counter["amplitude"] + self.counter["consistency"]
        self._run_schedule()
        event_index = self._freeze_oldest()
        spent = self.counter["amplitude"] + self.counter["consistency"] - before
        return FreezeEvent(event_index, self.frontier, spent)

    def _run_schedule(self) -> None:
        cfg = self.config
        refine = None
        if self._retrieve():
            refine = ProbeRefinement(self.probe_est, self.probe_norm_target, cfg.probe_passes)
        for j, alg in enumerate(cfg.schedule.expand()):
            probe = self.probe_est if refine is None else refine
            if alg == "LDM":
                self.fluid = ldm_step(self.fluid, self.fluid_amps, self.acc, probe,
                                      cfg.beta, cfg.clip, counter=self.counter)
            else:
                self.fluid = ler_step(self.fluid, self.fluid_amps, self.acc, probe,
                                      cfg.clip, counter=self.counter)
            if refine is not None:
                self.probe_est = refine.probe
            if self.on_iteration is not None:
                self.on_iteration(j, self.fluid, self.probe_est)

    def _freeze_oldest(self) -> int:
        cfg = self.config
        h, w = self.probe_est.shape
        box = window_box(self.fluid.positions, h, w)
        local = partial_object_local(self.fluid, self.acc, self.probe_est, cfg.clip, *box)
        accumulate_frozen(self.acc, self.probe_est, local, self.fluid.waves[0],
                          self.fluid.positions[0], self._frozen_clip(), origin=box[0])
        index = self.fluid_index[0]
        self._set_fluid(self.fluid.waves[1:], self.fluid.positions[1:], self.fluid_amps[1:],
                        self.fluid_index[1:])
        self._refresh_object(box=box)
        return index

    def finalize(self, on_event: Callable[[FreezeEvent], None] | None = None) -> None:
        """Stop accepting frames and drain the buffer with a shrinking window."""
        with self._pending_cv:
            self._closed = True
            self._pending_cv.notify_all()
        with self._state_lock:
            if self.phase == "done":
                return
            if self.phase == "bootstrapping":
                self._bootstrap(min(self.pending_count, self.config.bootstrap_frames))
            self.phase = "draining"
            while self.fluid_size() or self.pending_count:
                event = self._advance()
                if on_event is not None and isinstance(event, FreezeEvent):
                    on_event(event)
            self.phase = "done"

    def snapshot(self) -> Snapshot:
        """Consistent copy of the current object, probe and frontier."""
        with self._state_lock:
            probe = None if self.probe_est is None else self.probe_est.copy()
            return Snapshot(self.object_est.copy(), probe, self.frontier)


def run_live(dataset: ScanDataset, config: EngineConfig, probe: np.ndarray | None = None,
             on_event: Callable[[FreezeEvent, LiveEngine], None] | None = None,
             on_iteration=None) -> LiveEngine:
    """Feed a whole dataset through a :class:`LiveEngine` frame by frame and drain it."""
    engine = LiveEngine(config, dataset.object_shape, probe, on_iteration=on_iteration)

    def handle(event):
        if on_event is not None and isinstance(event, FreezeEvent):
            on_event(event, engine)

    for intensity, pos in zip(dataset.intensities, dataset.positions):
        engine.push_frame(intensity, pos)
        handle(engine.advance())
    engine.finalize(on_event=lambda ev: handle(ev))
    return engine
