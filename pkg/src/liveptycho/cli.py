"""Command line interface: ``simulate``, ``reconstruct``, ``live``, ``eval`` and ``replay``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from pathlib import Path

import numpy as np

from . import __version__, container
from .analysis import ReconReport, evaluate, probe_diameter, overlap_ratio
from .engine import EngineConfig, FreezeEvent, LiveEngine
from .errors import BoundsError, ConfigError, DataError, InvalidInputError, StateError
from .projections import ClipConfig
from .snapshots import emit_snapshot
from .solvers import Schedule, SolverConfig, run_classic
from .synth import SimulationConfig, simulate

log = logging.getLogger("liveptycho")

EXIT_CONFIG = 2
EXIT_DATA = 3


def default_region(object_shape) -> int:
    """Central evaluation window scaled like 300 px on a 512 px object."""
    return max(1, round(min(object_shape) * 300 / 512))


def _load_probe(spec: str, probe_shape):
    if spec == "retrieve":
        return None
    probe = container.load_array(spec)
    if probe.shape != tuple(probe_shape):
        raise ConfigError(f"probe file shape {probe.shape} != frame shape {tuple(probe_shape)}")
    return probe.astype(np.complex128)


def _report(args, data_dir, obj, probe, counter_total, wall_time) -> ReconReport:
    report = ReconReport(projections_evaluated=int(counter_total))
    truth_obj, truth_probe = container.read_truth(data_dir)
    dataset_positions = container.read_dataset(data_dir).positions
    if truth_obj is not None and truth_obj.shape == obj.shape:
        region = args.region or default_region(obj.shape)
        evaluate(truth_obj, obj, central=region, report=report)
    ref_probe = truth_probe if truth_probe is not None else probe
    if len(dataset_positions) >= 2:
        report.overlap_ratio = overlap_ratio(dataset_positions, probe_diameter(ref_probe))
    return report


def _write_outputs(out: Path, command: str, args_dict: dict, obj, probe, report: ReconReport,
                   wall_time: float, snapshot_scale=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "object.npy", obj)
    np.save(out / "probe.npy", probe)
    emit_snapshot(obj, out / "object.png", snapshot_scale)
    container.write_json(out / "report.json", report.to_json_dict())
    container.write_json(out / "timing.json", {"wall_time": wall_time})
    container.write_manifest(out, command, args_dict)


def cmd_simulate(args) -> dict:
    mode = args.object_mode.replace("-", "_")
    config = SimulationConfig(
        object_size=args.object_size, probe_size=args.probe_size, positions=args.positions,
        pitch=args.pitch, object_mode=mode, images=tuple(args.image or ()),
        sampling=args.sampling.replace("-", "_"), seed=args.seed)
    sim = simulate(config)
    out = Path(args.out)
    container.write_dataset(out, sim.dataset, args.frame_dtype)
    np.save(out / "object.npy", sim.object)
    np.save(out / "probe.npy", sim.probe)
    container.write_manifest(out, "simulate", _manifest_args(args))
    log.info("wrote %d frames to %s", len(sim.dataset), out)
    return {"frames": len(sim.dataset), "out": str(out)}


def cmd_reconstruct(args) -> dict:
    data = container.read_dataset(args.data)
    probe = _load_probe(args.probe, data.probe_shape)
    mode = "retrieve" if probe is None else "known"
    config = SolverConfig(iterations=args.iters, beta=args.beta, probe_mode=mode, seed=args.seed)
    start = time.perf_counter()
    obj, probe_est, run_report = run_classic(data, config, args.alg.upper(), probe)
    wall = time.perf_counter() - start
    report = _report(args, args.data, obj, probe_est, run_report.projections_evaluated, wall)
    _write_outputs(Path(args.out), "reconstruct", _manifest_args(args), obj, probe_est, report, wall)
    return report.to_json_dict()


# (buffer, iters per shift, schedule) when not given on the command line
LIVE_DEFAULTS = {"known": (5, 20, None), "retrieve": (10, 10, "ldm:8,ler:2")}


def _resolve_live_defaults(args) -> None:
    buffer, iters, schedule = LIVE_DEFAULTS["retrieve" if args.probe == "retrieve" else "known"]
    if args.buffer is None:
        args.buffer = buffer
    if args.iters_per_shift is None:
        args.iters_per_shift = iters
        if args.schedule is None:
            args.schedule = schedule


def _engine_config(args) -> EngineConfig:
    _resolve_live_defaults(args)
    schedule = Schedule.parse(args.schedule) if args.schedule else None
    return EngineConfig(
        buffer_size=args.buffer, iters_per_shift=args.iters_per_shift, schedule=schedule,
        beta=args.beta, probe_mode="retrieve" if args.probe == "retrieve" else "known",
        bootstrap_frames=args.bootstrap_frames, bootstrap_iters=args.bootstrap_iters,
        clip=ClipConfig(), init_mode=args.init, seed=args.seed)


def cmd_live(args) -> dict:
    data = container.read_dataset(args.data)
    probe = _load_probe(args.probe, data.probe_shape)
    config = _engine_config(args)
    engine = LiveEngine(config, data.object_shape, probe)
    out = Path(args.out)
    snap_dir = out / "snapshots"
    scale = args.snapshot_scale

    def on_event(event):
        if args.snapshot_every and event.frontier % args.snapshot_every == 0:
            emit_snapshot(engine.object_est, snap_dir / f"snapshot_{event.frontier:06d}.png", scale)

    feeder_done = threading.Event()

    def feed():
        try:
            for intensity, pos in zip(data.intensities, data.positions):
                engine.push_frame(intensity, pos)
        finally:
            feeder_done.set()

    start = time.perf_counter()
    feeder = threading.Thread(target=feed, name="frame-feeder", daemon=True)
    feeder.start()
    while True:
        pending = engine.pending_count
        event = engine.advance()
        if isinstance(event, FreezeEvent):
            on_event(event)
            continue
        if feeder_done.is_set() and engine.pending_count == pending:
            break
        engine.wait_for_frames(pending + 1, timeout=0.05)
    feeder.join()
    engine.finalize(on_event=on_event)
    wall = time.perf_counter() - start
    snap = engine.snapshot()
    total = engine.counter["amplitude"] + engine.counter["consistency"]
    report = _report(args, args.data, snap.object, snap.probe, total, wall)
    _write_outputs(out, "live", _manifest_args(args), snap.object, snap.probe, report, wall, scale)
    return report.to_json_dict()


def cmd_eval(args) -> dict:
    truth_obj, truth_probe = container.read_truth(args.truth)
    if truth_obj is None:
        raise DataError(f"{args.truth} has no object.npy ground truth")
    recon_path = Path(args.recon)
    if recon_path.is_dir():
        recon_path = recon_path / "object.npy"
    est = container.load_array(recon_path)
    if est.shape != truth_obj.shape:
        raise DataError(f"shape mismatch: truth {truth_obj.shape}, recon {est.shape}")
    region = args.region or default_region(truth_obj.shape)
    report = evaluate(truth_obj, est, central=region)
    positions = container.read_dataset(args.truth).positions
    if truth_probe is not None and len(positions) >= 2:
        report.overlap_ratio = overlap_ratio(positions, probe_diameter(truth_probe))
    if args.out:
        container.write_json(Path(args.out), report.to_json_dict())
    return report.to_json_dict()


def cmd_replay(args) -> dict:
    try:
        data = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {args.manifest}: {exc}") from exc
    argv = [data["command"]]
    for key, value in data["args"].items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, list):
            for item in value:
                argv += [flag, str(item)]
        elif value is not None:
            argv += [flag, str(value)]
    argv += ["--out", args.out]
    return run(argv)


_NOT_IN_MANIFEST = {"out", "func", "command", "verbose"}


_PATH_ARGS = {"data", "truth", "recon"}


def _manifest_args(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in _NOT_IN_MANIFEST:
            continue
        if key in _PATH_ARGS and value is not None:
            value = str(Path(value).resolve())
        elif key == "image" and value:
            value = [str(Path(v).resolve()) for v in value]
        elif key == "probe" and value != "retrieve":
            value = str(Path(value).resolve())
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liveptycho", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scan")
    p.add_argument("--out", required=True)
    p.add_argument("--object-size", type=int, default=256)
    p.add_argument("--probe-size", type=int, default=32)
    p.add_argument("--positions", type=int, default=400)
    p.add_argument("--pitch", type=float, default=5.0)
    p.add_argument("--object-mode", choices=["hsv", "phase-only", "pair", "procedural"],
                   default="procedural")
    p.add_argument("--image", action="append", help="RGB image (repeat for pair mode)")
    p.add_argument("--sampling", choices=["arc-length", "uniform-theta"], default="arc-length")
    p.add_argument("--frame-dtype", choices=["f32", "f64"], default="f64")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    def common(p):
        p.add_argument("--data", required=True, help="dataset container directory")
        p.add_argument("--out", required=True)
        p.add_argument("--beta", type=float, default=1.0)
        p.add_argument("--probe", default="retrieve", help="'retrieve' or path to a .npy probe")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--region", type=int, default=None,
                       help="central evaluation window (default: 300/512 of the object)")

    p = sub.add_parser("reconstruct", help="classic ER/DM reconstruction")
    common(p)
    p.add_argument("--alg", choices=["er", "dm"], default="dm")
    p.add_argument("--iters", type=int, default=100)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("live", help="live reconstruction with a sliding buffer")
    common(p)
    p.add_argument("--buffer", type=int, default=None,
                   help="buffer size B (default: 5 with a known probe, 10 when retrieving)")
    p.add_argument("--iters-per-shift", type=int, default=None,
                   help="J (default: 20 with a known probe, 10 when retrieving)")
    p.add_argument("--schedule", default=None,
                   help="e.g. ldm:8,ler:2 (default: ldm:J, or ldm:8,ler:2 when retrieving with J=10)")
    p.add_argument("--bootstrap-frames", type=int, default=20)
    p.add_argument("--bootstrap-iters", type=int, default=200)
    p.add_argument("--init", choices=["informed", "naive"], default="informed")
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--snapshot-scale", type=float, default=None,
                   help="fixed amplitude for full brightness (default: per-snapshot maximum)")
    p.set_defaults(func=cmd_live)

    p = sub.add_parser("eval", help="score a reconstruction against ground truth")
    p.add_argument("--truth", required=True, help="simulated dataset directory")
    p.add_argument("--recon", required=True, help="object .npy or reconstruction directory")
    p.add_argument("--region", type=int, default=None)
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def run(argv) -> dict:
    args = build_parser().parse_args(argv)
    return args.func(args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (ConfigError, StateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidInputError, BoundsError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if result is not None:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
