"""Desk-scale comparison of live and classic reconstructions over several seeds.

Known probe: classic DM1 (100 iterations) vs live LDM1 with B=5, J=20, informed
and naive initialisation. Retrieved probe: classic DM1 vs the bootstrapped
live pipeline (B=10, J=10, ldm:8,ler:2). Prints central-region E0 per seed.

    python3 scripts/headline.py --seeds 10 --out headline.json
"""
import argparse
import json
import time

import numpy as np

from liveptycho.analysis import e0_metric
from liveptycho.engine import EngineConfig, run_live
from liveptycho.solvers import Schedule, SolverConfig, run_classic
from liveptycho.synth import SimulationConfig, simulate

REGION = 150  # 300/512 of a 256 px object


def known_probe(sim):
    ds, probe = sim.dataset, sim.probe
    dm, _, _ = run_classic(ds, SolverConfig(iterations=100), "DM", probe)
    row = {"dm1": e0_metric(sim.object, dm, REGION)}
    for init in ("informed", "naive"):
        cfg = EngineConfig(buffer_size=5, iters_per_shift=20, bootstrap_frames=0, init_mode=init)
        row[f"ldm_{init}"] = e0_metric(sim.object, run_live(ds, cfg, probe).object_est, REGION)
    return row


def retrieve(sim):
    ds = sim.dataset
    dm, _, _ = run_classic(ds, SolverConfig(iterations=100, probe_mode="retrieve"), "DM")
    cfg = EngineConfig(buffer_size=10, iters_per_shift=10, schedule=Schedule.parse("ldm:8,ler:2"),
                       probe_mode="retrieve", bootstrap_frames=20, bootstrap_iters=200)
    live = run_live(ds, cfg)
    return {"dm1_retrieve": e0_metric(sim.object, dm, REGION),
            "live_retrieve": e0_metric(sim.object, live.object_est, REGION)}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--mode", choices=["known", "retrieve", "both"], default="both")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()
    rows = []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        sim = simulate(SimulationConfig(seed=seed))
        row = {"seed": seed}
        if args.mode in ("known", "both"):
            row.update(known_probe(sim))
        if args.mode in ("retrieve", "both"):
            row.update(retrieve(sim))
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
        print(" ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}"
                       for k, v in row.items()), flush=True)
    keys = [k for k in rows[0] if k not in ("seed", "seconds")]
    print("median " + " ".join(f"{k}={np.median([r[k] for r in rows]):.3g}" for k in keys))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
