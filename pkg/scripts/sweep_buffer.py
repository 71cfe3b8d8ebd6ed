"""Buffer size vs iterations per shift at a fixed per-wave budget J*B (known probe).

Each wave is iterated J times in each of the B cycles it spends in the buffer,
so J*B is the number of LDM1 iterations it receives. Prints median
central-region E0 per (B, J) over the seeds.

    python3 scripts/sweep_buffer.py --budget 100 --seeds 3
"""
import argparse
import json

import numpy as np

from liveptycho.analysis import e0_metric
from liveptycho.engine import EngineConfig, run_live
from liveptycho.solvers import SolverConfig, run_classic
from liveptycho.synth import SimulationConfig, simulate

REGION = 150  # 300/512 of a 256 px object


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--budget", type=int, default=100)
    parser.add_argument("--buffers", type=int, nargs="+", default=[1, 2, 5, 10, 20])
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    sims = [simulate(SimulationConfig(seed=s)) for s in range(args.seeds)]
    dm = [e0_metric(s.object, run_classic(s.dataset, SolverConfig(iterations=args.budget), "DM",
                                          s.probe)[0], REGION) for s in sims]
    print(f"DM1 x{args.budget}: median E0c {np.median(dm):.3g}", flush=True)
    rows = [{"buffer": None, "iters_per_shift": args.budget, "e0c": dm}]
    for b in args.buffers:
        if args.budget % b:
            continue
        j = args.budget // b
        cfg = EngineConfig(buffer_size=b, iters_per_shift=j, bootstrap_frames=0)
        e0 = [e0_metric(s.object, run_live(s.dataset, cfg, s.probe).object_est, REGION) for s in sims]
        rows.append({"buffer": b, "iters_per_shift": j, "e0c": e0})
        print(f"B={b:3d} J={j:3d}: median E0c {np.median(e0):.3g}", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
