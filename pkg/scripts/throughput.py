"""Committed update transactions per round as the shard count grows.

Honest devices only, a fixed number of devices per shard.

    python scripts/throughput.py --per-shard 4 --shards 1 2 4 8 16
"""

import argparse
import time

from srbfl.config import SimConfig
from srbfl.sim import run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-shard", type=int, default=4)
    ap.add_argument("--shards", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("shards,devices,mean_committed_per_round,min,max,seconds")
    for s in args.shards:
        cfg = SimConfig(seed=args.seed, device_count=args.per_shard * s, shard_count=s, rounds=args.rounds)
        t0 = time.perf_counter()
        result = run_simulation(cfg)
        dt = time.perf_counter() - t0
        counts = [m.total_committed for m in result.metrics]
        print(f"{s},{cfg.device_count},{sum(counts) / len(counts):g},{min(counts)},{max(counts)},{dt:.2f}")


if __name__ == "__main__":
    main()
