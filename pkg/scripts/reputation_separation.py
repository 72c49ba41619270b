"""Expected-reputation trajectories per behaviour.

Prints, for every round, the mean and extreme expected reputation of each
behaviour class, averaged over seeds. Output is CSV for plotting.

    python scripts/reputation_separation.py --label-flip 0.25 --free-rider 0.1
"""

import argparse
from collections import defaultdict

import numpy as np

from srbfl.config import AdversaryMix, SimConfig
from srbfl.sim import run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--label-flip", type=float, default=0.25)
    ap.add_argument("--free-rider", type=float, default=0.0)
    ap.add_argument("--lazy", type=float, default=0.0)
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--no-gating", action="store_true")
    args = ap.parse_args()

    mix = AdversaryMix(label_flip=args.label_flip, free_rider=args.free_rider, lazy=args.lazy)
    series = defaultdict(list)  # (round, behaviour) -> [E, ...]
    for seed in args.seeds:
        cfg = SimConfig(seed=seed, rounds=args.rounds, adversaries=mix, gating=not args.no_gating)
        result = run_simulation(cfg)
        for m in result.metrics:
            for d, o in m.opinions.items():
                series[(m.round, result.behaviors[d].name)].append(o.expected)

    print("round,behavior,mean_expected,min_expected,max_expected")
    for (t, name), values in sorted(series.items()):
        v = np.asarray(values)
        print(f"{t},{name},{v.mean():.4f},{v.min():.4f},{v.max():.4f}")


if __name__ == "__main__":
    main()
