"""Final accuracy with reputation gating on vs off under label-flip poisoning.

Also runs an undefended variant (consensus tolerance 1.0, so every claim is
accepted). It shows how much damage the poisoners do once their updates get
through; since nothing is rejected there is no negative evidence either, so
gating cannot act in that variant.

    python scripts/poisoning_gating.py --seeds 0 1 2 3 4
"""

import argparse

import numpy as np

from srbfl.config import AdversaryMix, SimConfig
from srbfl.sim import run_simulation


def scenario(seed, gating, tolerance=0.05, flip=0.25):
    return SimConfig(
        seed=seed,
        device_count=20,
        shard_count=4,
        rounds=20,
        tolerance=tolerance,
        adversaries=AdversaryMix(label_flip=flip, flip_fraction=1.0),
        gating=gating,
    )


def final_accuracy(cfg):
    return run_simulation(cfg).metrics[-1].mean_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--flip", type=float, default=0.25, help="label-flip device fraction")
    args = ap.parse_args()

    print("variant,seed,gating_on,gating_off")
    rows = {}
    for name, tol in (("validated", 0.05), ("undefended", 1.0)):
        on, off = [], []
        for seed in args.seeds:
            a = final_accuracy(scenario(seed, True, tol, args.flip))
            b = final_accuracy(scenario(seed, False, tol, args.flip))
            on.append(a)
            off.append(b)
            print(f"{name},{seed},{a:.4f},{b:.4f}")
        rows[name] = (np.mean(on), np.mean(off))
    for name, (a, b) in rows.items():
        print(f"# {name}: mean on {a:.4f} off {b:.4f} gain {100 * (a - b):+.2f} pp")


if __name__ == "__main__":
    main()
