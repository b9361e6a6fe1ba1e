"""Toggle each auxiliary loss on the toy task and compare head overlap / center distance.

    python scripts/ablate_losses.py --per-class 50 --epochs 4
"""

import argparse
import json
import time

from dan.config import RunConfig
from dan.train import train


def run(cfg: RunConfig, affinity: float, partition: float) -> dict:
    t0 = time.time()
    res = train(cfg.with_weights(affinity=affinity, partition=partition))
    ev = res.eval_report
    return {
        "affinity_weight": affinity,
        "partition_weight": partition,
        "eval_accuracy": ev.accuracy,
        "mean_head_overlap": ev.mean_head_overlap,
        "center_distance": ev.center_distance,
        "seconds": round(time.time() - t0, 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-class", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write the rows as JSON")
    args = ap.parse_args()

    cfg = RunConfig.toy().override(
        [f"data.per_class={args.per_class}", f"train.epochs={args.epochs}", f"train.seed={args.seed}"]
    )
    rows = [run(cfg, 1.0, 1.0), run(cfg, 1.0, 0.0), run(cfg, 0.0, 1.0)]
    for r in rows:
        print(
            f"affinity={r['affinity_weight']:g} partition={r['partition_weight']:g}  "
            f"acc {r['eval_accuracy']:.3f}  overlap {r['mean_head_overlap']:.4f}  "
            f"center dist {r['center_distance']:.4f}  ({r['seconds']} s)"
        )
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
