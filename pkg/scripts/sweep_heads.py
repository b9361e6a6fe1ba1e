"""Head-count sweep on the toy task; writes ablation_heads.csv into --out.

Accuracy ordering across K at this scale is noisy and is reported, not asserted.
"""

import argparse

from dan.config import RunConfig
from dan.train import ablate_heads


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--heads", default="1,2,4,8")
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--out", default="runs/heads")
    args = ap.parse_args()

    cfg = RunConfig.toy().override([f"data.per_class={args.per_class}", f"train.epochs={args.epochs}"])
    rows = ablate_heads(cfg, [int(k) for k in args.heads.split(",")], args.out)
    print(f"{'K':>3} {'params':>9} {'train':>7} {'held-out':>9} {'overlap':>8}")
    for r in rows:
        ov = "-" if r["mean_head_overlap"] is None else f"{r['mean_head_overlap']:.4f}"
        print(f"{r['num_heads']:>3} {r['params']:>9} {r['train_accuracy']:>7.4f} {r['eval_accuracy']:>9.4f} {ov:>8}")


if __name__ == "__main__":
    main()
