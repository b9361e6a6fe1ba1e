"""Parameter and FLOP table for the full 18-layer configuration at 224 px."""

from dan.accounting import count_params_flops
from dan.fcn import BackbonePlan
from dan.model import ModelConfig

REFERENCE = {"total_params": 19.72e6, "backbone_params": 11.69e6, "total_macs": 2.23e9}
TOLERANCE = {"total_params": 0.10, "backbone_params": 0.10, "total_macs": 0.15}


def main():
    acc = count_params_flops(ModelConfig(plan=BackbonePlan.resnet18(), num_heads=4, num_classes=7), 224)
    d = acc.as_dict()
    for key, ref in REFERENCE.items():
        rel = (d[key] - ref) / ref
        mark = "ok" if abs(rel) <= TOLERANCE[key] else "OUT"
        print(f"{key:<16} {d[key]:>14,}  reference {ref:>14,.0f}  {rel:+.2%}  {mark}")
    print(f"{'per head':<16} {acc.head_params:>14,} params  {acc.head_macs:>14,} MACs")
    for k in (1, 2, 4, 8):
        a = count_params_flops(ModelConfig(plan=BackbonePlan.resnet18(), num_heads=k, num_classes=7), 224)
        print(f"K={k:<14} {a.total_params:>14,} params  {a.total_macs / 1e9:.3f} G MACs")


if __name__ == "__main__":
    main()
