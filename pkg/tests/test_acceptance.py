"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line at its pinned tolerance.

Verdict lines are also repeated in the pytest terminal summary.
"""

import math
import time

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import oracles
from acceptance_log import record
from dan import afn, fcn
from dan import functional as F
from dan.accounting import count_params_flops
from dan.checkpoint import Checkpoint
from dan.config import RunConfig
from dan.fcn import BackbonePlan
from dan.gradcheck import run_all
from dan.model import ModelConfig
from dan.tensor import Tensor
from dan.train import ablate_heads, evaluate, load_data, train

PROPERTY_CASES = 1000
ORACLE_INSTANCES = 100


def _verdict(criterion, ok, detail):
    assert record(criterion, ok, detail), detail


# 1 ------------------------------------------------------------------ gradients


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    results = run_all(seed=0, tolerance=1e-4)
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.error)
    failed = [r.name for r in results if not r.ok]
    ok = not failed and elapsed < 60.0
    _verdict(
        "1",
        ok,
        f"{len(results) - len(failed)}/{len(results)} finite-difference checks < 1e-4 "
        f"(worst {worst.name} {worst.error:.2e}), {elapsed:.1f} s < 60 s"
        + (f"; failed {failed[:5]}" if failed else ""),
    )


# 2 -------------------------------------------------------------------- oracles


def _oracle_errors(seed):
    r = np.random.default_rng(seed)
    B, K, L, n = (int(v) for v in r.integers(1, 6, size=4))
    n += 1
    x = r.normal(0, r.uniform(0.1, 10), size=(B, L))
    c = r.normal(size=(L, n))
    y = r.integers(0, n, size=B)
    a = r.normal(0, 5, size=(B, K + 1, L))
    z = r.normal(0, 5, size=(B, n))
    v = afn.scale_features(Tensor(a))
    return {
        "affinity_loss": abs(fcn.affinity_loss(Tensor(x), y, Tensor(c)).item() - oracles.affinity(x, y, c)),
        "scale_features": float(np.abs(v.data - oracles.log_softmax_heads(a)).max()),
        "partition_loss": abs(afn.partition_loss(v).item() - oracles.partition(v.data)),
        "cross_entropy": abs(F.cross_entropy(Tensor(z), y).item() - oracles.cross_entropy(z, y)),
    }


def test_criterion_2_loss_oracles():
    worst = {}
    for seed in range(ORACLE_INSTANCES):
        for name, err in _oracle_errors(seed).items():
            worst[name] = max(worst.get(name, 0.0), err)
    anchors = {
        "L_af=2.0": fcn.affinity_loss(Tensor(np.array([[1.0], [1.0]])), [0, 1], Tensor(np.array([[0.0, 2.0]]))).item() - 2.0,
        "L_pt=ln3": afn.partition_loss(Tensor(np.array([0.0, 2.0]).reshape(1, 2, 1))).item() - math.log(3),
        "v=-ln2": float(np.abs(afn.scale_features(Tensor(np.zeros((1, 2, 3)))).data + math.log(2)).max()),
    }
    ok = all(e < 1e-10 for e in worst.values()) and all(abs(e) < 1e-10 for e in anchors.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    detail += "; anchors " + ", ".join(f"{k} err {abs(v):.1e}" for k, v in anchors.items())
    _verdict("2", ok, f"max |impl - oracle| over {ORACLE_INSTANCES} instances < 1e-10: {detail}")


# 3 ----------------------------------------------------------------- properties

_prop = settings(max_examples=PROPERTY_CASES, deadline=None, suppress_health_check=list(HealthCheck))
seeds = st.integers(0, 2**63 - 1)


def _heads(r):
    shape = (int(r.integers(1, 4)), int(r.integers(2, 9)), int(r.integers(1, 6)))
    return r.normal(0, r.uniform(0.01, 30), size=shape)


def test_criterion_3_properties():
    stats = {"normalization": [0, 0.0], "scale": [0, 0.0], "shift": [0, 0.0], "monotone": [0, 0]}

    @_prop
    @given(seeds)
    def normalization(seed):
        v = afn.scale_features(Tensor(_heads(np.random.default_rng(seed))))
        err = afn.head_normalization_error(v)
        stats["normalization"][0] += 1
        stats["normalization"][1] = max(stats["normalization"][1], err)
        assert err < 1e-6

    @_prop
    @given(seeds, st.sampled_from([0.5, 10.0, 1000.0]))
    def scale(seed, t):
        r = np.random.default_rng(seed)
        D, n, N = int(r.integers(1, 9)), int(r.integers(2, 8)), int(r.integers(1, 17))
        x, c, y = r.normal(size=(N, D)), r.normal(size=(D, n)), r.integers(0, n, size=N)
        base = fcn.affinity_loss(Tensor(x), y, Tensor(c)).item()
        scaled = fcn.affinity_loss(Tensor(t * x), y, Tensor(t * c)).item()
        drift = abs(scaled - base) / base
        stats["scale"][0] += 1
        stats["scale"][1] = max(stats["scale"][1], drift)
        assert drift < 1e-8

    @_prop
    @given(seeds)
    def shift(seed):
        r = np.random.default_rng(seed)
        a = _heads(r)
        s = r.normal(0, 20, size=(a.shape[0], 1, a.shape[2]))  # constant across heads
        d = float(np.abs(afn.scale_features(Tensor(a + s)).data - afn.scale_features(Tensor(a)).data).max())
        stats["shift"][0] += 1
        stats["shift"][1] = max(stats["shift"][1], d)
        assert d < 1e-10

    @_prop
    @given(seeds, st.floats(1.001, 100.0))
    def monotone(seed, stretch):
        # stretching deviations from the head mean multiplies every sigma^2 by stretch^2
        r = np.random.default_rng(seed)
        v = _heads(r)
        mean = v.mean(axis=1, keepdims=True)
        wider = mean + stretch * (v - mean)
        lo, hi = afn.partition_loss(Tensor(wider)).item(), afn.partition_loss(Tensor(v)).item()
        stats["monotone"][0] += 1
        stats["monotone"][1] += int(lo < hi)
        assert lo < hi

    errors = []
    for prop in (normalization, scale, shift, monotone):
        try:
            prop()
        except AssertionError as exc:
            errors.append(f"{prop.__name__}: {exc}")
    counts = {k: v[0] for k, v in stats.items()}
    ok = not errors and all(c >= PROPERTY_CASES for c in counts.values())
    _verdict(
        "3",
        ok,
        f"cases {counts}; max normalization error {stats['normalization'][1]:.1e} (< 1e-6), "
        f"max relative scale drift {stats['scale'][1]:.1e} (< 1e-8), "
        f"max shift change {stats['shift'][1]:.1e}, partition strictly falls in {stats['monotone'][1]} stretches"
        + (f"; errors {errors}" if errors else ""),
    )


# 4 --------------------------------------------------------------- accounting


def test_criterion_4_parameter_accounting():
    t0 = time.perf_counter()
    acc = count_params_flops(ModelConfig(plan=BackbonePlan.resnet18(), num_heads=4, num_classes=7), 224)
    elapsed = time.perf_counter() - t0
    rel_total = (acc.total_params - 19.72e6) / 19.72e6
    rel_backbone = (acc.backbone_params - 11.69e6) / 11.69e6
    rel_flops = (acc.total_macs - 2.23e9) / 2.23e9
    ok = abs(rel_total) <= 0.10 and abs(rel_backbone) <= 0.10 and abs(rel_flops) <= 0.15 and elapsed < 1.0
    _verdict(
        "4",
        ok,
        f"total {acc.total_params:,} ({rel_total:+.1%}, tol 10%), backbone {acc.backbone_params:,} "
        f"({rel_backbone:+.1%}, tol 10%), FLOPs {acc.total_macs / 1e9:.3f} G ({rel_flops:+.1%}, tol 15%), "
        f"{elapsed * 1e3:.1f} ms",
    )


# 5 -------------------------------------------------------------------- toy run


def test_criterion_5_toy_end_to_end(tmp_path):
    cfg = RunConfig.toy()
    assert (cfg.data.classes, cfg.data.per_class, cfg.data.image_size) == (4, 200, 32)
    assert cfg.model.num_heads == 4 and (cfg.weights.affinity, cfg.weights.partition) == (1.0, 1.0)
    assert cfg.epochs <= 15 and cfg.deterministic  # deterministic runs pin BLAS to one thread
    t0 = time.perf_counter()
    res = train(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    tr, ev = res.train_report.accuracy, res.eval_report.accuracy
    ok = tr >= 0.95 and ev >= 0.90 and elapsed < 600
    _verdict(
        "5",
        ok,
        f"train accuracy {tr:.4f} (>= 0.95), held-out {ev:.4f} (>= 0.90) after {cfg.epochs} epochs, "
        f"{elapsed:.0f} s (< 600 s)",
    )


# 6 ----------------------------------------------------------------- ablations

ABLATION = ["data.per_class=100", "train.epochs=6"]


def test_criterion_6ab_loss_ablations():
    cfg = RunConfig.toy().override(ABLATION)
    full = train(cfg).eval_report
    no_partition = train(cfg.with_weights(partition=0.0)).eval_report
    no_affinity = train(cfg.with_weights(affinity=0.0)).eval_report
    a = full.mean_head_overlap < no_partition.mean_head_overlap
    b = full.center_distance < no_affinity.center_distance
    record(
        "6a",
        a,
        f"mean pairwise head overlap {full.mean_head_overlap:.4f} with partition loss "
        f"< {no_partition.mean_head_overlap:.4f} without",
    )
    record(
        "6b",
        b,
        f"normalized feature-to-center distance {full.center_distance:.4f} with affinity loss "
        f"< {no_affinity.center_distance:.4f} without",
    )
    assert a and b


def test_criterion_6c_head_sweep(tmp_path):
    cfg = RunConfig.toy().override(["data.per_class=50", "train.epochs=2"])
    rows = ablate_heads(cfg, [1, 2, 4, 8], tmp_path)
    table = (tmp_path / "ablation_heads.csv").read_text().splitlines()
    ok = [r["num_heads"] for r in rows] == [1, 2, 4, 8] and len(table) == 5
    summary = "; ".join(
        f"K={r['num_heads']} acc {r['eval_accuracy']:.3f}" for r in rows
    )
    _verdict("6c", ok, f"K sweep wrote {len(table) - 1} table rows ({summary})")


# 7 ----------------------------------------------------------- determinism


def test_criterion_7_determinism_and_round_trip(tmp_path):
    from conftest import TINY_OVERRIDES

    cfg = RunConfig.toy().override(TINY_OVERRIDES + ["augment.rotate_p=0.5", "train.epochs=3"])
    first = train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    csv_a = (tmp_path / "a" / "metrics.csv").read_bytes()
    csv_b = (tmp_path / "b" / "metrics.csv").read_bytes()
    same_csv = csv_a == csv_b

    ckpt_path = tmp_path / "a" / "checkpoint.bin"
    _, held_out = load_data(cfg)
    restored = evaluate(ckpt_path, held_out)
    same_eval = restored.to_json() == first.eval_report.to_json()
    same_bytes = Checkpoint.load(ckpt_path).to_bytes() == ckpt_path.read_bytes()
    _verdict(
        "7",
        same_csv and same_eval and same_bytes,
        f"metric CSVs bit-identical: {same_csv}; evaluation after save/load identical: {same_eval}; "
        f"checkpoint re-serializes byte-identically: {same_bytes}",
    )
