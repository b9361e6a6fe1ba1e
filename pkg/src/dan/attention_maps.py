"""Export per-head spatial gates as grayscale images."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint, CheckpointError
from .man import head_overlap
from .tensor import Tensor, no_grad


def gate_map(gate: np.ndarray) -> np.ndarray:
    """Channel-average a (D, h, w) gate and min-max scale it to uint8.

    A constant map has no range to stretch; it comes out uniform mid-gray (128).
    """
    m = np.asarray(gate, dtype=np.float64).mean(axis=0)
    lo, hi = m.min(), m.max()
    if hi - lo <= 1e-12:
        return np.full(m.shape, 128, dtype=np.uint8)
    return np.round(255.0 * (m - lo) / (hi - lo)).astype(np.uint8)


def export_attention_maps(checkpoint, images: np.ndarray, out_dir, upscale: int = 8) -> dict:
    """Write ``img{i}_head{k}.png`` for every image and head plus ``head_overlap.csv``.

    Returns the paths written and the overlap matrix of the batch.
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    if checkpoint.epoch < 1:
        raise CheckpointError("checkpoint has not been trained (epoch 0)")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError(f"expected a non-empty (N, C, H, W) image batch, got shape {images.shape}")

    model = checkpoint.build_model()
    model.eval()
    with no_grad():
        gates = model(Tensor(images)).man.spatial_gates.data
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, per_image in enumerate(gates):
        for k, gate in enumerate(per_image):
            img = Image.fromarray(gate_map(gate), mode="L")
            if upscale > 1:
                img = img.resize((img.width * upscale, img.height * upscale), Image.NEAREST)
            p = out / f"img{i}_head{k}.png"
            img.save(p)
            written.append(p)

    K = gates.shape[1]
    overlap = head_overlap(gates) if K > 1 else np.ones((1, 1))
    overlap_path = out / "head_overlap.csv"
    with open(overlap_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head"] + [f"head{k}" for k in range(K)])
        for k in range(K):
            writer.writerow([f"head{k}"] + [repr(float(v)) for v in overlap[k]])
    return {"maps": written, "overlap": overlap, "overlap_csv": overlap_path}
