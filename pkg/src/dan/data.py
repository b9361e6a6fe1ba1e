"""Datasets: CSV-manifest image folders, a synthetic expression generator,
augmentation and class-balanced epoch sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm"}


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    label: int
    id: str


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W)
    labels: np.ndarray  # (N,)
    ids: list[str]
    class_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DatasetError(f"images must be (N, 3, H, W), got {self.images.shape}")
        if len(self.labels) != len(self.images) or len(self.ids) != len(self.images):
            raise DatasetError("images, labels and ids must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("label outside the class list")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.images[i], int(self.labels[i]), self.ids[i])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_size(self) -> int:
        return self.images.shape[2]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def channel_mean(self) -> np.ndarray:
        return self.images.mean(axis=(0, 2, 3))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], [self.ids[i] for i in idx], list(self.class_names))


# --------------------------------------------------------------------- folders


def _read_image(path: Path, size: int) -> np.ndarray:
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise DatasetError(f"unsupported image format {path.suffix!r}: {path}")
    if not path.is_file():
        raise DatasetError(f"image file not found: {path}")
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float64)
    return arr.transpose(2, 0, 1) / 255.0


def read_manifest(manifest: Path) -> list[tuple[str, int]]:
    """Parse a ``path,label`` CSV with header; returns rows in file order."""
    manifest = Path(manifest)
    if not manifest.is_file():
        raise DatasetError(f"manifest not found: {manifest}")
    rows = []
    seen = set()
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
            raise DatasetError(f"{manifest}: header must contain 'path,label'")
        for lineno, row in enumerate(reader, start=2):
            path = row["path"]
            try:
                label = int(row["label"])
            except (TypeError, ValueError):
                raise DatasetError(f"{manifest}:{lineno}: bad label {row['label']!r}") from None
            if path in seen:
                raise DatasetError(f"{manifest}:{lineno}: duplicate path {path}")
            seen.add(path)
            rows.append((path, label))
    return rows


def load_dataset(
    root,
    manifest=None,
    size: int = 32,
    num_classes: Optional[int] = None,
    class_names: Optional[Sequence[str]] = None,
) -> Dataset:
    """Load every manifest row (in order), resizing images to ``size`` x ``size``."""
    root = Path(root)
    manifest = root / "manifest.csv" if manifest is None else Path(manifest)
    rows = read_manifest(manifest)
    if class_names is None:
        names_file = manifest.parent / "classes.txt"
        if names_file.is_file():
            class_names = names_file.read_text().split()
    if num_classes is None:
        num_classes = len(class_names) if class_names else (max((r[1] for r in rows), default=-1) + 1)
    if class_names is None:
        class_names = [str(i) for i in range(num_classes)]
    if len(class_names) != num_classes:
        raise DatasetError(f"{len(class_names)} class names for {num_classes} classes")
    for lineno, (path, label) in enumerate(rows, start=2):
        if not 0 <= label < num_classes:
            raise DatasetError(f"{manifest}:{lineno}: label {label} outside [0, {num_classes}) for {path}")
    images = np.empty((len(rows), 3, size, size))
    for i, (path, _) in enumerate(rows):
        images[i] = _read_image(root / path, size)
    return Dataset(images, np.array([r[1] for r in rows], dtype=np.int64), [r[0] for r in rows], list(class_names))


def save_dataset(dataset: Dataset, root) -> Path:
    """Write 8-bit PNGs plus ``manifest.csv`` and ``classes.txt`` under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for sample in dataset:
            rel = f"{dataset.class_names[sample.label]}/{sample.id}.png"
            (root / rel).parent.mkdir(parents=True, exist_ok=True)
            pixels = np.round(np.clip(sample.image, 0.0, 1.0) * 255.0).astype(np.uint8)
            Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB").save(root / rel)
            writer.writerow([rel, sample.label])
    (root / "classes.txt").write_text("\n".join(dataset.class_names) + "\n")
    return manifest


# ------------------------------------------------------------------ synthetic

EXPRESSIONS = ["happy", "sad", "surprise", "angry", "neutral", "fear", "disgust", "squint"]


@dataclass(frozen=True)
class _Face:
    mouth_curve: float = 0.0  # > 0 bends the mouth centre downwards (smile)
    mouth_open: float = 0.0  # ring radius; 0 draws a stroke
    mouth_width: float = 0.4
    brow_height: float = 0.0  # raises both brows
    brow_tilt: float = 0.0  # > 0 lowers the inner ends
    eye_shape: str = "dot"  # or "line"
    extras: tuple = ()


_TEMPLATES = {
    "happy": _Face(mouth_curve=0.22),
    "sad": _Face(mouth_curve=-0.22, brow_tilt=-0.12),
    "surprise": _Face(mouth_open=0.16, brow_height=0.15),
    "angry": _Face(brow_tilt=0.18, mouth_width=0.3),
    "neutral": _Face(),
    "fear": _Face(mouth_open=0.09, brow_height=0.1, brow_tilt=-0.15),
    "disgust": _Face(mouth_curve=-0.1, mouth_width=0.25, extras=((-0.12, 0.1), (0.12, 0.1))),
    "squint": _Face(mouth_curve=0.12, eye_shape="line"),
}


def _procedural_face(k: int) -> _Face:
    r = np.random.default_rng(1000 + k)
    return _Face(
        mouth_curve=float(r.uniform(-0.25, 0.25)),
        mouth_open=float(r.choice([0.0, 0.1, 0.15])),
        mouth_width=float(r.uniform(0.2, 0.45)),
        brow_height=float(r.uniform(-0.05, 0.15)),
        brow_tilt=float(r.uniform(-0.2, 0.2)),
        eye_shape=str(r.choice(["dot", "line"])),
        extras=tuple((float(x), float(y)) for x, y in r.uniform(-0.2, 0.3, size=(int(r.integers(0, 3)), 2))),
    )


def _strokes(xx, yy, pts: np.ndarray, width: float) -> np.ndarray:
    d2 = (xx[..., None] - pts[:, 0]) ** 2 + (yy[..., None] - pts[:, 1]) ** 2
    return np.exp(-d2.min(axis=-1) / (width * width))


def _render(face: _Face, size: int, rng: np.random.Generator) -> np.ndarray:
    lin = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(lin, lin, indexing="ij")
    scale = rng.uniform(0.95, 1.05)
    cx, cy = rng.uniform(-0.05, 0.05, size=2)
    xx = (xx - cx) / scale
    yy = (yy - cy) / scale
    width = rng.uniform(0.07, 0.09)
    t = np.linspace(-1.0, 1.0, 41)
    parts = []
    # eyes
    for sx in (-1, 1):
        if face.eye_shape == "dot":
            parts.append(np.exp(-((xx - sx * 0.35) ** 2 + (yy + 0.2) ** 2) / 0.012))
        else:
            pts = np.stack([sx * 0.35 + 0.12 * t, np.full_like(t, -0.2)], axis=1)
            parts.append(_strokes(xx, yy, pts, width))
    # brows
    for sx in (-1, 1):
        bx = sx * 0.35 + 0.15 * t
        inner = 1.0 - np.abs(bx) / 0.5  # 1 at the face centre side
        by = -0.48 - face.brow_height + face.brow_tilt * (inner - 0.3)
        parts.append(_strokes(xx, yy, np.stack([bx, by], axis=1), width))
    # mouth
    if face.mouth_open > 0:
        ang = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        pts = np.stack([face.mouth_open * np.cos(ang), 0.45 + face.mouth_open * np.sin(ang)], axis=1)
    else:
        mx = face.mouth_width * t
        pts = np.stack([mx, 0.45 + face.mouth_curve * (1.0 - t * t) - 0.5 * face.mouth_curve], axis=1)
    parts.append(_strokes(xx, yy, pts, width))
    for ex, ey in face.extras:
        parts.append(np.exp(-((xx - ex) ** 2 + (yy - ey) ** 2) / 0.004))
    return np.clip(np.sum(parts, axis=0), 0.0, 1.0)


def synth_dataset(
    classes: int,
    per_class: int,
    size: int = 32,
    seed: int = 0,
    noise: float = 0.05,
) -> Dataset:
    """Deterministic synthetic "expression" faces, one parametric template per class.

    Classes beyond the eight named templates get a procedurally generated
    template. Pixels are quantized to 8 bits so on-disk round trips are exact.
    """
    if classes < 2:
        raise DatasetError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    names = [EXPRESSIONS[k] if k < len(EXPRESSIONS) else f"class{k}" for k in range(classes)]
    faces = [_TEMPLATES[n] if n in _TEMPLATES else _procedural_face(k) for k, n in enumerate(names)]
    n = classes * per_class
    images = np.empty((n, 3, size, size))
    labels = np.repeat(np.arange(classes), per_class)
    ids = []
    for i, k in enumerate(labels):
        stroke = _render(faces[k], size, rng)
        background = rng.uniform(0.0, 0.1)
        ink = rng.uniform(0.8, 1.0)
        tint = rng.uniform(0.85, 1.0, size=3)
        img = background + (ink - background) * stroke[None] * tint[:, None, None]
        if noise > 0:
            img = img + rng.normal(0.0, noise, size=img.shape)
        images[i] = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
        ids.append(f"s{seed}_{i:05d}")
    return Dataset(images, labels, ids, names)


# --------------------------------------------------------------- augmentation


@dataclass
class AugmentConfig:
    flip_p: float = 0.5
    rotate_p: float = 0.5
    rotate_degrees: float = 10.0
    erase_p: float = 0.25
    erase_area: tuple[float, float] = (0.02, 0.25)
    erase_aspect: tuple[float, float] = (0.3, 3.3)
    fill: Optional[tuple[float, ...]] = None  # per-channel erase value; dataset mean when set by the trainer

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(flip_p=0.0, rotate_p=0.0, erase_p=0.0)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1].copy()


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    out = ndimage.rotate(image, degrees, axes=(2, 1), reshape=False, order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def erase_box(shape: tuple, rng: np.random.Generator, area: tuple, aspect: tuple) -> tuple[int, int, int, int]:
    """Random (top, left, height, width) rectangle covering a fraction of the plane."""
    H, W = shape
    for _ in range(20):
        target = rng.uniform(*area) * H * W
        ratio = np.exp(rng.uniform(np.log(aspect[0]), np.log(aspect[1])))
        h = int(round(np.sqrt(target * ratio)))
        w = int(round(np.sqrt(target / ratio)))
        if 1 <= h <= H and 1 <= w <= W:
            break
    else:
        h = max(1, int(round(np.sqrt(area[0] * H * W))))
        w = h
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    return top, left, h, w


def augment(sample: Sample, rng: np.random.Generator, config: AugmentConfig) -> Sample:
    """Flip, rotate, then erase, each applied with its own probability."""
    img = sample.image
    if config.flip_p > 0 and rng.random() < config.flip_p:
        img = hflip(img)
    if config.rotate_p > 0 and rng.random() < config.rotate_p:
        img = rotate(img, rng.uniform(-config.rotate_degrees, config.rotate_degrees))
    if config.erase_p > 0 and rng.random() < config.erase_p:
        top, left, h, w = erase_box(img.shape[1:], rng, config.erase_area, config.erase_aspect)
        fill = np.full(img.shape[0], 0.5) if config.fill is None else np.asarray(config.fill, dtype=np.float64)
        img = img.copy()
        img[:, top : top + h, left : left + w] = fill[:, None, None]
    return Sample(img, sample.label, sample.id)


# ------------------------------------------------------------------- sampling


def class_quotas(num_classes: int, epoch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Per-class draw counts: floor(epoch_size / classes), remainder spread over random classes."""
    base, rem = divmod(epoch_size, num_classes)
    quotas = np.full(num_classes, base, dtype=np.int64)
    if rem:
        quotas[rng.permutation(num_classes)[:rem]] += 1
    return quotas


def balanced_sampler(labels, epoch_size: int, seed: int, num_classes: Optional[int] = None) -> np.ndarray:
    """Stratified epoch: every class drawn an equal number of times (up to one).

    Large classes are downsampled without replacement. Small classes are
    repeated in whole shuffled passes, then topped up without replacement.
    """
    if isinstance(labels, Dataset):
        num_classes = labels.num_classes if num_classes is None else num_classes
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    counts = np.bincount(labels, minlength=num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DatasetError(f"class {empty[0]} has no samples")
    rng = np.random.default_rng(seed)
    quotas = class_quotas(num_classes, epoch_size, rng)
    picks = []
    for k in range(num_classes):
        members = np.flatnonzero(labels == k)
        full, rest = divmod(int(quotas[k]), members.size)
        chunks = [rng.permutation(members) for _ in range(full)]
        chunks.append(rng.permutation(members)[:rest])
        picks.append(np.concatenate(chunks))
    order = np.concatenate(picks)
    return order[rng.permutation(order.size)]


def batches(indices: np.ndarray, batch_size: int, drop_last: bool = False) -> Iterator[np.ndarray]:
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        if drop_last and len(chunk) < batch_size:
            return
        yield chunk

