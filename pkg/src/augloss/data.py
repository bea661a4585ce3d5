"""Datasets: CIFAR-10 binary batches, a synthetic glyph dataset, splits and PPM output."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .noise import CIFAR10_CLASSES

RECORD = 1 + 3 * 32 * 32


class DataFormatError(ValueError):
    """A dataset file that does not match its binary layout."""


@dataclass
class LabeledImageDataset:
    images: np.ndarray          # (N, H, W, C) in [0, 1]
    labels: np.ndarray          # (N,) int64
    k: int
    class_names: tuple | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError("images must be an (N, H, W, C) array")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return LabeledImageDataset(self.images[idx], self.labels[idx], self.k, self.class_names)

    def with_labels(self, labels):
        return LabeledImageDataset(self.images, labels, self.k, self.class_names)


# -- CIFAR-10 binary --------------------------------------------------------

def parse_cifar10_bytes(raw, source="<bytes>"):
    raw = bytes(raw)
    if len(raw) % RECORD:
        offset = (len(raw) // RECORD) * RECORD
        raise DataFormatError(
            f"{source}: truncated record at byte offset {offset} "
            f"(size {len(raw)} is not a multiple of {RECORD})")
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD)
    bad = np.flatnonzero(buf[:, 0] > 9)
    if bad.size:
        raise DataFormatError(
            f"{source}: label byte {buf[bad[0], 0]} > 9 at byte offset {bad[0] * RECORD}")
    labels = buf[:, 0].astype(np.int64)
    planes = buf[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return planes.astype(np.float64) / 255.0, labels


def load_cifar10_binary(paths):
    """Concatenate CIFAR-10 binary batch files in the given order."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        x, y = parse_cifar10_bytes(Path(path).read_bytes(), source=str(path))
        images.append(x)
        labels.append(y)
    if not images:
        raise ValueError("no CIFAR-10 files given")
    return LabeledImageDataset(np.concatenate(images), np.concatenate(labels), 10, CIFAR10_CLASSES)


def cifar10_bytes(dataset):
    """Serialize a 32x32x3 dataset back to the CIFAR-10 binary layout."""
    imgs = np.asarray(dataset.images)
    if imgs.shape[1:] != (32, 32, 3):
        raise ValueError("CIFAR-10 records hold 32x32 RGB images")
    pix = np.clip(np.rint(imgs * 255.0), 0, 255).astype(np.uint8)
    planes = pix.transpose(0, 3, 1, 2).reshape(len(imgs), -1)
    out = np.concatenate([dataset.labels.astype(np.uint8)[:, None], planes], axis=1)
    return out.tobytes()


def write_cifar10_binary(path, dataset):
    Path(path).write_bytes(cifar10_bytes(dataset))


# -- synthetic glyphs -------------------------------------------------------

GLYPHS = (
    "hbar", "vbar", "plus", "xcross", "ring",
    "disc", "checker", "triangle", "frame", "dots",
)

FOREGROUND = np.array([0.95, 0.75, 0.30])
BACKGROUND = np.array([0.15, 0.25, 0.45])


def glyph_mask(name, side=16, margin=2):
    """A binary glyph drawn inside a ``side``-pixel square leaving ``margin`` pixels free."""
    inner = side - 2 * margin
    ys, xs = np.mgrid[0:inner, 0:inner] + 0.5
    u = xs / inner - 0.5
    v = ys / inner - 0.5
    t = 0.16
    if name == "hbar":
        m = np.abs(v) < t
    elif name == "vbar":
        m = np.abs(u) < t
    elif name == "plus":
        m = (np.abs(u) < t / 1.6) | (np.abs(v) < t / 1.6)
    elif name == "xcross":
        m = (np.abs(u - v) < t / 1.2) | (np.abs(u + v) < t / 1.2)
    elif name == "ring":
        r = np.hypot(u, v)
        m = (r > 0.28) & (r < 0.46)
    elif name == "disc":
        m = np.hypot(u, v) < 0.3
    elif name == "checker":
        m = ((np.floor((u + 0.5) * 4) + np.floor((v + 0.5) * 4)) % 2) == 0
    elif name == "triangle":
        m = (v > -0.45) & (v < 0.45) & (np.abs(u) < (v + 0.45) / 1.8)
    elif name == "frame":
        m = (np.maximum(np.abs(u), np.abs(v)) > 0.32) & (np.maximum(np.abs(u), np.abs(v)) < 0.5)
    elif name == "dots":
        m = (np.hypot(u + 0.25, v + 0.25) < 0.16) | (np.hypot(u - 0.25, v - 0.25) < 0.16)
    else:
        raise ValueError(f"unknown glyph {name!r}")
    out = np.zeros((side, side))
    out[margin:margin + inner, margin:margin + inner] = m
    return out


def render(mask):
    return BACKGROUND + mask[..., None] * (FOREGROUND - BACKGROUND)


def templates(k, side=16):
    if not 2 <= k <= len(GLYPHS):
        raise ValueError(f"synthetic dataset supports 2..{len(GLYPHS)} classes, got {k}")
    return np.stack([render(glyph_mask(g, side)) for g in GLYPHS[:k]])


def synth_shapes(k=10, n_per_class=100, side=16, noise_sd=0.1, seed=0, max_offset=2):
    """Balanced glyph dataset: class templates at random +-``max_offset`` px shifts plus pixel noise."""
    if side < 8:
        raise ValueError("side must be at least 8 pixels")
    temp = templates(k, side)
    masks = np.stack([glyph_mask(g, side) for g in GLYPHS[:k]])
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(k), n_per_class)
    rng.shuffle(labels)
    n = len(labels)
    offsets = rng.integers(-max_offset, max_offset + 1, size=(n, 2)) if max_offset else np.zeros((n, 2), int)
    images = np.empty((n, side, side, 3))
    for i, (lab, (dy, dx)) in enumerate(zip(labels, offsets)):
        if dy == 0 and dx == 0:
            images[i] = temp[lab]
        else:
            images[i] = render(np.roll(masks[lab], (dy, dx), axis=(0, 1)))
    if noise_sd > 0:
        images = np.clip(images + rng.normal(scale=noise_sd, size=images.shape), 0.0, 1.0)
    return LabeledImageDataset(images, labels, k, GLYPHS[:k])


def split(dataset, train_fraction, seed):
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(round(train_fraction * len(dataset)))
    return dataset.subset(perm[:cut]), dataset.subset(perm[cut:])


# -- image files ------------------------------------------------------------

def write_ppm(path, image):
    """Binary PPM (P6, 8-bit); single-channel images are replicated to RGB."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape[-1] == 1:
        img = np.repeat(img, 3, axis=-1)
    pix = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = pix.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def read_ppm(path):
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise DataFormatError(f"{path}: not a binary PPM")
    w, h, maxval = (int(f) for f in fields[1:])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h * 3], dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / maxval


def export_dataset(dataset, out_dir):
    """Write clean images as ``clean/0/{index}.ppm`` plus ``labels.csv``.

    Same ``{kind}/{severity}/{index}`` layout as the corrupted suite export,
    with kind ``clean`` and severity 0.
    """
    out_dir = Path(out_dir)
    d = out_dir / "clean" / "0"
    d.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(dataset.images):
        write_ppm(d / f"{i}.ppm", img)
    with open(out_dir / "labels.csv", "w", encoding="utf-8") as fh:
        fh.write("index,label\n")
        fh.writelines(f"{i},{int(lab)}\n" for i, lab in enumerate(dataset.labels))
