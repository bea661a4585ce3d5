"""Test-time image corruptions with five severity levels.

A desk-scale stand-in for the CIFAR-C benchmark: ten kinds whose severity
parameters are this package's own constants (``SEVERITY_TABLE``), not the
published CIFAR-C values. Reports always carry the number of kinds used so
mCE values from different registries are never mixed up.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

# kind -> parameter for severities 1..5
SEVERITY_TABLE = {
    "gaussian_noise": (0.04, 0.06, 0.08, 0.10, 0.13),   # noise std
    "shot_noise": (120.0, 60.0, 30.0, 15.0, 8.0),       # photon count at value 1
    "impulse_noise": (0.02, 0.04, 0.07, 0.10, 0.15),    # salt-and-pepper fraction
    "gaussian_blur": (0.5, 0.7, 0.9, 1.1, 1.4),         # kernel sigma, pixels
    "box_blur": (2, 3, 4, 5, 6),                        # window side, pixels
    "pixelate": (2, 3, 4, 5, 6),                        # block side, pixels
    "contrast": (0.75, 0.6, 0.45, 0.3, 0.2),            # retained contrast
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),            # additive offset
    "saturate": (2.0, 3.0, 5.0, 8.0, 12.0),             # chroma gain
    "elastic_shift": (0.6, 1.0, 1.4, 1.8, 2.3),         # max displacement, pixels
}

KINDS = tuple(SEVERITY_TABLE)
STOCHASTIC = frozenset({"gaussian_noise", "shot_noise", "impulse_noise", "elastic_shift"})


def _gray(x):
    if x.shape[-1] == 1:
        return x
    return (x @ np.array([0.299, 0.587, 0.114]))[..., None]


def apply_corruption(x, kind, param, rng=None):
    """Corrupt an (H, W, C) image with an explicit severity parameter.

    ``rng`` is only consulted by the stochastic kinds. Identity parameters:
    noise level 0, blur/pixel size 1, contrast 1, brightness 0, saturation 1,
    displacement 0.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w, c = x.shape
    if kind == "gaussian_noise":
        out = x + rng.normal(size=x.shape) * param
    elif kind == "shot_noise":
        out = x if np.isinf(param) else rng.poisson(x * param) / param
    elif kind == "impulse_noise":
        u = rng.random(x.shape)
        out = np.where(u < param / 2, 0.0, np.where(u > 1 - param / 2, 1.0, x))
    elif kind == "gaussian_blur":
        out = x if param == 0 else ndimage.gaussian_filter(x, sigma=(param, param, 0), mode="reflect")
    elif kind == "box_blur":
        out = ndimage.uniform_filter(x, size=(int(param), int(param), 1), mode="reflect")
    elif kind == "pixelate":
        b = int(param)
        out = np.empty_like(x)
        for i in range(0, h, b):
            for j in range(0, w, b):
                block = x[i:i + b, j:j + b]
                out[i:i + b, j:j + b] = block.mean(axis=(0, 1))
    elif kind == "contrast":
        mean = x.mean(axis=(0, 1), keepdims=True)
        out = (x - mean) * param + mean
    elif kind == "brightness":
        out = x + param
    elif kind == "saturate":
        g = _gray(x)
        out = g + (x - g) * param
    elif kind == "elastic_shift":
        if param == 0:
            return x.copy()
        field = rng.normal(size=(2, h, w))
        field = np.stack([ndimage.gaussian_filter(f, sigma=max(h, w) / 6.0, mode="wrap") for f in field])
        field *= param / max(np.abs(field).max(), 1e-12)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        coords = [ys + field[0], xs + field[1]]
        out = np.stack([
            ndimage.map_coordinates(x[..., ch], coords, order=1, mode="reflect") for ch in range(c)
        ], axis=-1)
    else:
        raise ValueError(f"unknown corruption kind {kind!r}; registered: {KINDS}")
    return np.clip(out, 0.0, 1.0)


def corrupt(x, kind, severity, seed=0, table=None):
    """Corrupt ``x`` with ``kind`` at ``severity`` (1..5); deterministic per seed."""
    table = SEVERITY_TABLE if table is None else table
    if kind not in table:
        raise ValueError(f"unknown corruption kind {kind!r}; registered: {tuple(table)}")
    if severity not in (1, 2, 3, 4, 5):
        raise ValueError(f"severity must be one of 1..5, got {severity}")
    rng = np.random.default_rng(seed) if kind in STOCHASTIC else None
    return apply_corruption(x, kind, table[kind][severity - 1], rng)


def build_corrupted_suite(images, kinds=KINDS, seed=0, table=None):
    """Corrupted copies of a test set: ``{kind: [severity1_set, ..., severity5_set]}``.

    Each set is an array shaped like ``images``. Image ``i`` at (kind,
    severity) uses a seed derived from ``(seed, kind position, severity, i)``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError("need a nonempty (N, H, W, C) image batch")
    if not kinds:
        raise ValueError("need at least one corruption kind")
    suite = {}
    for k_idx, kind in enumerate(kinds):
        sets = []
        for severity in range(1, 6):
            ss = np.random.SeedSequence([int(seed), k_idx, severity])
            seeds = ss.generate_state(len(images), dtype=np.uint64)
            sets.append(np.stack([
                corrupt(img, kind, severity, int(s), table) for img, s in zip(images, seeds)
            ]))
        suite[kind] = sets
    return suite


def export_suite(suite, out_dir):
    """Write ``{kind}/{severity}/{index}.ppm`` files for inspection."""
    from pathlib import Path

    from .data import write_ppm

    out_dir = Path(out_dir)
    for kind, sets in suite.items():
        for severity, images in enumerate(sets, start=1):
            d = out_dir / kind / str(severity)
            d.mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(images):
                write_ppm(d / f"{i}.ppm", img)
