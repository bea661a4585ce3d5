"""AugMix-style augmentation producing (orig, aug1, aug2) tuples.

Images are float arrays of shape (H, W, C) with values in [0, 1]. All
operations also work on batches (N, H, W, C); the batched path is what the
trainer uses, the single-image functions wrap it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

FILL = 0.5

OPS = (
    "autocontrast", "equalize", "posterize", "rotate", "solarize",
    "shear_x", "shear_y", "translate_x", "translate_y",
)


class AugmentedTuple(NamedTuple):
    orig: np.ndarray
    aug1: np.ndarray
    aug2: np.ndarray


@dataclass(frozen=True)
class AugmentPolicy:
    width: int = 3
    depth_min: int = 1
    depth_max: int = 3
    severity: int = 3
    op_set: tuple = OPS
    dirichlet_alpha: float = 1.0
    skip_beta: tuple = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "op_set", tuple(self.op_set))
        object.__setattr__(self, "skip_beta", tuple(float(b) for b in self.skip_beta))
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if not 1 <= self.depth_min <= self.depth_max:
            raise ValueError("need 1 <= depth_min <= depth_max")
        if not 1 <= self.severity <= 10:
            raise ValueError("severity must lie in 1..10")
        if not self.op_set:
            raise ValueError("op_set is empty")
        unknown = [op for op in self.op_set if op not in OPS]
        if unknown:
            raise ValueError(f"unknown augmentation ops {unknown}")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if min(self.skip_beta) < 0 or max(self.skip_beta) == 0:
            raise ValueError("skip_beta shape parameters must be >= 0, not both 0")


def check_image(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] not in (1, 3):
        raise ValueError(f"expected an (H, W, C) image with C in (1, 3), got shape {x.shape}")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("image values must lie in [0, 1]")
    return x


# -- geometric ops ----------------------------------------------------------

def affine_warp(images, matrices, fill=FILL):
    """Bilinear resampling of a batch under per-image affine maps.

    ``matrices`` has shape (N, 2, 3) and maps centred output coordinates
    (x, y, 1) to centred source coordinates. Pixels sampled from outside the
    image take the ``fill`` value.
    """
    n, h, w, c = images.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    grid = np.stack([xs.ravel() - cx, ys.ravel() - cy, np.ones(h * w)])
    src = matrices @ grid  # (N, 2, HW)
    sx = src[:, 0] + cx
    sy = src[:, 1] + cy
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0).astype(images.dtype)
    fy = (sy - y0).astype(images.dtype)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    # one-pixel fill border; out-of-range taps are clipped onto it
    padded = np.full((n, h + 2, w + 2, c), fill, dtype=images.dtype)
    padded[:, 1:-1, 1:-1] = images
    flat = padded.reshape(n, (h + 2) * (w + 2), c)
    batch = np.arange(n)[:, None]
    xa = np.clip(x0, -1, w) + 1
    xb = np.clip(x0 + 1, -1, w) + 1
    ya = (np.clip(y0, -1, h) + 1) * (w + 2)
    yb = (np.clip(y0 + 1, -1, h) + 1) * (w + 2)
    fx = fx[..., None]
    fy = fy[..., None]
    top = flat[batch, ya + xa] * (1 - fx) + flat[batch, ya + xb] * fx
    bottom = flat[batch, yb + xa] * (1 - fx) + flat[batch, yb + xb] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(out.reshape(n, h, w, c), 0.0, 1.0)


def _rotation(mag, sign, shape):
    theta = np.deg2rad(30.0 * mag * sign)
    cos, sin = np.cos(theta), np.sin(theta)
    m = np.zeros((len(mag), 2, 3))
    m[:, 0, 0], m[:, 0, 1] = cos, sin
    m[:, 1, 0], m[:, 1, 1] = -sin, cos
    return m


def _shear(axis):
    def build(mag, sign, shape):
        m = np.zeros((len(mag), 2, 3))
        m[:, 0, 0] = m[:, 1, 1] = 1.0
        if axis == "x":
            m[:, 0, 1] = 0.3 * mag * sign
        else:
            m[:, 1, 0] = 0.3 * mag * sign
        return m
    return build


def _translate(axis):
    def build(mag, sign, shape):
        h, w = shape
        m = np.zeros((len(mag), 2, 3))
        m[:, 0, 0] = m[:, 1, 1] = 1.0
        if axis == "x":
            m[:, 0, 2] = -mag * sign * w / 3.0
        else:
            m[:, 1, 2] = -mag * sign * h / 3.0
        return m
    return build


_GEOMETRIC = {
    "rotate": _rotation,
    "shear_x": _shear("x"),
    "shear_y": _shear("y"),
    "translate_x": _translate("x"),
    "translate_y": _translate("y"),
}


# -- photometric ops --------------------------------------------------------

def _to_levels(images):
    return np.clip(np.rint(images * 255.0), 0, 255).astype(np.int64)


def autocontrast(images):
    lo = images.min(axis=(1, 2), keepdims=True)
    hi = images.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    stretched = (images - lo) / np.where(span > 0, span, 1.0)
    return np.where(span > 0, stretched, images)


def equalize(images):
    """Per-channel histogram equalization on 256 levels, vectorized over the batch."""
    n, h, w, c = images.shape
    levels = _to_levels(images).transpose(0, 3, 1, 2).reshape(n * c, h * w)
    groups = np.arange(n * c)[:, None] * 256
    keyed = (levels + groups).ravel()
    order = np.sort(keyed)
    start = np.arange(n * c) * (h * w)
    at_most = np.searchsorted(order, keyed, side="right").reshape(n * c, h * w) - start[:, None]
    lowest = levels.min(axis=1, keepdims=True) + groups
    n_lowest = np.searchsorted(order, lowest.ravel(), side="right") - start
    denom = (h * w - n_lowest)[:, None].astype(np.float64)
    eq = (at_most - n_lowest[:, None]) / np.where(denom > 0, denom, 1.0)
    eq = np.where(denom > 0, eq, levels / 255.0)
    return np.clip(eq, 0.0, 1.0).reshape(n, c, h, w).transpose(0, 2, 3, 1)


def posterize(images, mag):
    """Keep ``8 - round(4 * mag)`` high bits of each 8-bit level; 8 bits is the identity."""
    bits = 8 - np.rint(4.0 * np.asarray(mag)).astype(np.int64)
    out = images.copy()
    for b in np.unique(bits):
        if b >= 8:
            continue
        sel = bits == b
        mask = ~((1 << (8 - int(b))) - 1) & 0xFF
        out[sel] = (_to_levels(images[sel]) & mask) / 255.0
    return out


def solarize(images, mag):
    """Invert every value strictly above the threshold ``1 - mag``."""
    thr = (1.0 - np.asarray(mag, dtype=np.float64)).reshape(-1, 1, 1, 1)
    return np.where(images > thr, 1.0 - images, images)


def apply_ops(images, ops, mags, signs):
    """Apply ``ops[i]`` with magnitude ``mags[i]`` and direction ``signs[i]`` to ``images[i]``."""
    images = np.asarray(images)
    out = np.empty_like(images)
    ops = np.asarray(ops)
    mags = np.asarray(mags, dtype=np.float64)
    signs = np.asarray(signs, dtype=np.float64)
    for op in np.unique(ops):
        sel = np.flatnonzero(ops == op)
        sub = images[sel]
        if op in _GEOMETRIC:
            mats = _GEOMETRIC[op](mags[sel], signs[sel], sub.shape[1:3])
            out[sel] = affine_warp(sub, mats)
        elif op == "autocontrast":
            out[sel] = autocontrast(sub)
        elif op == "equalize":
            out[sel] = equalize(sub)
        elif op == "posterize":
            out[sel] = posterize(sub, mags[sel])
        elif op == "solarize":
            out[sel] = solarize(sub, mags[sel])
        else:
            raise ValueError(f"unknown augmentation op {op!r}")
    return out


def apply_op(x, op, magnitude, seed=0):
    """Apply one registered op to one image.

    ``magnitude`` in [0, 1] scales the op strength; the seed picks the
    direction of geometric ops. autocontrast and equalize have no strength.
    """
    if op not in OPS:
        raise ValueError(f"unknown augmentation op {op!r}; registered: {OPS}")
    if not 0.0 <= magnitude <= 1.0:
        raise ValueError("magnitude must lie in [0, 1]")
    x = check_image(x)
    sign = np.random.default_rng(seed).choice((-1.0, 1.0))
    return apply_ops(x[None], [op], [magnitude], [sign])[0]


# -- AugMix -----------------------------------------------------------------

def _chain_batch(images, policy, rng):
    n = len(images)
    depth = rng.integers(policy.depth_min, policy.depth_max + 1, size=n)
    out = images.copy()
    for step in range(policy.depth_max):
        ops = rng.choice(np.asarray(policy.op_set), size=n)
        mags = rng.uniform(0.1, policy.severity, size=n) / 10.0
        signs = rng.choice((-1.0, 1.0), size=n)
        active = np.flatnonzero(depth > step)
        if active.size:
            out[active] = apply_ops(out[active], ops[active], mags[active], signs[active])
    return out


def _skip_weights(policy, rng, n):
    a, b = policy.skip_beta
    if b == 0:
        return np.ones(n)
    if a == 0:
        return np.zeros(n)
    return rng.beta(a, b, size=n)


def _augmix_block(images, policy, rng):
    n = len(images)
    w = rng.dirichlet([policy.dirichlet_alpha] * policy.width, size=n).astype(images.dtype)
    m = _skip_weights(policy, rng, n).astype(images.dtype)[:, None, None, None]
    mix = m * images
    for i in range(policy.width):
        mix += (1 - m) * w[:, i, None, None, None] * _chain_batch(images, policy, rng)
    return np.clip(mix, 0.0, 1.0)


def augmix_batch(images, policy, rng, chunk=512):
    """AugMix every image of an (N, H, W, C) batch with draws from ``rng``.

    Each image gets its own Dirichlet chain weights, skip weight and chains;
    output is ``m * x + (1 - m) * sum_i w_i * chain_i(x)``. Float32 input
    stays float32. Images are processed ``chunk`` at a time, in order.
    """
    images = np.asarray(images)
    if images.dtype != np.float32:
        images = images.astype(np.float64)
    out = np.empty_like(images)
    for s in range(0, len(images), chunk):
        out[s:s + chunk] = _augmix_block(images[s:s + chunk], policy, rng)
    return out


def augmix_chain(x, policy, seed):
    """One chain: a random-depth composition of ops drawn from the policy."""
    x = check_image(x)
    return _chain_batch(x[None], policy, np.random.default_rng(seed))[0]


def augmix(x, policy, seed):
    x = check_image(x)
    return augmix_batch(x[None], policy, np.random.default_rng(seed))[0]


def branch_rng(seed, branch):
    """An independent generator for augmentation branch ``branch`` of ``seed``."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, branch])


def augment_tuple(x, policy, seed):
    x = check_image(x)
    return AugmentedTuple(
        x,
        augmix_batch(x[None], policy, branch_rng(seed, 1))[0],
        augmix_batch(x[None], policy, branch_rng(seed, 2))[0],
    )


def noaug_tuple(x):
    x = check_image(x)
    return AugmentedTuple(x, x, x)
