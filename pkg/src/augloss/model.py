"""A small from-scratch MLP classifier trained on augmented tuples.

Parameters are a list of ``(W, b)`` pairs with ``W`` of shape
``(fan_in, fan_out)``; hidden layers use ReLU and the output goes through a
softmax. Inputs are images flattened in (H, W, C) order.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment
from .losses import LossSpec, objective_and_logit_grad, softmax

MAGIC = b"AGLS"
VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr0: float = 0.1
    lr_min: float = 1e-6
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    seed: int = 0
    flip_prob: float = 0.5
    standardize_inputs: bool = True
    hidden: tuple = (256,)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 <= self.lr_min <= self.lr0:
            raise ValueError("need 0 <= lr_min <= lr0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must lie in [0, 1]")


@dataclass
class OptimizerState:
    velocity: list
    epoch: int = 0
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([(np.zeros_like(W), np.zeros_like(b)) for W, b in params])


@dataclass
class History:
    epoch: list = field(default_factory=list)
    mean_loss: list = field(default_factory=list)
    val_error: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.epoch, self.mean_loss, self.val_error, self.lr))

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss,val_error,lr\n")
            for e, loss, err, lr in self.rows():
                fh.write(f"{e},{loss:.10g},{err:.10g},{lr:.10g}\n")


def init_mlp(sizes, seed=0):
    """He-initialized weights (scale sqrt(2 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    return [
        (rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in), np.zeros(fan_out))
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    ]


def check_params(params):
    for i, ((W, b), nxt) in enumerate(zip(params, list(params[1:]) + [None])):
        if W.ndim != 2 or b.shape != (W.shape[1],):
            raise ValueError(f"layer {i}: weight/bias shapes {W.shape}/{b.shape} do not agree")
        if nxt is not None and nxt[0].shape[0] != W.shape[1]:
            raise ValueError(f"layer {i} outputs {W.shape[1]} units but layer {i + 1} expects {nxt[0].shape[0]}")
    return params


def _flatten(batch):
    x = np.asarray(batch, dtype=np.float64)
    return x.reshape(len(x), int(np.prod(x.shape[1:])))


def forward_logits(params, x, cache=None):
    h = x
    for i, (W, b) in enumerate(params):
        if cache is not None:
            cache.append(h)
        h = h @ W + b
        if i < len(params) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward(params, batch):
    """Posteriors for a batch of images (or pre-flattened feature rows)."""
    x = _flatten(batch)
    if len(x) == 0:
        return np.zeros((0, params[-1][0].shape[1]))
    if x.shape[1] != params[0][0].shape[0]:
        raise ValueError(f"inputs have {x.shape[1]} features, first layer expects {params[0][0].shape[0]}")
    return softmax(forward_logits(params, x))


def backward(params, cache, dlogits):
    """Parameter gradients given cached layer inputs and dL/dlogits."""
    grads = [None] * len(params)
    g = dlogits
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        x_in = cache[i]
        grads[i] = (x_in.T @ g, g.sum(axis=0))
        if i > 0:
            g = (g @ W.T) * (x_in > 0)
    return grads


def objective_and_grads(params, views, labels, spec: LossSpec):
    """Mean objective over a batch and its parameter gradients.

    ``views`` has shape ``(n, B, ...)``: the original inputs first, then the
    augmented ones. The base loss only reaches the original view.
    """
    views = np.asarray(views, dtype=np.float64)
    n, bsz = views.shape[:2]
    x = views.reshape(n * bsz, -1)
    cache = []
    with np.errstate(over="ignore", invalid="ignore"):
        logits = forward_logits(params, x, cache)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    k = logits.shape[1]
    per_example = logits.reshape(n, bsz, k).transpose(1, 0, 2)
    values, dz = objective_and_logit_grad(spec, per_example, labels)
    dz = dz.transpose(1, 0, 2).reshape(n * bsz, k) / bsz
    return float(values.mean()), backward(params, cache, dz)


def cosine_lr(epoch, total_epochs, lr0=0.1, lr_min=1e-6):
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    if epoch == 0:
        return lr0
    if epoch == total_epochs:
        return lr_min
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def sgd_update(params, opt, grads, lr, config):
    """Weight decay on weights only, then (Nesterov) momentum SGD."""
    mu = config.momentum
    new_params, new_vel = [], []
    for (W, b), (gW, gb), (vW, vb) in zip(params, grads, opt.velocity):
        gW = gW + config.weight_decay * W
        vW = mu * vW + gW
        vb = mu * vb + gb
        if config.nesterov:
            dW, db = gW + mu * vW, gb + mu * vb
        else:
            dW, db = vW, vb
        new_params.append((W - lr * dW, b - lr * db))
        new_vel.append((vW, vb))
    return new_params, OptimizerState(new_vel, opt.epoch, opt.step + 1)


def train_step(params, opt, views, labels, spec, lr, config):
    """One optimizer step on a batch; returns ``(params, opt, mean_loss)``."""
    try:
        loss, grads = objective_and_grads(params, views, labels, spec)
    except FloatingPointError as exc:
        raise TrainingError(opt.step, str(exc)) from None
    if not math.isfinite(loss) or not all(np.all(np.isfinite(gW)) and np.all(np.isfinite(gb)) for gW, gb in grads):
        raise TrainingError(opt.step, "non-finite loss or gradient")
    params, opt = sgd_update(params, opt, grads, lr, config)
    if not all(np.all(np.isfinite(W)) and np.all(np.isfinite(b)) for W, b in params):
        raise TrainingError(opt.step, "parameters became non-finite")
    return params, opt, loss


def random_horizontal_flip(batch, prob, seed):
    """Mirror each image left-right independently with probability ``prob``."""
    batch = np.asarray(batch)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flip = rng.random(len(batch)) < prob
    out = batch.copy()
    out[flip] = batch[flip][:, :, ::-1]
    return out


@dataclass
class Standardizer:
    """Per-channel input standardization with statistics frozen from training data."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, images):
        images = np.asarray(images, dtype=np.float64)
        mean = images.mean(axis=(0, 1, 2))
        std = images.std(axis=(0, 1, 2))
        return cls(mean, np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, channels):
        return cls(np.zeros(channels), np.ones(channels))

    def __call__(self, batch):
        return (np.asarray(batch, dtype=np.float64) - self.mean) / self.std

    def fold_into(self, params, image_shape):
        """Absorb the standardization into the first layer so params take raw images."""
        h, w, _ = image_shape
        mean = np.tile(self.mean, h * w)
        std = np.tile(self.std, h * w)
        W, b = params[0]
        W2 = W / std[:, None]
        b2 = b - (mean / std) @ W
        return [(W2, b2)] + list(params[1:])


def standardize(stats, batch):
    return stats(batch)


def _epoch_views(images, policy, config, epoch):
    """Raw (unstandardized) float32 views for one epoch: flipped originals, then augmentations."""
    rng = np.random.default_rng([config.seed, 1, epoch])
    x = random_horizontal_flip(images, config.flip_prob, rng)
    if policy is None:
        return x[None]
    return np.stack([
        x,
        augment.augmix_batch(x, policy, np.random.default_rng([config.seed, 2, epoch])),
        augment.augmix_batch(x, policy, np.random.default_rng([config.seed, 3, epoch])),
    ])


def error_rate(params, images, labels, batch=2048):
    labels = np.asarray(labels)
    wrong = 0
    for s in range(0, len(labels), batch):
        p = forward(params, images[s:s + batch])
        wrong += int(np.sum(np.argmax(p, axis=1) != labels[s:s + batch]))
    return wrong / len(labels)


def train(train_set, config: TrainConfig, spec: LossSpec, policy=None, val_set=None, log=None):
    """Train an MLP on ``train_set`` (its labels may be noisy).

    ``policy=None`` is the no-augmentation baseline: only the original view
    is fed, which is equivalent to the degenerate tuple (x, x, x) whose
    consistency term is identically zero. Returns ``(params, history)``; the
    returned params take raw [0, 1] images (standardization is folded in).
    """
    images = np.asarray(train_set.images, dtype=np.float32)
    labels = np.asarray(train_set.labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty training set")
    shape = images.shape[1:]
    stats = Standardizer.fit(images) if config.standardize_inputs else Standardizer.identity(shape[-1])
    sizes = [int(np.prod(shape)), *config.hidden, train_set.k]
    params = init_mlp(sizes, config.seed)
    opt = OptimizerState.zeros_like(params)
    hist = History()
    order_rng = np.random.default_rng([config.seed, 0])
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)
        views = _epoch_views(images, policy, config, epoch)
        order = order_rng.permutation(len(labels))
        losses = []
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            batch = stats(views[:, idx]).reshape(len(views), len(idx), -1)
            params, opt, loss = train_step(params, opt, batch, labels[idx], spec, lr, config)
            losses.append(loss * len(idx))
        opt.epoch = epoch + 1
        val_err = math.nan
        if val_set is not None:
            val_err = error_rate(stats.fold_into(params, shape), val_set.images, val_set.labels)
        hist.epoch.append(epoch)
        hist.mean_loss.append(sum(losses) / len(labels))
        hist.val_error.append(val_err)
        hist.lr.append(lr)
        if log is not None:
            log(f"epoch {epoch}: loss {hist.mean_loss[-1]:.4f} val_error {val_err:.4f} lr {lr:.3g}")
    return stats.fold_into(params, shape), hist


# -- checkpoints ------------------------------------------------------------

def checkpoint_bytes(params):
    check_params(params)
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for W, b in params:
        out.append(struct.pack("<II", *W.shape))
        out.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(path, params):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(params))
    tmp.replace(path)


def parse_checkpoint(raw):
    if raw[:4] != MAGIC:
        raise ValueError("not an AGLS checkpoint (bad magic)")
    version, n_layers = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    params = []
    for _ in range(n_layers):
        fan_in, fan_out = struct.unpack_from("<II", raw, pos)
        pos += 8
        nw = fan_in * fan_out
        if pos + 8 * (nw + fan_out) > len(raw):
            raise ValueError("checkpoint truncated")
        W = np.frombuffer(raw, dtype="<f8", count=nw, offset=pos).reshape(fan_in, fan_out).astype(np.float64)
        pos += 8 * nw
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=pos).astype(np.float64)
        pos += 8 * fan_out
        params.append((W, b))
    if pos != len(raw):
        raise ValueError("trailing bytes after the last layer")
    return check_params(params)


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())
