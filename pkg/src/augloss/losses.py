"""Tunable robust losses, the Jensen-Shannon consistency term and their logit gradients.

Every loss takes a posterior ``p`` (a probability vector, or a batch of them
along the leading axes) and an integer class index ``y``. Natural logarithms
throughout. Probabilities are clamped to ``[EPS, 1 - EPS]`` before any log.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-7
MIX_FLOOR = 1e-12
ALPHA_ONE_TOL = 1e-9

FAMILIES = ("ce", "focal", "nce_rce", "alpha")


@dataclass(frozen=True)
class LossSpec:
    """A loss family plus its hyperparameters.

    Only the fields belonging to ``family`` are read. Defaults follow the
    CIFAR-10 AugMix tuning: gamma=5, (beta1, beta2)=(1, 0.1), alpha=2,
    delta=4 and a consistency weight of 12. ``alpha=math.inf`` selects the
    0-1 limit of the alpha family.
    """

    family: str = "ce"
    gamma: float = 5.0
    beta1: float = 1.0
    beta2: float = 0.1
    delta: float = 4.0
    alpha: float = 2.0
    lam: float = 12.0

    def __post_init__(self):
        family = self.family.lower().replace("+", "_").replace("-", "_")
        if family not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", family)
        if self.lam < 0:
            raise ValueError("consistency weight lam must be >= 0")
        if family == "focal" and not 0 <= self.gamma <= 5:
            raise ValueError("gamma must lie in [0, 5]")
        if family == "nce_rce":
            if self.beta1 <= 0 or self.beta2 <= 0:
                raise ValueError("beta1 and beta2 must be positive")
            if self.delta <= 0:
                raise ValueError("delta must be positive")
        if family == "alpha" and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def hyperparams(self) -> dict:
        """The hyperparameters that matter for this family (lam excluded)."""
        if self.family == "focal":
            return {"gamma": self.gamma}
        if self.family == "nce_rce":
            return {"beta1": self.beta1, "beta2": self.beta2, "delta": self.delta}
        if self.family == "alpha":
            return {"alpha": self.alpha}
        return {}

    def label(self) -> str:
        parts = [f"{k}={v:g}" for k, v in self.hyperparams().items()]
        return self.family + ("(" + ",".join(parts) + ")" if parts else "")


def _check_posterior(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 1 or p.shape[-1] < 2:
        raise ValueError("posterior needs at least 2 classes along the last axis")
    return p


def _pick(p, y):
    """Probability of class ``y`` along the last axis; ``y`` broadcasts over batch axes."""
    k = p.shape[-1]
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.floor(y)):
            raise ValueError("class index must be an integer")
        y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"class index out of range for K={k}")
    y = np.broadcast_to(y, p.shape[:-1])
    return np.take_along_axis(p, y[..., None], axis=-1)[..., 0], y


def _clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def ce_loss(p, y):
    p = _check_posterior(p)
    py, _ = _pick(p, y)
    return _scalar(-np.log(_clamp(py)))


def focal_loss(p, y, gamma):
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    p = _check_posterior(p)
    q = _clamp(_pick(p, y)[0])
    return _scalar(-((1.0 - q) ** gamma) * np.log(q))


def nce_loss(p, y):
    p = _check_posterior(p)
    logs = -np.log(_clamp(p))
    py, _ = _pick(logs, y)
    return _scalar(py / logs.sum(axis=-1))


def rce_loss(p, y, delta=4.0):
    if delta <= 0:
        raise ValueError("delta must be positive")
    p = _check_posterior(p)
    _, yy = _pick(p, y)
    off = np.ones(p.shape, dtype=bool)
    np.put_along_axis(off, yy[..., None], False, axis=-1)
    return _scalar(delta * np.where(off, p, 0.0).sum(axis=-1))


def nce_rce_loss(p, y, beta1=1.0, beta2=0.1, delta=4.0):
    if beta1 <= 0 or beta2 <= 0:
        raise ValueError("beta1 and beta2 must be positive")
    return _scalar(beta1 * np.asarray(nce_loss(p, y)) + beta2 * np.asarray(rce_loss(p, y, delta)))


def alpha_loss(p, y, alpha):
    """Alpha-loss; alpha=1 is cross entropy and alpha=inf is 1 - p[y]."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    p = _check_posterior(p)
    if abs(alpha - 1.0) <= ALPHA_ONE_TOL:
        return ce_loss(p, y)
    q = _clamp(_pick(p, y)[0])
    if math.isinf(alpha):
        return _scalar(1.0 - q)
    return _scalar(alpha / (alpha - 1.0) * (1.0 - q ** (1.0 - 1.0 / alpha)))


def base_loss(p, y, spec: LossSpec):
    """The per-example loss of ``spec.family`` evaluated on the original view only."""
    if spec.family == "ce":
        return ce_loss(p, y)
    if spec.family == "focal":
        return focal_loss(p, y, spec.gamma)
    if spec.family == "nce_rce":
        return nce_rce_loss(p, y, spec.beta1, spec.beta2, spec.delta)
    return alpha_loss(p, y, spec.alpha)


def _xlogx_ratio(p, m):
    # 0 * log 0 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(m)), 0.0)


def js_consistency(posteriors):
    """Mean KL divergence of each view's posterior to their average.

    ``posteriors`` has shape ``(..., n, K)``; the views axis is second to last.
    The value lies in ``[0, ln n]``.
    """
    P = np.asarray(posteriors, dtype=np.float64)
    if P.ndim < 2:
        raise ValueError("expected an (n, K) stack of posteriors")
    n = P.shape[-2]
    mix = np.maximum(P.mean(axis=-2, keepdims=True), MIX_FLOOR)
    value = _xlogx_ratio(P, mix).sum(axis=(-2, -1)) / n
    # the float mean of identical rows can round away from the row itself
    same = np.all(P == P[..., :1, :], axis=(-2, -1))
    return _scalar(np.where(same, 0.0, value))


def stack_tuple(orig, augs=()):
    """Stack ``(orig, aug1, aug2, ...)`` into an (n, K) array, checking K agrees."""
    rows = [np.asarray(orig, dtype=np.float64)] + [np.asarray(a, dtype=np.float64) for a in augs]
    k = rows[0].shape[-1]
    if any(r.shape != rows[0].shape for r in rows):
        raise ValueError(f"posterior tuple members disagree on shape (first has K={k})")
    return np.stack(rows, axis=-2)


def augloss_objective(posteriors, y, spec: LossSpec):
    """Base loss on the original view plus ``spec.lam`` times the consistency term.

    ``posteriors`` is an ``(n, K)`` stack with the original view first (or a
    batch ``(B, n, K)`` with ``y`` of shape ``(B,)``).
    """
    P = np.asarray(posteriors, dtype=np.float64)
    if P.ndim < 2:
        raise ValueError("expected an (n, K) stack of posteriors")
    value = np.asarray(base_loss(P[..., 0, :], y, spec), dtype=np.float64)
    if spec.lam != 0 and P.shape[-2] > 1:
        value = value + spec.lam * np.asarray(js_consistency(P))
    return _scalar(value)


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _base_prob_grad(p, y, spec):
    """dL/dp for the base loss at a batch of posteriors p (B, K)."""
    b, k = p.shape
    rows = np.arange(b)
    q = _clamp(p)
    inside = (p >= EPS) & (p <= 1.0 - EPS)
    g = np.zeros_like(p)
    qy = q[rows, y]
    fam = spec.family
    if fam == "alpha" and abs(spec.alpha - 1.0) <= ALPHA_ONE_TOL:
        fam = "ce"
    if fam == "ce":
        g[rows, y] = -1.0 / qy
    elif fam == "focal":
        gam = spec.gamma
        d = -((1.0 - qy) ** gam) / qy
        if gam != 0:
            d = d + gam * (1.0 - qy) ** (gam - 1.0) * np.log(qy)
        g[rows, y] = d
    elif fam == "alpha":
        g[rows, y] = -1.0 if math.isinf(spec.alpha) else -(qy ** (-1.0 / spec.alpha))
    else:
        logs = -np.log(q)
        s = logs.sum(axis=1)
        ce_y = logs[rows, y]
        g = spec.beta1 * (ce_y / s**2)[:, None] / q
        g[rows, y] -= spec.beta1 / (qy * s)
        g = g * inside
        # reverse cross entropy works on the raw probabilities
        rce = np.full_like(p, spec.beta2 * spec.delta)
        rce[rows, y] = 0.0
        return g + rce
    return g * inside


def _js_prob_grad(P):
    """dJS/dP for a batch of stacks P (B, n, K)."""
    n = P.shape[1]
    mix = np.maximum(P.mean(axis=1, keepdims=True), MIX_FLOOR)
    return (np.log(np.maximum(P, 1e-300)) - np.log(mix)) / n


def _softmax_backward(p, g):
    return p * (g - (p * g).sum(axis=-1, keepdims=True))


def objective_and_logit_grad(spec: LossSpec, logits, y):
    """Batched objective values and gradients with respect to the logits.

    ``logits`` has shape ``(B, n, K)`` with the original view at index 0 of
    the second axis; ``y`` has shape ``(B,)``. Returns ``(values (B,), grads
    (B, n, K))``. The base loss only sees the original view; the consistency
    term sees every view.
    """
    Z = np.asarray(logits, dtype=np.float64)
    if Z.ndim != 3:
        raise ValueError("logits must have shape (B, n, K)")
    if not np.all(np.isfinite(Z)):
        raise ValueError("logits contain NaN or Inf")
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    P = softmax(Z)
    values = np.asarray(augloss_objective(P, y, spec), dtype=np.float64).reshape(-1)
    gP = np.zeros_like(P)
    gP[:, 0, :] = _base_prob_grad(P[:, 0, :], y, spec)
    if spec.lam != 0 and P.shape[1] > 1:
        gP += spec.lam * _js_prob_grad(P)
    return values, _softmax_backward(P, gP)


def loss_gradient(spec: LossSpec, logit_tuple, y):
    """Gradient of the objective (softmax applied rowwise) w.r.t. an (n, K) logit tuple."""
    Z = np.asarray(logit_tuple, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2:
        raise ValueError("logit tuple must have shape (n, K)")
    _, grad = objective_and_logit_grad(spec, Z[None], np.array([y]))
    return grad[0]
