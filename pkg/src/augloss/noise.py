"""Label-noise transition matrices, sampling and noisy-label file loading.

A transition matrix ``T`` is row-stochastic: ``T[i, j]`` is the probability
that a true label ``i`` is recorded as ``j``.
"""
from __future__ import annotations

import csv

import numpy as np

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)

# true class -> visually similar class it is flipped to
CIFAR10_ASYMMETRIC_MAP = {
    "truck": "automobile",
    "bird": "airplane",
    "deer": "horse",
    "cat": "dog",
    "dog": "cat",
}


class LabelFileError(ValueError):
    """A noisy-label CSV that does not satisfy its contract."""


def _check_eta(eta):
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"noise rate must lie in [0, 1], got {eta}")


def check_transition(t, atol=1e-9):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("transition matrix entries must lie in [0, 1]")
    if not np.allclose(t.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise ValueError("transition matrix rows must sum to 1")
    return t


def symmetric_transition(k, eta):
    """Keep a label with probability 1 - eta, else flip uniformly to a false class."""
    _check_eta(eta)
    if k < 2:
        raise ValueError("need at least 2 classes")
    t = np.full((k, k), eta / (k - 1))
    np.fill_diagonal(t, 1.0 - eta)
    return t


def asymmetric_transition_cifar10(eta):
    _check_eta(eta)
    t = np.eye(10)
    index = {name: i for i, name in enumerate(CIFAR10_CLASSES)}
    for src, dst in CIFAR10_ASYMMETRIC_MAP.items():
        i, j = index[src], index[dst]
        t[i, i] = 1.0 - eta
        t[i, j] = eta
    return t


def check_partition(groups, k=None):
    groups = [list(map(int, g)) for g in groups]
    flat = [c for g in groups for c in g]
    if k is None:
        k = len(flat)
    if any(len(g) == 0 for g in groups):
        raise ValueError("partition contains an empty group")
    if sorted(flat) != list(range(k)):
        raise ValueError(f"groups must partition the classes 0..{k - 1} exactly")
    return groups


def contiguous_partition(k, group_size):
    """Consecutive class blocks of ``group_size``: [[0..g-1], [g..2g-1], ...]."""
    if k % group_size:
        raise ValueError(f"{k} classes do not split into groups of {group_size}")
    return [list(range(s, s + group_size)) for s in range(0, k, group_size)]


def superclass_transition(groups, eta):
    """Flip within a superclass: keep w.p. 1 - eta, else uniform over co-members."""
    _check_eta(eta)
    groups = check_partition(groups)
    k = sum(len(g) for g in groups)
    t = np.zeros((k, k))
    for g in groups:
        if len(g) == 1:
            t[g[0], g[0]] = 1.0
            continue
        idx = np.ix_(g, g)
        block = np.full((len(g), len(g)), eta / (len(g) - 1))
        np.fill_diagonal(block, 1.0 - eta)
        t[idx] = block
    return t


def apply_noise(labels, t, seed):
    """Resample every label independently from its row of ``t``.

    Uses one uniform draw per example against the row's cumulative sum, so
    the output is a pure function of ``(labels, t, seed)``.
    """
    t = check_transition(t)
    labels = np.asarray(labels, dtype=np.int64)
    k = t.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels fall outside [0, {k}) for a {k}x{k} transition matrix")
    rng = np.random.default_rng(seed)
    u = rng.random(labels.shape[0])
    cdf = np.cumsum(t, axis=1)
    cdf[:, -1] = 1.0
    noisy = (u[:, None] >= cdf[labels]).sum(axis=1)
    return np.minimum(noisy, k - 1).astype(np.int64)


def flip_fraction(clean, noisy):
    clean = np.asarray(clean)
    noisy = np.asarray(noisy)
    return float(np.mean(clean != noisy)) if clean.size else 0.0


def empirical_transition(clean, noisy, k=None):
    clean = np.asarray(clean, dtype=np.int64)
    noisy = np.asarray(noisy, dtype=np.int64)
    if clean.shape != noisy.shape:
        raise ValueError("clean and noisy label vectors differ in length")
    if k is None:
        k = int(max(clean.max(), noisy.max())) + 1
    counts = np.zeros((k, k))
    np.add.at(counts, (clean, noisy), 1.0)
    totals = counts.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        raise ValueError(f"class {int(empty[0])} never appears among the clean labels")
    return counts / totals[:, None]


def load_external_labels(path, expected_len, k):
    """Read an ``index,label`` CSV (header required) into a label vector ordered by index."""
    labels = np.full(expected_len, -1, dtype=np.int64)
    seen = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "label"]:
            raise LabelFileError(f"{path}: expected header 'index,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise LabelFileError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                idx, lab = int(row[0]), int(row[1])
            except ValueError:
                raise LabelFileError(f"{path}:{lineno}: non-integer field in {row}") from None
            if not 0 <= idx < expected_len:
                raise LabelFileError(
                    f"{path}:{lineno}: index {idx} outside [0, {expected_len})")
            if not 0 <= lab < k:
                raise LabelFileError(
                    f"{path}:{lineno}: label {lab} for index {idx} outside [0, {k})")
            if labels[idx] != -1:
                raise LabelFileError(f"{path}:{lineno}: duplicate index {idx}")
            labels[idx] = lab
            seen += 1
    if seen != expected_len:
        missing = np.flatnonzero(labels < 0)
        raise LabelFileError(
            f"{path}: length mismatch, {seen} rows for {expected_len} examples "
            f"(first missing index {int(missing[0])})")
    return labels


def write_labels_csv(path, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("index,label\n")
        for i, lab in enumerate(np.asarray(labels, dtype=np.int64)):
            fh.write(f"{i},{lab}\n")


def write_matrix_csv(path_or_file, t):
    lines = [",".join(f"{v:.6f}" for v in row) for row in np.asarray(t)]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w", encoding="utf-8") as fh:
            fh.write(text)
