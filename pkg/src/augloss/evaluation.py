"""Clean error, mean corruption error (mCE), seed aggregation and grid search."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import forward

NOISY_ETAS = (0.1, 0.2, 0.3, 0.4)

SEARCH_SPACES = {
    "focal": {"gamma": (0.0, 0.5, 1.0, 2.0, 5.0)},
    "nce_rce": {"beta1": (0.1, 1.0, 10.0, 99.0, 99.9), "beta2": (0.1, 1.0, 10.0, 100.0)},
    "alpha": {"alpha": (1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 2.0, 3.0, 4.0)},
}

FINGERPRINT = ("dataset", "noise_scheme", "eta", "augment", "loss_family", "hyperparams")


@dataclass
class RunReport:
    dataset: str
    noise_scheme: str
    eta: float
    augment: str
    loss_family: str
    hyperparams: str
    seed: int
    clean_error: float
    per_corruption: dict = field(default_factory=dict)
    mce: float = math.nan
    n_corruptions: int = 0

    def __post_init__(self):
        self.per_corruption = {k: float(v) for k, v in self.per_corruption.items()}
        self.n_corruptions = len(self.per_corruption)
        if self.per_corruption and math.isnan(self.mce):
            self.mce = float(np.mean(list(self.per_corruption.values())))
        for name, v in [("clean_error", self.clean_error), ("mce", self.mce), *self.per_corruption.items()]:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not an error fraction")
        if self.per_corruption and abs(self.mce - np.mean(list(self.per_corruption.values()))) > 1e-12:
            raise ValueError("mce is not the mean of the per-corruption errors")

    def key(self):
        """Fingerprint without the seed."""
        return tuple(getattr(self, f) for f in FINGERPRINT)


@dataclass
class AggregateReport:
    key: tuple
    n_seeds: int
    clean_error_mean: float
    clean_error_std: float
    mce_mean: float
    mce_std: float
    n_corruptions: int
    std_defined: bool = True
    noisy_avg: float | None = None


def predictions(params, images):
    """Argmax labels; ties go to the lowest class index."""
    return np.argmax(forward(params, images), axis=1)


def clean_error(params, images, labels):
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty test set")
    return float(np.mean(predictions(params, images) != labels))


def mce_from_errors(per_kind_errors):
    """``{kind: [err_sev1..err_sev5]}`` -> (per-kind mean errors, unweighted mean over kinds)."""
    if not per_kind_errors:
        raise ValueError("empty corruption suite")
    per_kind = {k: float(np.mean(v)) for k, v in per_kind_errors.items()}
    return per_kind, float(np.mean(list(per_kind.values())))


def mce(params, suite, labels):
    """Evaluate a suite from ``build_corrupted_suite`` (same label order as the clean test set)."""
    if not suite:
        raise ValueError("empty corruption suite")
    errors = {kind: [clean_error(params, s, labels) for s in sets] for kind, sets in suite.items()}
    return mce_from_errors(errors)


def sample_std(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.std(ddof=1)) if len(values) > 1 else 0.0


def aggregate(reports):
    """Mean and sample standard deviation over the seeds of one configuration."""
    reports = sorted(reports, key=lambda r: r.seed)
    if not reports:
        raise ValueError("nothing to aggregate")
    key = reports[0].key()
    if any(r.key() != key for r in reports):
        raise ValueError("reports do not share one configuration (seed aside)")
    clean = [r.clean_error for r in reports]
    mces = [r.mce for r in reports]
    return AggregateReport(
        key=key,
        n_seeds=len(reports),
        clean_error_mean=float(np.mean(clean)),
        clean_error_std=sample_std(clean),
        mce_mean=float(np.mean(mces)),
        mce_std=sample_std(mces),
        n_corruptions=reports[0].n_corruptions,
        std_defined=len(reports) > 1,
    )


def noisy_avg(per_eta):
    """Mean over the nonzero noise rates of a ``{eta: value}`` map; None if there are none."""
    vals = [v for eta, v in sorted(per_eta.items()) if eta != 0]
    return float(np.mean(vals)) if vals else None


def group_reports(reports):
    groups = {}
    for r in reports:
        groups.setdefault(r.key(), []).append(r)
    return groups


def summarize(reports):
    """Aggregate every configuration and attach the noisy average across its noise rates."""
    aggs = {key: aggregate(rs) for key, rs in group_reports(reports).items()}
    by_method = {}
    for key, agg in aggs.items():
        dataset, scheme, eta, aug, fam, hp = key
        by_method.setdefault((dataset, scheme, aug, fam, hp), {})[eta] = agg.mce_mean
    for key, agg in aggs.items():
        dataset, scheme, eta, aug, fam, hp = key
        agg.noisy_avg = noisy_avg(by_method[(dataset, scheme, aug, fam, hp)])
    return aggs


def method_type(augment, family):
    """The four method types compared across settings: {NoAug, AugMix} x {CE, Robust}."""
    aug = "AugMix" if augment.lower() != "noaug" else "NoAug"
    return f"{aug}+{'CE' if family == 'ce' else 'Robust'}"


def method_type_scores(aggs, metric="noisy_avg"):
    """Per (dataset, scheme) setting, the score of each method type.

    Robust types average the scores of their loss families.
    """
    per = {}
    for key, agg in aggs.items():
        dataset, scheme, eta, aug, fam, hp = key
        value = agg.noisy_avg if metric == "noisy_avg" else agg.mce_mean
        if value is None:
            value = agg.mce_mean
        per.setdefault((dataset, scheme), {}).setdefault(method_type(aug, fam), {}).setdefault((fam, hp), []).append(value)
    out = {}
    for setting, types in per.items():
        out[setting] = {
            t: float(np.mean([np.mean(v) for v in fams.values()])) for t, fams in types.items()
        }
    return out


def grid_points(family, space=None):
    """Grid points of a search space in lexicographic order of their parameter tuples."""
    space = SEARCH_SPACES[family] if space is None else space
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("empty search space")
    names = list(space)
    return [dict(zip(names, combo)) for combo in sorted(itertools.product(*(space[n] for n in names)))]


def grid_search(family, score, space=None):
    """Return ``(best_point, scores)``; ``score(point)`` is minimized.

    Ties go to the lexicographically smaller parameter tuple.
    """
    points = grid_points(family, space)
    scores = []
    for point in points:
        scores.append((float(score(point)), tuple(point.values()), point))
    best = min(scores, key=lambda s: (s[0], s[1]))
    return best[2], [(s[2], s[0]) for s in scores]
