"""Config-driven experiment grids: noise -> augment -> train -> corrupt -> evaluate -> report.

Configs are TOML. See ``configs/example.toml`` for an annotated example of
every key.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import corruptions, data, evaluation, noise
from .augment import AugmentPolicy
from .evaluation import RunReport
from .losses import LossSpec
from .model import TrainConfig, train

log = logging.getLogger(__name__)

SCHEMES = ("symmetric", "asymmetric_cifar10", "superclass", "external")
AUGMENTS = ("noaug", "augmix")
BASE_COLUMNS = ["dataset", "noise_scheme", "eta", "augment", "loss_family", "hyperparams",
                "seed", "clean_error", "mce"]


class ConfigError(ValueError):
    """An experiment config that cannot be used; the message names the line when known."""


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    name: str = "synthetic"
    k: int = 10
    n_per_class: int = 600
    side: int = 16
    noise_sd: float = 0.15
    seed: int = 0
    train_fraction: float = 5 / 6
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    external_labels: str | None = None


@dataclass
class LossEntry:
    family: str
    params: dict = field(default_factory=dict)   # values may be the string "tune"
    lam: float = 12.0

    @property
    def tuned(self):
        return any(v == "tune" for v in self.params.values())

    def spec(self, overrides=None):
        kw = {k: v for k, v in self.params.items() if v != "tune"}
        kw.update(overrides or {})
        return LossSpec(self.family, lam=self.lam, **kw)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    scheme: str = "symmetric"
    etas: list = field(default_factory=lambda: [0.0])
    groups: list | None = None
    group_size: int = 5
    augments: list = field(default_factory=lambda: ["noaug"])
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    losses: list = field(default_factory=lambda: [LossEntry("ce")])
    train: TrainConfig = field(default_factory=TrainConfig)
    corruption_kinds: list = field(default_factory=lambda: list(corruptions.KINDS))
    corruption_seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    tune_eta: float = 0.2
    tune_epochs: int | None = None
    out: str | None = None


# -- config parsing ---------------------------------------------------------

def _line_of(text, key):
    if text is None:
        return None
    pat = re.compile(rf"^\s*\[*\s*{re.escape(key)}\s*[\]=]", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text, key, message, source="config"):
    line = _line_of(text, key)
    where = f"{source}:{line}" if line else source
    raise ConfigError(f"{where}: {message}")


def _take(section, cls, text, name, source):
    known = {f for f in cls.__dataclass_fields__}
    extra = set(section) - known
    if extra:
        _fail(text, sorted(extra)[0], f"unknown key(s) {sorted(extra)} in [{name}]", source)
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        _fail(text, name, f"[{name}]: {exc}", source)


def parse_config(raw, text=None, source="config"):
    """Build an ExperimentConfig from a parsed TOML mapping."""
    raw = dict(raw)
    cfg = ExperimentConfig()
    known = {"dataset", "noise", "augment", "loss", "train", "corruptions", "seeds", "tuning", "out"}
    extra = set(raw) - known
    if extra:
        _fail(text, sorted(extra)[0], f"unknown top-level key(s) {sorted(extra)}", source)
    if "dataset" in raw:
        cfg.dataset = _take(raw["dataset"], DatasetConfig, text, "dataset", source)
    if cfg.dataset.kind not in ("synthetic", "cifar10"):
        _fail(text, "kind", f"dataset kind must be 'synthetic' or 'cifar10', got {cfg.dataset.kind!r}", source)
    if cfg.dataset.kind == "cifar10" and (not cfg.dataset.train or not cfg.dataset.test):
        _fail(text, "dataset", "cifar10 datasets need 'train' and 'test' file lists", source)
    nz = dict(raw.get("noise", {}))
    cfg.scheme = nz.pop("scheme", cfg.scheme)
    cfg.etas = [float(e) for e in nz.pop("etas", cfg.etas)]
    cfg.groups = nz.pop("groups", None)
    cfg.group_size = int(nz.pop("group_size", cfg.group_size))
    if nz:
        _fail(text, sorted(nz)[0], f"unknown key(s) {sorted(nz)} in [noise]", source)
    if cfg.scheme not in SCHEMES:
        _fail(text, "scheme", f"noise scheme must be one of {SCHEMES}, got {cfg.scheme!r}", source)
    if not cfg.etas or any(not 0.0 <= e <= 1.0 for e in cfg.etas):
        _fail(text, "etas", "etas must be a nonempty list of values in [0, 1]", source)
    if cfg.scheme == "external" and not cfg.dataset.external_labels:
        _fail(text, "scheme", "the external scheme needs dataset.external_labels", source)
    aug = dict(raw.get("augment", {}))
    cfg.augments = [a.lower() for a in aug.pop("kinds", cfg.augments)]
    if not cfg.augments or any(a not in AUGMENTS for a in cfg.augments):
        _fail(text, "kinds", f"augment kinds must be a nonempty subset of {AUGMENTS}", source)
    try:
        cfg.policy = AugmentPolicy(**aug)
    except (TypeError, ValueError) as exc:
        _fail(text, "augment", f"[augment]: {exc}", source)
    if "loss" in raw:
        entries = raw["loss"]
        if not isinstance(entries, list) or not entries:
            _fail(text, "loss", "[[loss]] must list at least one loss", source)
        cfg.losses = []
        for entry in entries:
            entry = dict(entry)
            family = entry.pop("family", None)
            lam = float(entry.pop("lam", 12.0))
            le = LossEntry(family, entry, lam)
            try:
                le.spec({k: 1.5 for k, v in entry.items() if v == "tune"})
            except (TypeError, ValueError) as exc:
                _fail(text, "loss", f"[[loss]] {family!r}: {exc}", source)
            cfg.losses.append(le)
    if "train" in raw:
        cfg.train = _take(raw["train"], TrainConfig, text, "train", source)
    cor = dict(raw.get("corruptions", {}))
    cfg.corruption_kinds = list(cor.pop("kinds", cfg.corruption_kinds))
    cfg.corruption_seed = int(cor.pop("seed", 0))
    if cor:
        _fail(text, sorted(cor)[0], f"unknown key(s) {sorted(cor)} in [corruptions]", source)
    bad = [k for k in cfg.corruption_kinds if k not in corruptions.KINDS]
    if bad or not cfg.corruption_kinds:
        _fail(text, "corruptions", f"unknown or missing corruption kinds {bad}", source)
    cfg.seeds = [int(s) for s in raw.get("seeds", cfg.seeds)]
    if not cfg.seeds:
        _fail(text, "seeds", "seeds must be nonempty", source)
    tun = dict(raw.get("tuning", {}))
    cfg.tune_eta = float(tun.pop("eta", cfg.tune_eta))
    cfg.tune_epochs = tun.pop("epochs", None)
    if tun:
        _fail(text, sorted(tun)[0], f"unknown key(s) {sorted(tun)} in [tuning]", source)
    cfg.out = raw.get("out")
    return cfg


def load_config(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, text, str(path))


# -- data and noise ---------------------------------------------------------

def load_data(dcfg: DatasetConfig):
    """Clean (train, test) datasets for a dataset config."""
    if dcfg.kind == "cifar10":
        return data.load_cifar10_binary(dcfg.train), data.load_cifar10_binary(dcfg.test)
    full = data.synth_shapes(dcfg.k, dcfg.n_per_class, dcfg.side, dcfg.noise_sd, dcfg.seed)
    return data.split(full, dcfg.train_fraction, dcfg.seed)


def transition_for(scheme, k, eta, groups=None, group_size=5):
    if scheme == "symmetric":
        return noise.symmetric_transition(k, eta)
    if scheme == "asymmetric_cifar10":
        if k != 10:
            raise ValueError("the asymmetric CIFAR-10 scheme needs 10 classes")
        return noise.asymmetric_transition_cifar10(eta)
    if scheme == "superclass":
        return noise.superclass_transition(groups or noise.contiguous_partition(k, group_size), eta)
    raise ValueError(f"no transition matrix for scheme {scheme!r}")


def noisy_labels(cfg: ExperimentConfig, train_set, eta, seed, scheme=None):
    scheme = scheme or cfg.scheme
    if scheme == "external":
        return noise.load_external_labels(cfg.dataset.external_labels, len(train_set), train_set.k)
    t = transition_for(scheme, train_set.k, eta, cfg.groups, cfg.group_size)
    noise_seed = np.random.SeedSequence([int(seed), int(round(eta * 1e6)), 7]).generate_state(1)[0]
    return noise.apply_noise(train_set.labels, t, int(noise_seed))


# -- a single run -----------------------------------------------------------

def hyperparams_text(spec: LossSpec):
    hp = dict(spec.hyperparams())
    hp["lam"] = spec.lam
    return ";".join(f"{k}={v:g}" for k, v in hp.items())


def run_one(cfg, train_set, test_set, suite, eta, augment, spec, seed, scheme=None):
    """Train one configuration for one seed and evaluate it."""
    labels = noisy_labels(cfg, train_set, eta, seed, scheme)
    tcfg = replace(cfg.train, seed=int(seed))
    policy = cfg.policy if augment == "augmix" else None
    params, hist = train(train_set.with_labels(labels), tcfg, spec, policy)
    clean = evaluation.clean_error(params, test_set.images, test_set.labels)
    per_kind, m = evaluation.mce(params, suite, test_set.labels)
    report = RunReport(
        dataset=cfg.dataset.name, noise_scheme=scheme or cfg.scheme, eta=float(eta), augment=augment,
        loss_family=spec.family, hyperparams=hyperparams_text(spec), seed=int(seed),
        clean_error=clean, per_corruption=per_kind, mce=m,
    )
    return report, params, hist


# -- tuning -----------------------------------------------------------------

def tune_loss(cfg, entry: LossEntry, augment, train_set, test_set, suite, seed=None, epochs=None):
    """Grid-search the tunable params of ``entry`` at the tuning noise rate (symmetric noise).

    Returns ``(best_params, [(point, score), ...])``; scores are mCE.
    """
    seed = cfg.seeds[0] if seed is None else seed
    epochs = epochs or cfg.tune_epochs or cfg.train.epochs
    tcfg = replace(cfg, train=replace(cfg.train, epochs=int(epochs)))
    fixed = {k: v for k, v in entry.params.items() if v != "tune"}
    full = evaluation.SEARCH_SPACES[entry.family]
    space = {k: v for k, v in full.items() if k not in fixed}

    def score(point):
        spec = entry.spec({**fixed, **point})
        report, _, _ = run_one(tcfg, train_set, test_set, suite, cfg.tune_eta, augment, spec, seed,
                               scheme="symmetric")
        log.info("tune %s %s %s: mCE %.4f", augment, entry.family, point, report.mce)
        return report.mce

    return evaluation.grid_search(entry.family, score, space)


# -- grid runs --------------------------------------------------------------

_STATE = {}


def _job(job):
    cfg = _STATE["cfg"]
    eta, augment, spec, seed = job
    report, _, _ = run_one(cfg, _STATE["train"], _STATE["test"], _STATE["suite"], eta, augment, spec, seed)
    return report


def _safe_job(job):
    try:
        return _job(job), None
    except Exception as exc:  # one failed cell must not abort the grid
        return None, f"{type(exc).__name__}: {exc}"


def results_header(kinds):
    return BASE_COLUMNS + list(kinds) + ["timestamp"]


def report_row(report: RunReport, kinds, timestamp=""):
    row = [report.dataset, report.noise_scheme, f"{report.eta:g}", report.augment, report.loss_family,
           report.hyperparams, str(report.seed), f"{report.clean_error:.6f}", f"{report.mce:.6f}"]
    row += [f"{report.per_corruption[k]:.6f}" for k in kinds]
    return row + [timestamp]


def write_results_csv(path, reports, kinds, timestamps=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(results_header(kinds))
    for i, r in enumerate(reports):
        w.writerow(report_row(r, kinds, timestamps[i] if timestamps else ""))
    _atomic_write(Path(path), buf.getvalue())


def read_results_csv(path):
    """RunReports from a results.csv (the timestamp column is ignored)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:len(BASE_COLUMNS)] != BASE_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    kinds = [h for h in header[len(BASE_COLUMNS):] if h != "timestamp"]
    reports = []
    for line, row in enumerate(rows[1:], start=2):
        rec = dict(zip(header, row))
        try:
            reports.append(RunReport(
                dataset=rec["dataset"], noise_scheme=rec["noise_scheme"], eta=float(rec["eta"]),
                augment=rec["augment"], loss_family=rec["loss_family"], hyperparams=rec["hyperparams"],
                seed=int(rec["seed"]), clean_error=float(rec["clean_error"]),
                per_corruption={k: float(rec[k]) for k in kinds},
            ))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{line}: {exc}") from None
    return reports, kinds


def _atomic_write(path, text):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def summary_dict(reports):
    aggs = evaluation.summarize(reports)
    out = {}
    for key, agg in sorted(aggs.items(), key=lambda kv: tuple(map(str, kv[0]))):
        name = "|".join(f"{f}={v:g}" if isinstance(v, float) else f"{f}={v}"
                        for f, v in zip(evaluation.FINGERPRINT, key))
        out[name] = {
            "fingerprint": dict(zip(evaluation.FINGERPRINT, key)),
            "n_seeds": agg.n_seeds,
            "clean_error": {"mean": agg.clean_error_mean, "std": agg.clean_error_std},
            "mce": {"mean": agg.mce_mean, "std": agg.mce_std},
            "mean": agg.mce_mean,
            "std": agg.mce_std,
            "std_defined": agg.std_defined,
            "noisy_avg": agg.noisy_avg,
            "n_corruptions": agg.n_corruptions,
        }
    return out


def write_report(out_dir, plot=True):
    """Fold ``results.csv`` into ``summary.json`` (and ``methods.svg`` when plotting)."""
    out_dir = Path(out_dir)
    reports, _ = read_results_csv(out_dir / "results.csv")
    summary = summary_dict(reports)
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plot and reports:
        plot_method_types(evaluation.summarize(reports), out_dir / "methods.svg")
    return summary


def plot_method_types(aggs, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scores = evaluation.method_type_scores(aggs)
    types = ["NoAug+CE", "NoAug+Robust", "AugMix+CE", "AugMix+Robust"]
    settings = sorted(scores)
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(settings), 3.2))
    width = 0.2
    for i, t in enumerate(types):
        vals = [100 * scores[s].get(t, math.nan) for s in settings]
        ax.bar(np.arange(len(settings)) + (i - 1.5) * width, vals, width, label=t)
    ax.set_xticks(np.arange(len(settings)), [f"{d}\n{s}" for d, s in settings])
    ax.set_ylabel("noisy-average mCE (%)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def expand_jobs(cfg, resolved_losses):
    """Every (eta, augment, spec, seed) grid cell in a fixed order."""
    jobs = []
    for eta in cfg.etas:
        for aug in cfg.augments:
            for spec in resolved_losses[aug]:
                for seed in cfg.seeds:
                    jobs.append((eta, aug, spec, seed))
    return jobs


def run(cfg: ExperimentConfig, out_dir, force=False, jobs=1, seed_offset=0, plot=False):
    """Run the full grid into ``out_dir``; returns ``(reports, failures)``.

    Refuses to touch a directory that already holds results unless ``force``.
    """
    out_dir = Path(out_dir)
    if (out_dir / "results.csv").exists() and not force:
        raise FileExistsError(f"{out_dir} already holds results.csv; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    if seed_offset:
        cfg = replace(cfg, seeds=[s + seed_offset for s in cfg.seeds])
    _atomic_write(out_dir / "config.json", json.dumps(config_snapshot(cfg), indent=2, sort_keys=True) + "\n")
    train_set, test_set = load_data(cfg.dataset)
    suite = corruptions.build_corrupted_suite(test_set.images, cfg.corruption_kinds, cfg.corruption_seed)

    resolved = {}
    tuning = {}
    for aug in cfg.augments:
        resolved[aug] = []
        for entry in cfg.losses:
            if entry.tuned:
                best, scores = tune_loss(cfg, entry, aug, train_set, test_set, suite)
                tuning[f"{aug}/{entry.family}"] = {"best": best, "scores": [[p, s] for p, s in scores]}
                resolved[aug].append(entry.spec(best))
            else:
                resolved[aug].append(entry.spec())
    if tuning:
        _atomic_write(out_dir / "tuning.json", json.dumps(tuning, indent=2, sort_keys=True) + "\n")

    cells = expand_jobs(cfg, resolved)
    _STATE.update(cfg=cfg, train=train_set, test=test_set, suite=suite)
    if jobs > 1:
        import multiprocessing as mp
        with ProcessPoolExecutor(jobs, mp_context=mp.get_context("fork")) as pool:
            outcomes = list(pool.map(_safe_job, cells))
    else:
        outcomes = [_safe_job(c) for c in cells]

    reports, stamps, failures = [], [], []
    for (eta, aug, spec, seed), (report, err) in zip(cells, outcomes):
        if err is None:
            reports.append(report)
            stamps.append(time.strftime("%Y-%m-%dT%H:%M:%S"))
        else:
            log.error("run eta=%g %s %s seed=%d failed: %s", eta, aug, spec.label(), seed, err)
            failures.append({"eta": eta, "augment": aug, "loss": spec.label(), "seed": seed, "error": err})
    write_results_csv(out_dir / "results.csv", reports, cfg.corruption_kinds, stamps)
    if failures:
        _atomic_write(out_dir / "failures.json", json.dumps(failures, indent=2) + "\n")
    write_report(out_dir, plot=plot)
    return reports, failures


def default_out_dir(cli_value=None, cfg=None):
    return cli_value or (cfg.out if cfg is not None and cfg.out else None) or os.environ.get("AUGLOSS_OUT") or "augloss-out"


def config_snapshot(cfg):
    """The resolved config as plain JSON-ready data."""
    return asdict(cfg)
