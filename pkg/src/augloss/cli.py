"""Command line entry point: ``augloss <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path


from . import augment, corruptions, data, evaluation, experiment, model, noise
from .experiment import ConfigError, LossEntry

log = logging.getLogger("augloss")


def _out_dir(args, cfg=None):
    return Path(experiment.default_out_dir(args.out, cfg))


def _load(args):
    return experiment.load_config(args.config) if args.config else experiment.ExperimentConfig()


def _parse_params(items):
    params = {}
    for item in items or []:
        key, _, value = item.partition("=")
        if not _:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        params[key.strip()] = value if value == "tune" else float(value)
    return params


def cmd_run(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    try:
        reports, failures = experiment.run(cfg, out, force=args.force, jobs=args.jobs,
                                           seed_offset=args.seed_offset, plot=not args.no_plot)
    except FileExistsError as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return 2
    print(f"{len(reports)} runs written to {out / 'results.csv'}; {len(failures)} failed")
    return 1 if failures else 0


def cmd_gen_noise(args):
    if args.scheme == "asymmetric_cifar10":
        k = 10
    else:
        k = args.k
    groups = json.loads(args.groups) if args.groups else None
    t = experiment.transition_for(args.scheme, k, args.eta, groups, args.group_size)
    if args.out is None and args.labels is None:
        noise.write_matrix_csv(sys.stdout, t)
        return 0
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    noise.write_matrix_csv(out / "transition.csv", t)
    if args.labels:
        clean = noise.load_external_labels(args.labels, args.n, k)
        noisy = noise.apply_noise(clean, t, args.seed)
        noise.write_labels_csv(out / "noisy_labels.csv", noisy)
        print(f"realized flip fraction {noise.flip_fraction(clean, noisy):.4f} at eta={args.eta:g}")
    return 0


def cmd_augment_preview(args):
    if args.image:
        x = data.read_ppm(args.image)
    else:
        x = data.templates(10, args.side)[args.glyph]
    policy = augment.AugmentPolicy(severity=args.severity)
    tup = augment.augment_tuple(x, policy, args.seed)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in zip(tup._fields, tup):
        data.write_ppm(out / f"{name}.ppm", img)
    print(f"wrote orig/aug1/aug2 previews to {out}")
    return 0


def _single_spec(args):
    entry = LossEntry(args.loss, _parse_params(args.param), args.lam)
    if entry.tuned:
        raise ConfigError("train/eval need fixed hyperparameters; use `sweep` to tune")
    return entry.spec()


def cmd_train(args):
    cfg = _load(args)
    if args.epochs:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    out = _out_dir(args, cfg)
    ckpt = out / "model.agls"
    if ckpt.exists() and not args.force:
        print(f"refusing to overwrite {ckpt}; pass --force", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    train_set, _ = experiment.load_data(cfg.dataset)
    labels = experiment.noisy_labels(cfg, train_set, args.eta, args.seed)
    tcfg = replace(cfg.train, seed=args.seed)
    policy = cfg.policy if args.augment == "augmix" else None
    params, hist = model.train(train_set.with_labels(labels), tcfg, _single_spec(args), policy,
                               log=log.info)
    model.save_checkpoint(ckpt, params)
    hist.to_csv(out / "history.csv")
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_eval(args):
    cfg = _load(args)
    params = model.load_checkpoint(args.checkpoint)
    _, test_set = experiment.load_data(cfg.dataset)
    suite = corruptions.build_corrupted_suite(test_set.images, cfg.corruption_kinds, cfg.corruption_seed)
    spec = _single_spec(args)
    clean = evaluation.clean_error(params, test_set.images, test_set.labels)
    per_kind, m = evaluation.mce(params, suite, test_set.labels)
    report = evaluation.RunReport(
        dataset=cfg.dataset.name, noise_scheme=cfg.scheme, eta=args.eta, augment=args.augment,
        loss_family=spec.family, hyperparams=experiment.hyperparams_text(spec), seed=args.seed,
        clean_error=clean, per_corruption=per_kind, mce=m,
    )
    text = json.dumps(asdict(report), indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_sweep(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    target = out / f"sweep_{args.family}_{args.augment}.json"
    if target.exists() and not args.force:
        print(f"refusing to overwrite {target}; pass --force", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = experiment.load_data(cfg.dataset)
    suite = corruptions.build_corrupted_suite(test_set.images, cfg.corruption_kinds, cfg.corruption_seed)
    params = {name: "tune" for name in evaluation.SEARCH_SPACES[args.family]}
    entry = LossEntry(args.family, params, args.lam)
    best, scores = experiment.tune_loss(cfg, entry, args.augment, train_set, test_set, suite,
                                        seed=args.seed, epochs=args.epochs)
    result = {"family": args.family, "augment": args.augment, "eta": cfg.tune_eta, "seed": args.seed,
              "best": best, "scores": [{"point": p, "mce": s} for p, s in scores]}
    target.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"best": best}))
    return 0


def cmd_report(args):
    out = _out_dir(args)
    summary = experiment.write_report(out, plot=not args.no_plot)
    print(f"summarized {len(summary)} configurations into {out / 'summary.json'}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="augloss", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--out", help="output directory (default: $AUGLOSS_OUT)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    def single(sp):
        sp.add_argument("--eta", type=float, default=0.0)
        sp.add_argument("--augment", choices=experiment.AUGMENTS, default="noaug")
        sp.add_argument("--loss", choices=("ce", "focal", "nce_rce", "alpha"), default="ce")
        sp.add_argument("--param", action="append", metavar="KEY=VALUE", help="loss hyperparameter")
        sp.add_argument("--lam", type=float, default=12.0)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("run", help="run a full experiment grid")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed-offset", type=int, default=0)
    sp.add_argument("--no-plot", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("gen-noise", help="emit a transition matrix and optionally noisy labels")
    common(sp, config=False)
    sp.add_argument("--scheme", choices=("symmetric", "asymmetric_cifar10", "superclass"), required=True)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--eta", type=float, required=True)
    sp.add_argument("--groups", help="superclass partition as JSON, e.g. [[0,1],[2,3]]")
    sp.add_argument("--group-size", type=int, default=5)
    sp.add_argument("--labels", help="clean index,label CSV to corrupt")
    sp.add_argument("--n", type=int, help="number of rows in --labels")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_noise)

    sp = sub.add_parser("augment-preview", help="write orig/aug1/aug2 PPM images")
    common(sp, config=False)
    sp.add_argument("--image", help="input PPM; default is a synthetic glyph")
    sp.add_argument("--glyph", type=int, default=9)
    sp.add_argument("--side", type=int, default=32)
    sp.add_argument("--severity", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_augment_preview)

    sp = sub.add_parser("train", help="train one configuration and write a checkpoint")
    common(sp)
    single(sp)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on clean and corrupted test data")
    common(sp)
    single(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="grid-search one loss family at the tuning noise rate")
    common(sp)
    sp.add_argument("--family", choices=tuple(evaluation.SEARCH_SPACES), required=True)
    sp.add_argument("--augment", choices=experiment.AUGMENTS, default="augmix")
    sp.add_argument("--lam", type=float, default=12.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, help="reduced-epoch tuning")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="fold results.csv into summary.json and methods.svg")
    common(sp, config=False)
    sp.add_argument("--no-plot", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
