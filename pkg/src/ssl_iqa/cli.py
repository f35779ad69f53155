"""Command-line entry point: ``ssl-iqa <command> ...``.

On failure a single line ``error<TAB><kind><TAB><message>`` goes to
stderr and the exit status is 1.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import model
from .data import SyntheticSpec, atomic_write_text, generate_synthetic, load_dataset
from .evaluation import (
    evaluate,
    format_gmad,
    format_ranking,
    format_report,
    format_scores,
    gmad_pairs,
    parse_scores,
    spot_failures,
)
from .experiment import (
    build_config,
    input_dim_of,
    load_inputs,
    read_config,
    run_experiment,
    train_repeat,
    write_synthetic,
)


def _read_scores(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scores(fh.read(), path)


def cmd_generate(args):
    kw = {}
    if args.config:
        cfg = build_config(read_config(args.config), os.path.dirname(os.path.abspath(args.config)))
        if cfg.synthetic is None:
            raise ValueError(f"{args.config} has no [synthetic] section")
        spec = cfg.synthetic
    else:
        for name in ("n_labeled", "n_unlabeled", "feature_dim", "nonlinearity", "noise_std",
                     "ood_fraction", "ood_shift", "seed"):
            value = getattr(args, name)
            if value is not None:
                kw[name] = value
        if args.pool_only_ood:
            kw["ood_in_labeled"] = False
        spec = SyntheticSpec(**kw)
    write_synthetic(generate_synthetic(spec), spec, args.out)


def cmd_train(args):
    path = args.config
    raw = read_config(path)
    base = os.path.dirname(os.path.abspath(path))
    cfg = build_config(raw, base, input_dim_of(raw, base))
    inputs = load_inputs(cfg)
    params, history, _ = train_repeat(cfg, inputs, args.repeat)
    os.makedirs(args.out, exist_ok=True)
    model.save_checkpoint(params, os.path.join(args.out, "checkpoint.bin"))
    atomic_write_text(os.path.join(args.out, "history.tsv"), "\n".join(history.to_lines()) + "\n")


def _dataset_and_mos(path, mos_path):
    ds = load_dataset(path)
    mos = ds.mos_map()
    if mos_path:
        mos.update(_read_scores(mos_path))
    return ds, mos


def cmd_eval(args):
    params = model.load_checkpoint(args.checkpoint)
    ds, mos = _dataset_and_mos(args.dataset, args.mos)
    preds = model.predict(params, ds.features).mean(axis=1)
    if args.scores:
        atomic_write_text(args.scores, format_scores(dict(zip(ds.ids, preds))))
    keep = [i for i, sid in enumerate(ds.ids) if sid in mos]
    report = evaluate(preds[keep], np.array([mos[ds.ids[i]] for i in keep]))
    atomic_write_text(args.out, format_report(report.as_records()))


def cmd_spot(args):
    params = model.load_checkpoint(args.checkpoint)
    ds = load_dataset(args.pool)
    ranking = spot_failures(params, ds.ids, ds.features, args.k)
    atomic_write_text(args.out, format_ranking(ranking))


def cmd_gmad(args):
    pairs = gmad_pairs(_read_scores(args.defender), _read_scores(args.attacker), args.levels)
    atomic_write_text(args.out, format_gmad(pairs))


def cmd_run(args):
    run_experiment(args.config, args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog="ssl-iqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic labeled/unlabeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="read the [synthetic] section of this config")
    p.add_argument("--n-labeled", dest="n_labeled", type=int)
    p.add_argument("--n-unlabeled", dest="n_unlabeled", type=int)
    p.add_argument("--dim", dest="feature_dim", type=int)
    p.add_argument("--nonlinearity", choices=("identity", "cube", "sigmoid"))
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--ood-fraction", dest="ood_fraction", type=float)
    p.add_argument("--ood-shift", dest="ood_shift", type=float)
    p.add_argument("--pool-only-ood", action="store_true", help="plant shifted samples only in the unlabeled pool")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one split repeat of a config")
    p.add_argument("config")
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="SRCC/PLCC of a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--mos", help="score file with held-out opinion scores")
    p.add_argument("--scores", help="also write the ensemble scores here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spot", help="rank a pool by head disagreement")
    p.add_argument("checkpoint")
    p.add_argument("pool")
    p.add_argument("k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("gmad", help="gMAD pairs from two score files")
    p.add_argument("defender")
    p.add_argument("attacker")
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gmad)

    p = sub.add_parser("run", help="full repeated-split experiment from a config")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except Exception as exc:
        message = " ".join(str(exc).split())
        print(f"error\t{type(exc).__name__}\t{message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
