"""Config-driven experiments: repeated splits, sweeps, reports on disk.

Configs are INI files (``key = value`` under ``[section]`` headers)::

    [data]            labeled, unlabeled, unlabeled_mos   (paths)
    [synthetic]       SyntheticSpec fields; used when [data] is absent
    [arch]            shared_layer_widths, head_layer_widths, num_heads
    [objective]       lam, gamma, diversity, include_labeled_in_diversity
    [train]           batch_size, epochs, initial_lr, lr_halving, seed, ...
    [split]           fractions, seeds
    [analysis]        spot_k, gmad_levels, gmad_reference, random_draws
    [sweep]           <section>.<key> = v1, v2, ...
    [output]          dir

Relative paths resolve against the config file's directory. Every value
that is a list is comma-separated. A ``[sweep]`` with several keys runs
their cartesian product.
"""

import configparser
import itertools
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import model
from .data import (
    SplitSpec,
    SyntheticSpec,
    atomic_write_text,
    describe_synthetic,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
)
from .evaluation import (
    evaluate,
    format_gmad,
    format_ranking,
    format_report,
    format_scores,
    gmad_pairs,
    parse_scores,
    random_subset_report,
    spot_failures,
)
from .model import ArchitectureConfig
from .objectives import ObjectiveConfig
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

SUMMARY_METRICS = (
    "test_srcc", "test_plcc", "pool_srcc", "pool_plcc",
    "spot_srcc", "spot_plcc", "random_srcc", "random_plcc",
)


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _coerce(cls, section, converters):
    """Build dataclass ``cls`` from string values, converting by field type."""
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in section.items():
        if key not in names:
            raise ValueError(f"unknown key {key!r} for {cls.__name__}")
        kwargs[key] = converters.get(key, _auto)(value)
    return kwargs


def _auto(value):
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    low = value.strip().lower()
    if low in ("true", "false", "yes", "no", "on", "off"):
        return _bool(low)
    if low in ("none", ""):
        return None
    return value.strip()


@dataclass
class ExperimentConfig:
    train: TrainConfig
    split: SplitSpec
    labeled_path: Optional[str] = None
    unlabeled_path: Optional[str] = None
    unlabeled_mos_path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    spot_k: int = 0
    gmad_levels: int = 0
    gmad_reference: Optional[str] = None
    random_draws: int = 20
    output_dir: Optional[str] = None
    sweep: dict = field(default_factory=dict)


def read_config(path):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return {s: dict(parser[s]) for s in parser.sections()}


def build_config(raw, base_dir=".", input_dim=None):
    """Turn a ``{section: {key: str}}`` mapping into an :class:`ExperimentConfig`."""

    def path(value):
        if value is None or value == "":
            return None
        return value if os.path.isabs(value) else os.path.normpath(os.path.join(base_dir, value))

    data = raw.get("data", {})
    synthetic = None
    if "synthetic" in raw:
        kw = _coerce(SyntheticSpec, raw["synthetic"], {"ood_in_labeled": _bool, "nonlinearity": str.strip})
        synthetic = SyntheticSpec(**kw)
    if not data.get("labeled") and synthetic is None:
        raise ValueError("config needs [data] labeled = <path> or a [synthetic] section")

    arch_kw = _coerce(
        ArchitectureConfig,
        raw.get("arch", {}),
        {"shared_layer_widths": _ints, "head_layer_widths": _ints, "num_heads": int, "input_dim": int},
    )
    if input_dim is not None:
        arch_kw.setdefault("input_dim", input_dim)
    elif synthetic is not None:
        arch_kw.setdefault("input_dim", synthetic.feature_dim)
    arch_kw.setdefault("input_dim", 1)
    arch = ArchitectureConfig(**arch_kw)

    obj = ObjectiveConfig(**_coerce(
        ObjectiveConfig,
        raw.get("objective", {}),
        {"lam": float, "gamma": float, "diversity": str.strip, "include_labeled_in_diversity": _bool},
    ))
    train_kw = _coerce(
        TrainConfig,
        raw.get("train", {}),
        {"lr_halving": _bool, "initial_lr": float, "clip_norm": float,
         "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
         "selection_metric": str.strip},
    )
    for bad in ("arch", "objective"):
        if bad in train_kw:
            raise ValueError(f"[train] may not set {bad!r}")
    train_cfg = TrainConfig(arch=arch, objective=obj, **train_kw)

    split_sec = raw.get("split", {})
    split_kw = {}
    if "fractions" in split_sec:
        split_kw["fractions"] = _floats(split_sec["fractions"])
    if "seeds" in split_sec:
        split_kw["seeds"] = _ints(split_sec["seeds"])
    split_spec = SplitSpec(**split_kw)

    analysis = raw.get("analysis", {})
    sweep = {}
    for key, values in raw.get("sweep", {}).items():
        if "." not in key:
            raise ValueError(f"sweep key {key!r} must look like section.key")
        sweep[key] = [v.strip() for v in values.split(",") if v.strip()]

    return ExperimentConfig(
        train=train_cfg,
        split=split_spec,
        labeled_path=path(data.get("labeled")),
        unlabeled_path=path(data.get("unlabeled")),
        unlabeled_mos_path=path(data.get("unlabeled_mos")),
        synthetic=synthetic,
        spot_k=int(analysis.get("spot_k", 0)),
        gmad_levels=int(analysis.get("gmad_levels", 0)),
        gmad_reference=path(analysis.get("gmad_reference")),
        random_draws=int(analysis.get("random_draws", 20)),
        output_dir=path(raw.get("output", {}).get("dir")),
        sweep=sweep,
    )


def sweep_points(raw):
    """Yield ``(name, raw_config)`` for every grid point of the ``[sweep]`` section."""
    grid = {k: [v.strip() for v in vals.split(",") if v.strip()]
            for k, vals in raw.get("sweep", {}).items()}
    if not grid:
        yield "", raw
        return
    keys = list(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        point = {s: dict(v) for s, v in raw.items() if s != "sweep"}
        parts = []
        for key, value in zip(keys, combo):
            section, name = key.split(".", 1)
            point.setdefault(section, {})[name] = value
            parts.append(f"{name}={value}")
        yield ",".join(parts), point


@dataclass
class Inputs:
    labeled: object
    pool: object  # unlabeled training pool, scores stripped
    pool_mos: dict  # held-out scores for evaluation only


def load_inputs(cfg, out_dir=None):
    if cfg.labeled_path:
        labeled = load_dataset(cfg.labeled_path).labeled_only()
        pool, pool_mos = None, {}
        if cfg.unlabeled_path:
            pool, pool_mos = load_dataset(cfg.unlabeled_path, label_blind=True)
        if cfg.unlabeled_mos_path:
            with open(cfg.unlabeled_mos_path, encoding="utf-8") as fh:
                pool_mos.update(parse_scores(fh.read(), cfg.unlabeled_mos_path))
        return Inputs(labeled, pool, pool_mos)
    syn = generate_synthetic(cfg.synthetic)
    if out_dir is not None:
        write_synthetic(syn, cfg.synthetic, out_dir)
    pool = syn.unlabeled if len(syn.unlabeled) else None
    return Inputs(syn.labeled, pool, dict(syn.heldout_mos))


def write_synthetic(syn, spec, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    save_dataset(syn.labeled, os.path.join(out_dir, "labeled.tsv"))
    save_dataset(syn.unlabeled, os.path.join(out_dir, "unlabeled.tsv"))
    atomic_write_text(os.path.join(out_dir, "unlabeled_mos.tsv"), format_scores(syn.heldout_mos))
    atomic_write_text(os.path.join(out_dir, "latent.tsv"), format_scores(syn.latent))
    atomic_write_text(os.path.join(out_dir, "synthetic_spec.txt"), describe_synthetic(spec, syn))


def train_repeat(cfg, inputs, repeat):
    """Train on one split repeat; returns ``(params, history, (train, val, test))``."""
    tr, va, te = split(inputs.labeled, cfg.split, repeat)
    pool_features = inputs.pool.features if inputs.pool is not None else None
    params, history = train(
        replace(cfg.train, seed=cfg.train.seed + repeat),
        (tr.features, tr.mos),
        pool_features,
        (va.features, va.mos),
    )
    return params, history, (tr, va, te)


def run_repeat(cfg, inputs, repeat, out_dir):
    """One split repeat end to end. Returns a ``{metric: value}`` dict."""
    os.makedirs(out_dir, exist_ok=True)
    params, history, (_, _, te) = train_repeat(cfg, inputs, repeat)
    model.save_checkpoint(params, os.path.join(out_dir, "checkpoint.bin"))
    atomic_write_text(os.path.join(out_dir, "history.tsv"), "\n".join(history.to_lines()) + "\n")

    metrics = {}
    test_report = evaluate(model.predict(params, te.features).mean(axis=1), te.mos)
    atomic_write_text(os.path.join(out_dir, "report_test.tsv"), format_report(test_report.as_records()))
    metrics["test_srcc"], metrics["test_plcc"] = test_report.srcc, test_report.plcc

    pool = inputs.pool
    if pool is None:
        return metrics
    head_scores = model.predict(params, pool.features)
    ens = head_scores.mean(axis=1)
    atomic_write_text(os.path.join(out_dir, "scores_pool.tsv"), format_scores(dict(zip(pool.ids, ens))))

    scored = [i for i, pid in enumerate(pool.ids) if pid in inputs.pool_mos]
    pool_mos = np.array([inputs.pool_mos[pool.ids[i]] for i in scored])
    if len(scored) >= 5:
        report = evaluate(ens[scored], pool_mos)
        atomic_write_text(os.path.join(out_dir, "report_pool.tsv"), format_report(report.as_records()))
        metrics["pool_srcc"], metrics["pool_plcc"] = report.srcc, report.plcc

    if cfg.spot_k > 0:
        k = min(cfg.spot_k, len(pool))
        ranking = spot_failures(params, pool.ids, pool.features, k)
        atomic_write_text(os.path.join(out_dir, "spot.tsv"), format_ranking(ranking))
        pos = {pid: i for i, pid in enumerate(pool.ids)}
        chosen = [pos[i] for i in ranking.ids if i in inputs.pool_mos]
        if len(chosen) >= 5:
            mos = np.array([inputs.pool_mos[pool.ids[i]] for i in chosen])
            report = evaluate(ens[chosen], mos)
            atomic_write_text(os.path.join(out_dir, "report_spot.tsv"), format_report(report.as_records()))
            metrics["spot_srcc"], metrics["spot_plcc"] = report.srcc, report.plcc
            rnd = random_subset_report(ens[scored], pool_mos, len(chosen), seed=repeat, draws=cfg.random_draws)
            atomic_write_text(os.path.join(out_dir, "report_random.tsv"), format_report(list(rnd.items())))
            metrics["random_srcc"], metrics["random_plcc"] = rnd["srcc"], rnd["plcc"]

    if cfg.gmad_levels > 0 and cfg.gmad_reference:
        with open(cfg.gmad_reference, encoding="utf-8") as fh:
            reference = parse_scores(fh.read(), cfg.gmad_reference)
        ours = {pid: float(s) for pid, s in zip(pool.ids, ens) if pid in reference}
        reference = {pid: reference[pid] for pid in ours}
        atomic_write_text(
            os.path.join(out_dir, "gmad_reference_defends.tsv"),
            format_gmad(gmad_pairs(reference, ours, cfg.gmad_levels)),
        )
        atomic_write_text(
            os.path.join(out_dir, "gmad_model_defends.tsv"),
            format_gmad(gmad_pairs(ours, reference, cfg.gmad_levels)),
        )
    return metrics


def summarize(per_repeat, n_repeats):
    """Mean of each metric over completed repeats, plus completion counts."""
    done = [m for m in per_repeat if m is not None]
    records = [("repeats_completed", len(done)), ("repeats_failed", n_repeats - len(done))]
    for name in SUMMARY_METRICS:
        values = [m[name] for m in done if name in m]
        if values:
            records.append((name, float(np.mean(values))))
    return records


@dataclass
class PointResult:
    name: str
    out_dir: str
    per_repeat: list
    summary: list


def run_point(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    inputs = load_inputs(cfg, os.path.join(out_dir, "data") if cfg.synthetic and not cfg.labeled_path else None)
    per_repeat = []
    for repeat in range(len(cfg.split.seeds)):
        rdir = os.path.join(out_dir, f"repeat{repeat}")
        try:
            per_repeat.append(run_repeat(cfg, inputs, repeat, rdir))
        except Exception as exc:  # recorded, the remaining repeats still run
            log.exception("repeat %d failed", repeat)
            os.makedirs(rdir, exist_ok=True)
            atomic_write_text(os.path.join(rdir, "error.txt"), f"{type(exc).__name__}: {exc}\n")
            per_repeat.append(None)
    summary = summarize(per_repeat, len(cfg.split.seeds))
    atomic_write_text(os.path.join(out_dir, "summary.tsv"), format_report(summary))
    return PointResult(os.path.basename(out_dir), out_dir, per_repeat, summary)


def input_dim_of(raw, base_dir):
    labeled = raw.get("data", {}).get("labeled")
    if not labeled:
        return None
    p = labeled if os.path.isabs(labeled) else os.path.join(base_dir, labeled)
    return load_dataset(p).dim


def run_experiment(config_path, out_dir=None):
    """Run every sweep point of a config file; returns a list of :class:`PointResult`."""
    raw = read_config(config_path)
    base_dir = os.path.dirname(os.path.abspath(config_path))
    input_dim = input_dim_of(raw, base_dir)
    results = []
    root = None
    for name, point_raw in sweep_points(raw):
        cfg = build_config(point_raw, base_dir, input_dim)
        root = out_dir or cfg.output_dir
        if root is None:
            raise ValueError("no output directory: pass one or set [output] dir")
        point_dir = os.path.join(root, name) if name else root
        log.info("running %s", name or "experiment")
        results.append(run_point(cfg, point_dir))
    if len(results) > 1:
        header = "point\t" + "\t".join(SUMMARY_METRICS)
        rows = [header]
        for res in results:
            values = dict(res.summary)
            rows.append(res.name + "\t" + "\t".join(
                repr(values[m]) if m in values else "-" for m in SUMMARY_METRICS))
        atomic_write_text(os.path.join(root, "sweep_summary.tsv"), "\n".join(rows) + "\n")
    return results
