"""Mini-batch training with Adam and validation-based checkpoint selection."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import model
from .core import binary_preference
from .errors import DegenerateInputError, NumericError
from .model import ArchitectureConfig
from .objectives import ObjectiveConfig

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "lr", "loss_total", "loss_acc", "loss_div", "val_srcc")


@dataclass(frozen=True)
class TrainConfig:
    arch: ArchitectureConfig
    objective: ObjectiveConfig = ObjectiveConfig()
    batch_size: int = 16
    epochs: int = 12
    initial_lr: float = 1e-4
    lr_halving: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 0.0  # 0 disables global-norm clipping
    selection_metric: str = "srcc"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be > 0")
        if self.selection_metric not in ("srcc", "plcc"):
            raise ValueError("selection_metric must be 'srcc' or 'plcc'")

    def lr_at(self, epoch):
        """Learning rate of 1-based ``epoch``."""
        if self.lr_halving:
            return self.initial_lr * 0.5 ** (epoch - 1)
        return self.initial_lr


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_total: float
    loss_acc: float
    loss_div: float
    val_srcc: float
    seconds: float = 0.0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0

    def to_lines(self):
        """Plain-text history, one tab-separated record per epoch.

        Field order follows ``HISTORY_FIELDS``; wall-clock times are not
        written so that identical runs give identical files.
        """
        lines = ["#" + "\t".join(HISTORY_FIELDS)]
        for r in self.records:
            lines.append(
                f"{r.epoch}\t{r.lr!r}\t{r.loss_total!r}\t{r.loss_acc!r}\t"
                f"{r.loss_div!r}\t{r.val_srcc!r}"
            )
        return lines


# -- pair construction -----------------------------------------------------------


def make_labeled_pairs(mos, seed):
    """One pair per anchor, partner drawn uniformly among the other samples.

    ``mos`` holds the opinion scores of the labeled pool. Returns index
    arrays ``(first, second)`` in shuffled anchor order and the binary
    preference labels.
    """
    mos = np.asarray(mos, dtype=float)
    n = len(mos)
    if n < 2:
        raise ValueError("need at least two labeled samples to form pairs")
    rng = np.random.default_rng(seed)
    first = rng.permutation(n)
    # offset in [1, n-1] never maps an anchor onto itself
    second = (first + rng.integers(1, n, size=n)) % n
    labels = binary_preference(mos[first], mos[second])
    return first, second, np.atleast_1d(labels)


def make_unlabeled_pairs(n_samples, count, seed):
    """``count`` uniformly random pairs of distinct indices into a pool."""
    if n_samples < 2:
        raise ValueError("need at least two unlabeled samples to form pairs")
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = np.random.default_rng(seed)
    first = rng.integers(0, n_samples, size=count)
    second = (first + rng.integers(1, n_samples, size=count)) % n_samples
    return first, second


# -- optimiser -------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(params):
    return AdamState(
        {k: np.zeros_like(v) for k, v in params.weights.items()},
        {k: np.zeros_like(v) for k, v in params.weights.items()},
    )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of ``params.weights`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}", path=name)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        params.weights[name] = np.asarray(params.weights[name] - step)
    return params, state


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


# -- training loop ---------------------------------------------------------------


def _validation_score(params, val_features, val_mos, metric):
    from .evaluation import plcc_with_logistic, srcc

    preds = model.predict(params, val_features).mean(axis=1)
    if metric == "plcc":
        return plcc_with_logistic(preds, val_mos)[0]
    return srcc(preds, val_mos)


def train(config, labeled, unlabeled, validation, init_params=None, callback=None):
    """Optimise the semi-supervised objective and keep the best epoch.

    ``labeled`` and ``validation`` are ``(features, mos)`` tuples;
    ``unlabeled`` is a feature array (or ``None``). Every epoch draws fresh
    labeled pairs and an equal number of unlabeled pairs, steps through
    them in mini-batches of ``batch_size`` pairs each, halves the learning
    rate afterwards (if enabled) and scores the validation set in
    inference mode. Returns ``(best_params, history)``.

    ``init_params`` replaces the seeded initialisation (it is copied, not
    modified). ``callback(epoch, params, record)`` runs after each epoch.
    """
    lab_feat, lab_mos = (np.asarray(a, dtype=float) for a in labeled)
    val_feat, val_mos = (np.asarray(a, dtype=float) for a in validation)
    if len(lab_feat) < 2:
        raise ValueError("labeled training set needs at least two samples")
    if len(val_feat) == 0:
        raise ValueError("validation set is empty")
    unl_feat = None
    if unlabeled is not None and len(unlabeled) >= 2:
        unl_feat = np.asarray(unlabeled, dtype=float)

    obj = config.objective
    if init_params is not None:
        if init_params.arch != config.arch:
            raise ValueError("init_params architecture differs from config.arch")
        params = init_params.copy()
    else:
        params = model.init(config.arch, config.seed)
    state = adam_init(params)
    history = TrainHistory()
    best_score, best_params = -np.inf, None
    seeds = np.random.SeedSequence(config.seed).spawn(2 * config.epochs)
    bs = config.batch_size

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        first, second, labels = make_labeled_pairs(lab_mos, seeds[2 * epoch - 2])
        n_pairs = len(first)
        if unl_feat is not None:
            ufirst, usecond = make_unlabeled_pairs(len(unl_feat), n_pairs, seeds[2 * epoch - 1])

        sums = np.zeros(3)
        for start in range(0, n_pairs, bs):
            sl = slice(start, start + bs)
            if unl_feat is not None:
                ux, uy = unl_feat[ufirst[sl]], unl_feat[usecond[sl]]
            else:
                ux = uy = None
            result, grads, trace = model.loss_and_grad(
                params, lab_feat[first[sl]], lab_feat[second[sl]], labels[sl], ux, uy, obj
            )
            if not np.isfinite(result.total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, pair {start}: "
                    f"acc={result.acc!r} div={result.div!r}",
                    path="loss",
                )
            model.commit_running_stats(params, trace)
            if config.clip_norm > 0:
                grads = _clip(grads, config.clip_norm)
            adam_step(params, grads, state, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
            sums += len(first[sl]) * np.array([result.total, result.acc, result.div])

        loss_total, loss_acc, loss_div = sums / n_pairs
        try:
            val = _validation_score(params, val_feat, val_mos, config.selection_metric)
        except DegenerateInputError:
            val = float("nan")  # constant predictions; never selected over a real score
        record = EpochRecord(
            epoch, lr, float(loss_total), float(loss_acc), float(loss_div), float(val),
            time.perf_counter() - t0,
        )
        history.records.append(record)
        log.info(
            "epoch %d lr=%.3g loss=%.5f acc=%.5f div=%.5f val=%.4f",
            epoch, lr, loss_total, loss_acc, loss_div, val,
        )
        score = val if np.isfinite(val) else -np.inf
        if best_params is None or score > best_score:
            best_score, best_params = score, params.copy()
            history.best_epoch = epoch
        if callback is not None:
            callback(epoch, params, record)

    return best_params, history
