"""Training objectives for the multi-head ranker.

Score arrays are laid out as ``(n_pairs, n_heads)``: row ``b`` holds the
head scores of the first (``x``) or second (``y``) image of pair ``b``.
Each loss has a ``*_with_grad`` twin returning the value together with
the gradient w.r.t. its score inputs; the model backpropagates those.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from .core import clamped_gap_prob, fidelity_grad, fidelity_loss

DIVERSITY_VARIANTS = ("pairwise_fidelity", "variance", "to_ensemble")


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 1.0
    gamma: float = 0.06
    diversity: str = "pairwise_fidelity"
    include_labeled_in_diversity: bool = True

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.diversity not in DIVERSITY_VARIANTS:
            raise ValueError(
                f"unknown diversity variant {self.diversity!r}; "
                f"expected one of {DIVERSITY_VARIANTS}"
            )


def _pair_scores(scores_x, scores_y):
    sx = np.atleast_2d(np.asarray(scores_x, dtype=float))
    sy = np.atleast_2d(np.asarray(scores_y, dtype=float))
    if sx.shape != sy.shape:
        raise ValueError(f"score shapes differ: {sx.shape} vs {sy.shape}")
    if sx.shape[0] == 0:
        raise ValueError("empty pair batch")
    return sx, sy


def _fid(a, b):
    # fidelity loss without the range validation of core.fidelity_loss
    return np.clip(1.0 - np.sqrt(a * b) - np.sqrt((1.0 - a) * (1.0 - b)), 0.0, 1.0)


# -- accuracy on labeled pairs ------------------------------------------------


def accuracy_loss_with_grad(scores_x, scores_y, labels, lam=1.0):
    sx, sy = _pair_scores(scores_x, scores_y)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    n_pairs, n_heads = sx.shape
    if labels.shape[0] != n_pairs:
        raise ValueError("one label per pair required")
    if np.any((labels < 0) | (labels > 1)):
        raise ValueError("labels must lie in [0, 1]")

    gaps = sx - sy
    ens_prob, ens_dprob = clamped_gap_prob(gaps.mean(axis=1))
    head_prob, head_dprob = clamped_gap_prob(gaps)
    lab = labels[:, None]

    per_pair = _fid(labels, ens_prob) + (lam / n_heads) * _fid(lab, head_prob).sum(axis=1)
    loss = per_pair.mean()

    # d(ensemble gap)/d(head gap) = 1/M
    d_ens = fidelity_grad(labels, ens_prob) * ens_dprob / n_heads
    d_heads = (lam / n_heads) * fidelity_grad(lab, head_prob) * head_dprob
    d_gap = (d_ens[:, None] + d_heads) / n_pairs
    return float(loss), d_gap, -d_gap


def accuracy_loss(scores_x, scores_y, labels, lam=1.0):
    """Ensemble fidelity loss plus ``lam`` times the mean per-head loss.

    Averaged over pairs. The ensemble probability applies the Thurstone
    model to the averaged head scores.
    """
    return accuracy_loss_with_grad(scores_x, scores_y, labels, lam)[0]


# -- diversity on (unlabeled) pairs -------------------------------------------


def diversity_pairwise(pair_probs):
    """Negative mean fidelity loss over all unordered pairs of heads.

    ``pair_probs`` has shape ``(n_pairs, n_heads)`` and holds each head's
    probability that x beats y. Result lies in [-1, 0].
    """
    probs = np.atleast_2d(np.asarray(pair_probs, dtype=float))
    n_pairs, n_heads = probs.shape
    if n_heads < 2:
        raise ValueError("pairwise diversity needs at least two heads")
    if n_pairs == 0:
        raise ValueError("empty pair batch")
    i, j = np.triu_indices(n_heads, k=1)
    total = fidelity_loss(probs[:, i], probs[:, j]).sum()
    return -float(total) / (comb(n_heads, 2) * n_pairs)


def diversity_pairwise_with_grad(scores_x, scores_y):
    sx, sy = _pair_scores(scores_x, scores_y)
    n_pairs, n_heads = sx.shape
    if n_heads < 2:
        raise ValueError("pairwise diversity needs at least two heads")
    prob, dprob = clamped_gap_prob(sx - sy)
    i, j = np.triu_indices(n_heads, k=1)
    norm = comb(n_heads, 2) * n_pairs
    value = -_fid(prob[:, i], prob[:, j]).sum() / norm

    # dl(a, b)/da summed over every partner b != a
    a = prob[:, :, None]
    b = prob[:, None, :]
    partial = fidelity_grad(b, a)
    idx = np.arange(n_heads)
    partial[:, idx, idx] = 0.0
    d_prob = -partial.sum(axis=2) / norm
    d_gap = d_prob * dprob
    return float(value), d_gap, -d_gap


def diversity_variance(sample_scores):
    """Negative spread of head scores around their mean, averaged over samples.

    ``sample_scores`` has shape ``(n_samples, n_heads)``. Always <= 0.
    """
    scores = np.atleast_2d(np.asarray(sample_scores, dtype=float))
    if scores.shape[0] == 0:
        raise ValueError("empty sample batch")
    dev = scores - scores.mean(axis=1, keepdims=True)
    return -float((dev * dev).mean(axis=1).mean())


def diversity_variance_with_grad(scores_x, scores_y):
    """Prediction-variance diversity over every image appearing in the pairs."""
    sx, sy = _pair_scores(scores_x, scores_y)
    scores = np.concatenate([sx, sy], axis=0)
    n_samples, n_heads = scores.shape
    dev = scores - scores.mean(axis=1, keepdims=True)
    value = -(dev * dev).mean(axis=1).mean()
    d_scores = -2.0 * dev / (n_heads * n_samples)
    return float(value), d_scores[: len(sx)], d_scores[len(sx):]


def diversity_to_ensemble(pair_probs, ensemble_probs):
    """Negative mean fidelity loss between each head and the ensemble.

    ``ensemble_probs`` (one per pair) should come from the Thurstone model
    on averaged scores. Result lies in [-1, 0].
    """
    probs = np.atleast_2d(np.asarray(pair_probs, dtype=float))
    ens = np.asarray(ensemble_probs, dtype=float).reshape(-1)
    if probs.shape[0] == 0:
        raise ValueError("empty pair batch")
    if ens.shape[0] != probs.shape[0]:
        raise ValueError("one ensemble probability per pair required")
    return -float(fidelity_loss(probs, ens[:, None]).mean())


def diversity_to_ensemble_with_grad(scores_x, scores_y):
    sx, sy = _pair_scores(scores_x, scores_y)
    n_pairs, n_heads = sx.shape
    gaps = sx - sy
    prob, dprob = clamped_gap_prob(gaps)
    ens, dens = clamped_gap_prob(gaps.mean(axis=1))
    value = -_fid(prob, ens[:, None]).mean()

    norm = n_pairs * n_heads
    d_prob = -fidelity_grad(ens[:, None], prob) / norm
    d_ens = -fidelity_grad(prob, ens[:, None]).sum(axis=1) / norm
    d_gap = d_prob * dprob + (d_ens * dens / n_heads)[:, None]
    return float(value), d_gap, -d_gap


_DIVERSITY_WITH_GRAD = {
    "pairwise_fidelity": diversity_pairwise_with_grad,
    "variance": diversity_variance_with_grad,
    "to_ensemble": diversity_to_ensemble_with_grad,
}


def diversity_with_grad(scores_x, scores_y, variant="pairwise_fidelity"):
    try:
        fn = _DIVERSITY_WITH_GRAD[variant]
    except KeyError:
        raise ValueError(f"unknown diversity variant {variant!r}") from None
    return fn(scores_x, scores_y)


# -- combination ----------------------------------------------------------------


def semi_loss(acc, div, gamma):
    if not gamma >= 0:
        raise ValueError("gamma must be >= 0")
    return acc + gamma * div


def prob_average(pair_probs):
    """Alternative ensemble probability: the plain mean of head probabilities."""
    probs = np.asarray(pair_probs, dtype=float)
    if probs.size == 0:
        raise ValueError("need at least one head probability")
    out = probs.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass
class ObjectiveResult:
    total: float
    acc: float
    div: float
    d_lab_x: np.ndarray
    d_lab_y: np.ndarray
    d_div_x: np.ndarray
    d_div_y: np.ndarray


def semi_objective(lab_x, lab_y, labels, div_x, div_y, config):
    """Full objective and its gradient w.r.t. every score array.

    ``div_x``/``div_y`` are the head scores of the pairs the diversity term
    is computed on. With no diversity pairs, or a single head under the
    pairwise variant (no head pairs exist), the diversity term is zero.
    """
    acc, d_lab_x, d_lab_y = accuracy_loss_with_grad(lab_x, lab_y, labels, config.lam)
    div_x = np.asarray(div_x, dtype=float)
    div_y = np.asarray(div_y, dtype=float)
    n_heads = np.atleast_2d(np.asarray(lab_x)).shape[1]
    if div_x.size == 0 or (config.diversity == "pairwise_fidelity" and n_heads < 2):
        div = 0.0
        d_div_x = np.zeros_like(div_x)
        d_div_y = np.zeros_like(div_y)
    else:
        div, d_div_x, d_div_y = diversity_with_grad(div_x, div_y, config.diversity)
        d_div_x = config.gamma * d_div_x
        d_div_y = config.gamma * d_div_y
    total = semi_loss(acc, div, config.gamma)
    return ObjectiveResult(total, acc, div, d_lab_x, d_lab_y, d_div_x, d_div_y)
