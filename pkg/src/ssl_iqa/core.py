"""Closed-form probabilistic primitives.

Everything here is a pure function. Scalar and array inputs are both
accepted; array inputs are evaluated element-wise.
"""

import math

import numpy as np
from scipy.special import ndtr

# Probabilities fed to the fidelity loss during optimisation are kept
# inside [PROB_EPS, 1 - PROB_EPS]; the loss gradient is singular at 0 and 1.
PROB_EPS = 1e-6

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_probability(p, name):
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def _unwrap(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def std_normal_cdf(z):
    """Standard normal CDF.

    Backed by ``scipy.special.ndtr``, which evaluates through erf/erfc
    (Cephes) and is accurate to a few ulp over the whole real line, so
    ``Phi(z) + Phi(-z) == 1`` holds to ~1e-16.
    """
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("std_normal_cdf requires finite input")
    return _unwrap(ndtr(arr))


def std_normal_pdf(z):
    arr = np.asarray(z, dtype=float)
    return _unwrap(_INV_SQRT_2PI * np.exp(-0.5 * arr * arr))


def fidelity_loss(target, pred):
    """Fidelity loss between two Bernoulli distributions.

    ``1 - sqrt(target*pred) - sqrt((1-target)*(1-pred))``. Zero iff the two
    distributions coincide, one for disjoint supports.
    """
    target = _check_probability(target, "target")
    pred = _check_probability(pred, "pred")
    loss = 1.0 - np.sqrt(target * pred) - np.sqrt((1.0 - target) * (1.0 - pred))
    # rounding can push identical arguments a hair below zero
    return _unwrap(np.clip(loss, 0.0, 1.0))


def fidelity_grad(target, pred):
    """Partial derivative of :func:`fidelity_loss` w.r.t. its second argument.

    The loss is symmetric, so ``fidelity_grad(pred, target)`` is the derivative
    w.r.t. the first one. ``pred`` must be strictly inside (0, 1); pass it
    through :func:`clamp_probability` first.
    """
    target = np.asarray(target, dtype=float)
    pred = np.asarray(pred, dtype=float)
    g = 0.5 * (np.sqrt((1.0 - target) / (1.0 - pred)) - np.sqrt(target / pred))
    return _unwrap(g)


def clamp_probability(p, eps=PROB_EPS):
    return _unwrap(np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps))


def binary_preference(mu_x, mu_y):
    """1.0 if ``mu_x >= mu_y`` else 0.0 (ties count as preferring x)."""
    mu_x = np.asarray(mu_x, dtype=float)
    mu_y = np.asarray(mu_y, dtype=float)
    if not (np.all(np.isfinite(mu_x)) and np.all(np.isfinite(mu_y))):
        raise ValueError("opinion scores must be finite")
    return _unwrap((mu_x >= mu_y).astype(float))


def thurstone_prob(fx, fy):
    """Probability that x beats y under Thurstone Case V with unit std."""
    fx = np.asarray(fx, dtype=float)
    fy = np.asarray(fy, dtype=float)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
        raise ValueError("quality scores must be finite")
    return _unwrap(ndtr((fx - fy) * _INV_SQRT2))


def gap_prob(gap):
    """``Phi(gap / sqrt(2))`` for a score difference; no validation."""
    return ndtr(np.asarray(gap, dtype=float) * _INV_SQRT2)


def gap_prob_grad(gap):
    """Derivative of :func:`gap_prob` w.r.t. the gap."""
    return _INV_SQRT2 * std_normal_pdf(np.asarray(gap, dtype=float) * _INV_SQRT2)


def clamped_gap_prob(gap, eps=PROB_EPS):
    """Clamped pairwise probability and its derivative w.r.t. the gap.

    The derivative is zero wherever the clamp is active.
    """
    raw = gap_prob(gap)
    prob = np.clip(raw, eps, 1.0 - eps)
    active = (raw > eps) & (raw < 1.0 - eps)
    dprob = np.where(active, gap_prob_grad(gap), 0.0)
    return prob, dprob


def ensemble_score(head_scores, axis=-1):
    """Mean of the head scores (along ``axis`` for arrays)."""
    arr = np.asarray(head_scores, dtype=float)
    if arr.size == 0 or (arr.ndim > 0 and arr.shape[axis] == 0):
        raise ValueError("ensemble_score needs at least one head score")
    if arr.ndim == 0:
        return float(arr)
    return _unwrap(arr.mean(axis=axis))
