"""Correlation metrics, failure spotting and gMAD pair search."""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit
from scipy.stats import rankdata

from . import model
from .errors import DegenerateInputError, ParseError

LOGISTIC_MAX_ITER = 500
LOGISTIC_FTOL = 1e-10


def _paired(preds, moss, min_len):
    x = np.asarray(preds, dtype=float).reshape(-1)
    y = np.asarray(moss, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} predictions vs {y.size} scores")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} samples, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("correlation undefined for constant input")
    return x, y


def pearson(x, y):
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    denom = np.sqrt(np.dot(x, x) * np.dot(y, y))
    if denom == 0:
        raise DegenerateInputError("correlation undefined for constant input")
    return float(np.clip(np.dot(x, y) / denom, -1.0, 1.0))


def srcc(preds, moss):
    """Spearman rank-order correlation with average ranks for ties."""
    x, y = _paired(preds, moss, 3)
    return pearson(rankdata(x), rankdata(y))


# -- four-parameter logistic -------------------------------------------------------


@dataclass
class LogisticFit:
    top: float  # upper asymptote
    bottom: float  # lower asymptote
    midpoint: float
    width: float  # signed; only its magnitude enters the curve
    converged: bool
    residual: float  # root-mean-square error of the fitted curve

    @property
    def params(self):
        return np.array([self.top, self.bottom, self.midpoint, self.width])

    def __call__(self, preds):
        return logistic4(preds, self.params)


def logistic4(preds, params):
    """``(top - bottom) / (1 + exp(-(f - midpoint)/|width|)) + bottom``."""
    e1, e2, e3, e4 = params
    f = np.asarray(preds, dtype=float)
    return (e1 - e2) * expit((f - e3) / abs(e4)) + e2


def _logistic_jac(params, f):
    e1, e2, e3, e4 = params
    a = abs(e4)
    g = expit((f - e3) / a)
    dg = g * (1.0 - g)
    jac = np.empty((f.size, 4))
    jac[:, 0] = g
    jac[:, 1] = 1.0 - g
    jac[:, 2] = -(e1 - e2) * dg / a
    jac[:, 3] = -(e1 - e2) * dg * (f - e3) * np.sign(e4) / (e4 * e4)
    return jac


def fit_logistic(preds, moss):
    """Least-squares fit of the four-parameter logistic by Levenberg-Marquardt."""
    f, y = _paired(preds, moss, 5)
    x0 = np.array([y.max(), y.min(), f.mean(), f.std()])
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            sol = least_squares(
                lambda p: logistic4(f, p) - y,
                x0,
                jac=lambda p: _logistic_jac(p, f),
                method="lm",
                ftol=LOGISTIC_FTOL,
                xtol=LOGISTIC_FTOL,
                gtol=1e-15,  # lm rejects tolerances below machine epsilon
                max_nfev=LOGISTIC_MAX_ITER,
            )
        est = sol.x
        ok = bool(sol.status > 0) and bool(np.all(np.isfinite(est))) and est[3] != 0
    except (ValueError, np.linalg.LinAlgError):
        est, ok = x0, False
    fitted = logistic4(f, est)
    if not np.all(np.isfinite(fitted)):
        ok = False
    residual = float(np.sqrt(np.mean((fitted - y) ** 2))) if ok else float("nan")
    return LogisticFit(*(float(v) for v in est), converged=ok, residual=residual)


def plcc_with_logistic(preds, moss):
    """PLCC after mapping predictions through a fitted logistic.

    Returns ``(plcc, fit)``. If the fit fails, ``fit.converged`` is False
    and the PLCC of the raw predictions is returned instead.
    """
    f, y = _paired(preds, moss, 5)
    fit = fit_logistic(f, y)
    if fit.converged:
        fitted = fit(f)
        if np.ptp(fitted) > 0:
            return pearson(fitted, y), fit
        fit.converged = False
    return pearson(f, y), fit


@dataclass
class EvalReport:
    srcc: float
    plcc: float
    fit: LogisticFit
    n: int

    def as_records(self):
        return [
            ("n", self.n),
            ("srcc", self.srcc),
            ("plcc", self.plcc),
            ("logistic_top", self.fit.top),
            ("logistic_bottom", self.fit.bottom),
            ("logistic_midpoint", self.fit.midpoint),
            ("logistic_width", self.fit.width),
            ("converged", int(self.fit.converged)),
            ("residual", self.fit.residual),
        ]


def evaluate(preds, moss):
    plcc, fit = plcc_with_logistic(preds, moss)
    return EvalReport(srcc(preds, moss), plcc, fit, int(np.size(preds)))


# -- failure spotting ----------------------------------------------------------------


@dataclass
class DisagreementRanking:
    ids: list
    variances: np.ndarray


def rank_disagreement(ids, head_scores, k=None):
    """Order samples by the spread of their head scores, largest first.

    ``head_scores`` is ``(n, M)``. The spread is the population variance
    across heads (the magnitude of the variance diversity term, so it is
    non-negative). Ties go to the smaller id.
    """
    ids = list(ids)
    scores = np.asarray(head_scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] != len(ids):
        raise ValueError("need one row of head scores per id")
    n = len(ids)
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    var = scores.var(axis=1)
    order = sorted(range(n), key=lambda i: (-var[i], ids[i]))[:k]
    return DisagreementRanking([ids[i] for i in order], var[order])


def spot_failures(params, ids, features, k):
    """Top-``k`` samples of a pool on which the heads disagree most."""
    if k > len(ids):
        raise ValueError(f"k={k} exceeds pool size {len(ids)}")
    return rank_disagreement(ids, model.predict(params, features), k)


def random_subset_report(preds, moss, k, seed=0, draws=20):
    """Mean SRCC/PLCC over ``draws`` uniformly random size-``k`` subsets.

    The reference point for failure spotting: a spotter is useful when the
    subset it picks correlates worse than a random subset of equal size.
    """
    preds = np.asarray(preds, dtype=float)
    moss = np.asarray(moss, dtype=float)
    rng = np.random.default_rng(seed)
    s, p = [], []
    for _ in range(draws):
        idx = rng.choice(len(preds), size=k, replace=False)
        s.append(srcc(preds[idx], moss[idx]))
        p.append(plcc_with_logistic(preds[idx], moss[idx])[0])
    return {"srcc": float(np.mean(s)), "plcc": float(np.mean(p)), "k": k, "draws": draws}


# -- gMAD ------------------------------------------------------------------------


class GmadWarning(UserWarning):
    pass


class GmadPair(NamedTuple):
    level: int
    top_id: str
    bottom_id: str
    attacker_gap: float


def gmad_buckets(defender_scores, num_levels):
    """Equal-frequency buckets of ids by defender score (ties by id)."""
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    ordered = sorted(defender_scores, key=lambda i: (defender_scores[i], i))
    return [list(chunk) for chunk in np.array_split(np.array(ordered, dtype=object), num_levels)]


def gmad_pairs(defender_scores, attacker_scores, num_levels=5):
    """Per quality level, the pair the defender ranks alike but the attacker splits most.

    The pool is cut into ``num_levels`` equal-frequency buckets by defender
    score. Within each bucket the attacker's highest-scored id becomes
    ``top_id`` and its lowest-scored remaining id ``bottom_id``; ties go to
    the smaller id. Buckets with fewer than two members are skipped with a
    :class:`GmadWarning`.
    """
    if not defender_scores:
        raise ValueError("empty score pool")
    if set(defender_scores) != set(attacker_scores):
        raise ValueError("defender and attacker must score the same ids")
    out = []
    for level, bucket in enumerate(gmad_buckets(defender_scores, num_levels)):
        if len(bucket) < 2:
            warnings.warn(f"gMAD level {level} has {len(bucket)} member(s); skipped", GmadWarning)
            continue
        top = min(bucket, key=lambda i: (-attacker_scores[i], i))
        rest = [i for i in bucket if i != top]
        bottom = min(rest, key=lambda i: (attacker_scores[i], i))
        gap = float(attacker_scores[top] - attacker_scores[bottom])
        out.append(GmadPair(level, top, bottom, gap))
    return out


# -- text formats ----------------------------------------------------------------
#
# score file:  id<TAB>score            one record per line
# report file: name<TAB>value          one metric per line
# gMAD file:   level<TAB>top_id<TAB>bottom_id<TAB>gap
# Reals are written with repr() so that they round-trip exactly.


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def format_scores(scores):
    return "".join(f"{k}\t{_fmt(v)}\n" for k, v in scores.items())


def parse_scores(text, source="<scores>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{source}: expected 'id<TAB>score'", lineno)
        try:
            out[parts[0]] = float(parts[1])
        except ValueError:
            raise ParseError(f"{source}: non-numeric score {parts[1]!r}", lineno) from None
    return out


def format_report(records):
    return "".join(f"{name}\t{_fmt(value)}\n" for name, value in records)


def format_gmad(pairs):
    return "".join(f"{p.level}\t{p.top_id}\t{p.bottom_id}\t{_fmt(p.attacker_gap)}\n" for p in pairs)


def format_ranking(ranking):
    return "".join(f"{i}\t{_fmt(v)}\n" for i, v in zip(ranking.ids, ranking.variances))
