"""Datasets: the text file format, synthetic generation and splitting.

File format::

    #dim=<D>
    <id>\t<mos or ->\t<f1>,<f2>,...,<fD>

``-`` marks a sample without an opinion score. Reals are written with
``repr`` so a save/load round trip is exact.
"""

import os
import tempfile
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import FormatError, ParseError


class Sample(NamedTuple):
    id: str
    features: np.ndarray
    mos: Optional[float]


@dataclass(eq=False)
class Dataset:
    ids: list
    features: np.ndarray
    mos: np.ndarray  # NaN where no score is attached

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.ids), -1)
        self.mos = np.asarray(self.mos, dtype=float).reshape(-1)
        if not (len(self.ids) == len(self.features) == len(self.mos)):
            raise FormatError("ids, features and mos must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise FormatError("sample ids must be unique")
        if any(("\t" in i or "\n" in i or not i) for i in self.ids):
            raise FormatError("ids must be non-empty and free of tabs/newlines")
        bad = ~np.isnan(self.mos) & ~np.isfinite(self.mos)
        if bad.any():
            raise FormatError("opinion scores must be finite")

    @classmethod
    def empty(cls, dim=0):
        return cls([], np.empty((0, dim)), np.empty(0))

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        m = self.mos[i]
        return Sample(self.ids[i], self.features[i], None if np.isnan(m) else float(m))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.mos, other.mos, equal_nan=True)
        )

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def is_labeled(self):
        return ~np.isnan(self.mos)

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        return Dataset([self.ids[i] for i in index], self.features[index], self.mos[index])

    def without_labels(self):
        return Dataset(list(self.ids), self.features.copy(), np.full(len(self), np.nan))

    def labeled_only(self):
        return self.subset(np.flatnonzero(self.is_labeled))

    def mos_map(self):
        return {i: float(m) for i, m in zip(self.ids, self.mos) if not np.isnan(m)}


def format_dataset(ds):
    lines = [f"#dim={ds.dim}"]
    for i, f, m in zip(ds.ids, ds.features, ds.mos):
        mos = "-" if np.isnan(m) else repr(float(m))
        lines.append(f"{i}\t{mos}\t" + ",".join(repr(float(v)) for v in f))
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds, path):
    atomic_write_text(path, format_dataset(ds))


def parse_dataset(text, source="<dataset>"):
    ids, feats, mos = [], [], []
    dim = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("#dim="):
                try:
                    dim = int(line[5:])
                except ValueError:
                    raise ParseError(f"{source}: bad dim header {line!r}", lineno) from None
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{source}: expected 3 tab-separated fields, got {len(parts)}", lineno)
        sid, m, fs = parts
        try:
            mos.append(np.nan if m == "-" else float(m))
        except ValueError:
            raise ParseError(f"{source}: non-numeric mos {m!r}", lineno) from None
        try:
            row = [float(v) for v in fs.split(",")] if fs else []
        except ValueError:
            raise ParseError(f"{source}: non-numeric feature in {fs[:40]!r}", lineno) from None
        if dim is None:
            dim = len(row)
        if len(row) != dim:
            raise FormatError(f"{source}: line {lineno}: expected {dim} features, got {len(row)}")
        ids.append(sid)
        feats.append(row)
    if not ids:
        return Dataset.empty(dim or 0)
    return Dataset(ids, np.array(feats, dtype=float), np.array(mos, dtype=float))


def load_dataset(path, label_blind=False):
    """Read a dataset file.

    With ``label_blind`` the scores are stripped from the returned dataset
    and handed back separately as ``(dataset, {id: mos})``, so a scored set
    can serve as an unlabeled training pool while keeping its scores for
    evaluation only.
    """
    with open(path, encoding="utf-8") as fh:
        ds = parse_dataset(fh.read(), source=os.fspath(path))
    if label_blind:
        return ds.without_labels(), ds.mos_map()
    return ds


# -- synthetic data -------------------------------------------------------------

NONLINEARITIES = {
    "identity": lambda t: t,
    "cube": lambda t: t ** 3,
    "sigmoid": lambda t: np.tanh(t),
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale stand-in for a rated image collection.

    Features are standard normal. A fraction ``ood_fraction`` of the
    samples (of all samples, or of the unlabeled pool only when
    ``ood_in_labeled`` is False) is shifted by ``ood_shift`` on ``ood_dims`` randomly chosen
    coordinates (default ``max(1, feature_dim // 4)``). Latent quality is
    ``nonlinearity(w . x)`` with ``w`` a random unit vector; the opinion
    score adds Gaussian noise of ``noise_std`` times the latent std and is
    min-max rescaled to [0, 100] over labeled and unlabeled samples jointly.
    """

    n_labeled: int = 2000
    n_unlabeled: int = 2000
    feature_dim: int = 16
    nonlinearity: str = "identity"
    noise_std: float = 0.3
    ood_fraction: float = 0.0
    ood_shift: float = 3.0
    ood_dims: Optional[int] = None
    ood_in_labeled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_labeled < 0 or self.n_unlabeled < 0 or self.feature_dim < 1:
            raise ValueError("sample counts must be >= 0 and feature_dim >= 1")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= self.ood_fraction < 1:
            raise ValueError("ood_fraction must lie in [0, 1)")


class SyntheticData(NamedTuple):
    labeled: Dataset
    unlabeled: Dataset  # scores withheld
    latent: dict  # id -> noiseless latent quality
    heldout_mos: dict  # id -> withheld opinion score of each unlabeled sample
    ood_ids: frozenset
    ood_coords: tuple


def generate_synthetic(spec):
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    n_ood_dims = spec.ood_dims if spec.ood_dims is not None else max(1, d // 4)
    coords = np.sort(rng.choice(d, size=min(n_ood_dims, d), replace=False))

    n = spec.n_labeled + spec.n_unlabeled
    x = rng.standard_normal((n, d))
    nl = spec.n_labeled
    ood = np.zeros(n, dtype=bool)
    if spec.ood_in_labeled:
        ood[rng.permutation(n)[:int(round(spec.ood_fraction * n))]] = True
    else:
        n_ood = int(round(spec.ood_fraction * spec.n_unlabeled))
        ood[nl + rng.permutation(spec.n_unlabeled)[:n_ood]] = True
    x[np.ix_(ood, coords)] += spec.ood_shift

    latent = NONLINEARITIES[spec.nonlinearity](x @ w)
    noise = rng.standard_normal(n) * spec.noise_std * (latent.std() if n > 1 else 0.0)
    raw = latent + noise
    span = np.ptp(raw) if n > 1 else 0.0
    mos = np.clip(100.0 * (raw - raw.min()) / span, 0.0, 100.0) if span > 0 else np.full(n, 50.0)

    ids = [f"L{i:06d}" for i in range(spec.n_labeled)]
    ids += [f"U{i:06d}" for i in range(spec.n_unlabeled)]
    labeled = Dataset(ids[:nl], x[:nl], mos[:nl])
    unlabeled = Dataset(ids[nl:], x[nl:], np.full(n - nl, np.nan))
    return SyntheticData(
        labeled,
        unlabeled,
        {i: float(q) for i, q in zip(ids, latent)},
        {i: float(m) for i, m in zip(ids[nl:], mos[nl:])},
        frozenset(i for i, o in zip(ids, ood) if o),
        tuple(int(c) for c in coords),
    )


def describe_synthetic(spec, data):
    """Human-readable record of how a synthetic dataset was produced."""
    lines = [f"{k} = {v}" for k, v in vars(spec).items()]
    lines.append(f"ood_coords = {','.join(map(str, data.ood_coords))}")
    lines.append(f"ood_count = {len(data.ood_ids)}")
    lines.append(
        f"# ood samples have +{spec.ood_shift} added to features at ood_coords"
    )
    return "\n".join(lines) + "\n"


# -- splits ----------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be three values summing to 1")
        if any(f < 0 for f in self.fractions):
            raise ValueError("split fractions must be non-negative")


def split_indices(n, spec, repeat_index):
    """Seeded shuffle of ``range(n)`` cut into train/val/test index arrays."""
    if not 0 <= repeat_index < len(spec.seeds):
        raise ValueError(f"repeat_index {repeat_index} out of range for {len(spec.seeds)} seeds")
    if n < 5:
        raise ValueError("need at least 5 samples to split")
    perm = np.random.default_rng(spec.seeds[repeat_index]).permutation(n)
    n_train = int(round(spec.fractions[0] * n))
    n_val = int(round(spec.fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(dataset, spec, repeat_index):
    return tuple(dataset.subset(ix) for ix in split_indices(len(dataset), spec, repeat_index))
