"""Multi-head dense ranker with exact reverse-mode gradients.

A shared trunk of ReLU layers feeds ``num_heads`` independent head
stacks. Each head ends in a bias-free linear unit whose input is
l2-normalised; the resulting raw scores are batch-normalised per head
with a single learnable scale shared by every head and no shift, so all
heads report on a common scale.

Head parameters are stored stacked along a leading head axis, which lets
every head be evaluated with one ``einsum``.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .objectives import ObjectiveConfig, semi_objective

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
L2_FLOOR = 1e-12

CHECKPOINT_MAGIC = b"SSLIQA-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    """Network shape.

    ``head_layer_widths`` lists the hidden widths of each head; a trailing
    ``1`` (the scalar output) may be included or left implicit. The length
    of ``shared_layer_widths`` is the splitting point: how many layers all
    heads share before branching.
    """

    input_dim: int
    shared_layer_widths: tuple = (128, 64)
    head_layer_widths: tuple = (32, 1)
    num_heads: int = 8

    def __post_init__(self):
        shared = tuple(int(w) for w in self.shared_layer_widths)
        heads = tuple(int(w) for w in self.head_layer_widths)
        if heads and heads[-1] == 1:
            heads = heads[:-1]
        object.__setattr__(self, "shared_layer_widths", shared)
        object.__setattr__(self, "head_layer_widths", heads)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_heads < 1:
            raise ValueError("num_heads must be >= 1")
        if any(w < 1 for w in shared + heads):
            raise ValueError("layer widths must be >= 1")

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "shared_layer_widths": list(self.shared_layer_widths),
            "head_layer_widths": list(self.head_layer_widths),
            "num_heads": self.num_heads,
        }


@dataclass
class EnsembleParams:
    arch: ArchitectureConfig
    seed: int
    weights: dict
    running_mean: np.ndarray
    running_var: np.ndarray

    def copy(self):
        return EnsembleParams(
            self.arch,
            self.seed,
            {k: v.copy() for k, v in self.weights.items()},
            self.running_mean.copy(),
            self.running_var.copy(),
        )

    def num_parameters(self):
        return sum(v.size for v in self.weights.values())


@dataclass
class ForwardTrace:
    raw: np.ndarray  # (n, M) head outputs before normalisation
    scores: np.ndarray  # (n, M) normalised head scores
    mode: str
    norm_mean: np.ndarray  # statistics actually used to normalise
    norm_var: np.ndarray
    new_running_mean: np.ndarray
    new_running_var: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)

    @property
    def ensemble(self):
        return self.scores.mean(axis=1)


def _he(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def init(arch, seed=0):
    """He-normal weights, zero biases, unit shared scale; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights = {}
    width = arch.input_dim
    for i, out in enumerate(arch.shared_layer_widths):
        weights[f"trunk.{i}.weight"] = _he(rng, width, (width, out))
        weights[f"trunk.{i}.bias"] = np.zeros(out)
        width = out
    m = arch.num_heads
    for i, out in enumerate(arch.head_layer_widths):
        weights[f"heads.{i}.weight"] = _he(rng, width, (m, width, out))
        weights[f"heads.{i}.bias"] = np.zeros((m, out))
        width = out
    weights["heads.out.weight"] = _he(rng, width, (m, width))
    weights["out_norm.scale"] = np.array(1.0)
    return EnsembleParams(arch, int(seed), weights, np.zeros(m), np.ones(m))


def clone_head(params, source=0):
    """Copy of ``params`` where every head is an exact replica of ``source``."""
    out = params.copy()
    for name, value in out.weights.items():
        if name.startswith("heads."):
            value[:] = value[source]
    out.running_mean[:] = out.running_mean[source]
    out.running_var[:] = out.running_var[source]
    return out


def forward(params, features, mode="training"):
    """Evaluate all heads on a batch of feature vectors.

    In training mode the head outputs are normalised with batch statistics
    and the updated running statistics are returned on the trace (the
    caller commits them with :func:`commit_running_stats`). In inference
    mode the stored running statistics are used and nothing changes.
    """
    arch = params.arch
    w = params.weights
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(
            f"expected features of shape (n, {arch.input_dim}), got {x.shape}"
        )
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if mode not in ("training", "inference"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "training" and n < 2:
        raise ValueError("training-mode batches need at least two samples")

    cache = {"trunk_in": [], "trunk_pre": [], "head_in": [], "head_pre": []}
    h = x
    for i in range(len(arch.shared_layer_widths)):
        cache["trunk_in"].append(h)
        z = h @ w[f"trunk.{i}.weight"] + w[f"trunk.{i}.bias"]
        cache["trunk_pre"].append(z)
        h = np.maximum(z, 0.0)
    cache["trunk_out"] = h

    hh = None  # (M, n, d) once inside the heads
    for i in range(len(arch.head_layer_widths)):
        weight = w[f"heads.{i}.weight"]
        if hh is None:
            cache["head_in"].append(h)
            z = np.einsum("nd,mde->mne", h, weight)
        else:
            cache["head_in"].append(hh)
            z = np.einsum("mnd,mde->mne", hh, weight)
        z = z + w[f"heads.{i}.bias"][:, None, :]
        cache["head_pre"].append(z)
        hh = np.maximum(z, 0.0)
    if hh is None:
        hh = np.broadcast_to(h, (arch.num_heads,) + h.shape)

    norm = np.maximum(np.linalg.norm(hh, axis=2, keepdims=True), L2_FLOOR)
    unit = hh / norm
    cache["final_norm"] = norm
    cache["final_unit"] = unit
    raw = np.einsum("mnd,md->nm", unit, w["heads.out.weight"])

    if mode == "training":
        mean = raw.mean(axis=0)
        var = raw.var(axis=0)
        new_mean = (1.0 - BN_MOMENTUM) * params.running_mean + BN_MOMENTUM * mean
        new_var = (1.0 - BN_MOMENTUM) * params.running_var + BN_MOMENTUM * var
    else:
        mean = params.running_mean
        var = params.running_var
        new_mean = params.running_mean
        new_var = params.running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    normed = (raw - mean) * inv_std
    cache["normed"] = normed
    cache["inv_std"] = inv_std
    scores = w["out_norm.scale"] * normed
    return ForwardTrace(raw, scores, mode, mean, var, new_mean, new_var, cache)


def commit_running_stats(params, trace):
    params.running_mean = trace.new_running_mean.copy()
    params.running_var = trace.new_running_var.copy()


def backward(params, trace, d_scores):
    """Gradient of a scalar loss w.r.t. every weight, given dloss/dscores."""
    arch = params.arch
    w = params.weights
    cache = trace.cache
    ds = np.asarray(d_scores, dtype=float)
    grads = {}

    scale = w["out_norm.scale"]
    normed = cache["normed"]
    grads["out_norm.scale"] = np.array(np.sum(ds * normed))
    d_normed = ds * scale
    if trace.mode == "training":
        d_raw = cache["inv_std"] * (
            d_normed
            - d_normed.mean(axis=0)
            - normed * (d_normed * normed).mean(axis=0)
        )
    else:
        d_raw = d_normed * cache["inv_std"]

    unit = cache["final_unit"]
    grads["heads.out.weight"] = np.einsum("nm,mnd->md", d_raw, unit)
    d_unit = np.einsum("nm,md->mnd", d_raw, w["heads.out.weight"])
    norm = cache["final_norm"]
    radial = np.sum(unit * d_unit, axis=2, keepdims=True)
    d_hh = np.where(norm > L2_FLOOR, (d_unit - unit * radial) / norm, d_unit / L2_FLOOR)

    d_h = None
    for i in reversed(range(len(arch.head_layer_widths))):
        dz = d_hh * (cache["head_pre"][i] > 0)
        inp = cache["head_in"][i]
        weight = w[f"heads.{i}.weight"]
        grads[f"heads.{i}.bias"] = dz.sum(axis=1)
        if i == 0:
            grads[f"heads.{i}.weight"] = np.einsum("nd,mne->mde", inp, dz)
            d_h = np.einsum("mne,mde->nd", dz, weight)
        else:
            grads[f"heads.{i}.weight"] = np.einsum("mnd,mne->mde", inp, dz)
            d_hh = np.einsum("mne,mde->mnd", dz, weight)
    if d_h is None:
        d_h = d_hh.sum(axis=0)

    for i in reversed(range(len(arch.shared_layer_widths))):
        dz = d_h * (cache["trunk_pre"][i] > 0)
        grads[f"trunk.{i}.weight"] = cache["trunk_in"][i].T @ dz
        grads[f"trunk.{i}.bias"] = dz.sum(axis=0)
        d_h = dz @ w[f"trunk.{i}.weight"].T

    return {name: grads[name] for name in w}


def loss_and_grad(params, lab_x, lab_y, labels, unl_x=None, unl_y=None, config=None):
    """Semi-supervised objective and its gradient for one mini-batch.

    ``lab_x``/``lab_y`` hold the features of the first/second image of each
    labeled pair; ``unl_x``/``unl_y`` likewise for unlabeled pairs (may be
    ``None`` or empty). All images go through a single training-mode
    forward pass, so they share one set of batch statistics.

    Returns ``(ObjectiveResult, grads, trace)``.
    """
    config = config or ObjectiveConfig()
    lab_x = np.atleast_2d(np.asarray(lab_x, dtype=float))
    lab_y = np.atleast_2d(np.asarray(lab_y, dtype=float))
    d = params.arch.input_dim
    if unl_x is None or len(unl_x) == 0:
        unl_x = np.empty((0, d))
        unl_y = np.empty((0, d))
    unl_x = np.atleast_2d(np.asarray(unl_x, dtype=float))
    unl_y = np.atleast_2d(np.asarray(unl_y, dtype=float))
    n_lab, n_unl = len(lab_x), len(unl_x)
    if len(lab_y) != n_lab or len(unl_y) != n_unl:
        raise ValueError("pair sides must have equal lengths")

    batch = np.concatenate([lab_x, lab_y, unl_x, unl_y], axis=0)
    trace = forward(params, batch, mode="training")
    s = trace.scores
    s_lx, s_ly = s[:n_lab], s[n_lab:2 * n_lab]
    s_ux, s_uy = s[2 * n_lab:2 * n_lab + n_unl], s[2 * n_lab + n_unl:]

    if config.include_labeled_in_diversity:
        div_x = np.concatenate([s_ux, s_lx])
        div_y = np.concatenate([s_uy, s_ly])
    else:
        div_x, div_y = s_ux, s_uy

    result = semi_objective(s_lx, s_ly, labels, div_x, div_y, config)

    d_scores = np.zeros_like(s)
    d_scores[:n_lab] += result.d_lab_x
    d_scores[n_lab:2 * n_lab] += result.d_lab_y
    if len(div_x):
        dux, duy = result.d_div_x[:n_unl], result.d_div_y[:n_unl]
        d_scores[2 * n_lab:2 * n_lab + n_unl] += dux
        d_scores[2 * n_lab + n_unl:] += duy
        if config.include_labeled_in_diversity:
            d_scores[:n_lab] += result.d_div_x[n_unl:]
            d_scores[n_lab:2 * n_lab] += result.d_div_y[n_unl:]

    grads = backward(params, trace, d_scores)
    return result, grads, trace


def predict(params, features, batch_size=4096):
    """Inference-mode head scores, shape ``(n, M)``."""
    x = np.asarray(features, dtype=float)
    if len(x) == 0:
        return np.empty((0, params.arch.num_heads))
    parts = [
        forward(params, x[i:i + batch_size], mode="inference").scores
        for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(parts, axis=0)


# -- checkpoint container -------------------------------------------------------
#
# Layout:  MAGIC | one line of JSON header | raw tensor bytes.
# The header records the version, architecture, seed and, for every tensor
# in storage order, its name and shape. Tensors are little-endian float64,
# row-major, concatenated without padding. Running statistics are stored
# as the tensors "running_mean" and "running_var" after the weights.


def _atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_bytes(params):
    tensors = list(params.weights.items())
    tensors += [("running_mean", params.running_mean), ("running_var", params.running_var)]
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": params.arch.to_dict(),
        "seed": params.seed,
        "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in tensors)
    return CHECKPOINT_MAGIC + head + body


def save_checkpoint(params, path):
    _atomic_write_bytes(path, checkpoint_bytes(params))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint file")
    rest = data[len(CHECKPOINT_MAGIC):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: truncated header")
    header = json.loads(rest[:newline])
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    arch = ArchitectureConfig(**header["arch"])
    body = memoryview(rest)[newline + 1:]
    offset = 0
    tensors = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise FormatError(f"{path}: truncated tensor {spec['name']}")
        arr = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").reshape(shape)
        tensors[spec["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    running_mean = tensors.pop("running_mean")
    running_var = tensors.pop("running_var")
    return EnsembleParams(arch, int(header["seed"]), tensors, running_mean, running_var)
