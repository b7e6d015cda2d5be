"""A small feed-forward quantile scorer with hand-rolled gradients.

The network maps a 16-scalar observation to a grid of 104 x 7 scores in
(0, 1): seven quantile estimates per action, squashed by a logistic
output layer.  Greedy action selection takes the argmax of per-action
mean scores, lowest id winning ties.

Observation scalars are expanded through a fixed bank of sinusoids
(sin/cos at octave frequencies) before the first learned layer.  Adjacent
vocabulary tokens embed only ~1/768 apart; without the expansion the net
cannot separate them in any reasonable number of steps (it plateaus
around 50-60% accuracy), with it they land far apart in feature space.
The expansion has no parameters, so gradients stay exact.

Parameters are float64 in memory but always sit exactly on the float32
grid (initialization and every optimizer step round to it), so the
float32 checkpoint format is lossless: a saved-and-reloaded model
produces bit-identical outputs.  Gradients are computed in float64,
which keeps finite-difference checks tight.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .seeding import make_rng

MAGIC = b"NETOPQR1"
CKPT_SCHEMA = "netop-ckpt-1"

DEFAULT_DIMS = (16, 128, 128, 728)
N_ACTIONS = 104
N_QUANTILES = 7
# Octaves of the input sinusoid bank: frequencies pi * 2^k, k = 0..9. The
# top octave (512 pi) resolves the finest embedding gap (1/768) comfortably.
N_FREQUENCIES = 10
# Octaves applied to pairwise slot differences. cos(2^k pi (x_i - x_j))
# equals 1 exactly when two slots match, which makes same/different tests
# (the heart of fault diagnosis) linearly separable instead of a product
# the hidden layers would have to learn.
DIFF_OCTAVES = (6, 7, 8, 9)


def featurize(batch: np.ndarray, n_frequencies: int = N_FREQUENCIES) -> np.ndarray:
    """Fixed input expansion: per-slot sinusoids plus pairwise difference cosines.

    x -> [x, sin(2^k pi x), cos(2^k pi x) ... , cos(2^k pi (x_i - x_j)) ...]

    With n_frequencies = 0 the expansion is the identity (plain MLP).
    """
    x = np.asarray(batch, dtype=np.float64)
    if n_frequencies == 0:
        return x
    parts = [x]
    for k in range(n_frequencies):
        z = (np.pi * 2.0**k) * x
        parts.append(np.sin(z))
        parts.append(np.cos(z))
    i_upper, j_upper = np.triu_indices(x.shape[-1], k=1)
    diffs = x[..., i_upper] - x[..., j_upper]
    for k in DIFF_OCTAVES:
        parts.append(np.cos((np.pi * 2.0**k) * diffs))
    return np.concatenate(parts, axis=-1)


def feature_width(obs_dim: int, n_frequencies: int) -> int:
    if n_frequencies == 0:
        return obs_dim
    pairs = obs_dim * (obs_dim - 1) // 2
    return obs_dim * (1 + 2 * n_frequencies) + pairs * len(DIFF_OCTAVES)


class CheckpointError(ValueError):
    """A checkpoint byte stream is unusable."""


class BadMagicError(CheckpointError):
    """The stream does not start with the checkpoint magic."""


class TruncatedCheckpointError(CheckpointError):
    """The stream ends before all declared arrays."""


class VocabHashMismatchError(CheckpointError):
    """The checkpoint was trained against a different vocabulary."""


class ShapeError(ValueError):
    """An input or gradient array has the wrong shape."""


def _to_f32_grid(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


@dataclass
class QuantileModel:
    dims: tuple[int, ...]  # logical dims; the first learned matrix widens to dims[0]*(1+2K)
    n_actions: int
    n_quantiles: int
    n_frequencies: int
    weights: list[np.ndarray]  # (fan_in, fan_out), float64 on the float32 grid
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        if self.dims[-1] != self.n_actions * self.n_quantiles:
            raise ShapeError(
                f"output width {self.dims[-1]} != actions {self.n_actions} x quantiles {self.n_quantiles}"
            )

    @property
    def feature_dim(self) -> int:
        return feature_width(self.dims[0], self.n_frequencies)


@dataclass
class ForwardTrace:
    """Cached activations from one forward pass, enough for exact gradients."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]  # hidden relu outputs, then the sigmoid output


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class AdamState:
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    t: int = 0


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init(
    seed: int,
    dims: tuple[int, ...] = DEFAULT_DIMS,
    n_actions: int = N_ACTIONS,
    n_quantiles: int = N_QUANTILES,
    n_frequencies: int = N_FREQUENCIES,
) -> QuantileModel:
    """Fan-in-scaled normal weights, zero biases, deterministic per seed."""
    rng = make_rng(seed)
    layer_dims = [feature_width(dims[0], n_frequencies), *dims[1:]]
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        weights.append(_to_f32_grid(w))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return QuantileModel(tuple(dims), n_actions, n_quantiles, n_frequencies, weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form: one transcendental pass, no overflow. Saturates to exactly
    # 0.0/1.0 only past |z| ~ 37, far outside trained pre-activations.
    return 0.5 * np.tanh(0.5 * z) + 0.5


def forward(model: QuantileModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Score a batch of observations.

    Returns (scores, trace) where scores has shape (batch, actions,
    quantiles) and every entry lies in (0, 1).  The trace stores the
    featurized inputs, which is what backward needs.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dims[0]:
        raise ShapeError(f"expected batch shape (n, {model.dims[0]}), got {x.shape}")
    x = featurize(x, model.n_frequencies)
    pre = []
    acts = []
    a = x
    last = len(model.weights) - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = _sigmoid(z) if layer == last else np.maximum(z, 0.0)
        acts.append(a)
    scores = a.reshape(x.shape[0], model.n_actions, model.n_quantiles)
    return scores, ForwardTrace(inputs=x, pre_activations=pre, activations=acts)


def score_grid(model: QuantileModel, observation: np.ndarray) -> np.ndarray:
    """The (actions, quantiles) grid for a single observation."""
    scores, _ = forward(model, np.asarray(observation, dtype=np.float64)[None, :])
    return scores[0]


def mean_scores(grid: np.ndarray) -> np.ndarray:
    """Per-action mean over the quantile axis."""
    return np.asarray(grid, dtype=np.float64).mean(axis=-1)


def greedy_action(grid: np.ndarray) -> int:
    """Argmax of per-action means; ties break toward the lowest action id."""
    return int(np.argmax(mean_scores(grid)))


def backward(model: QuantileModel, trace: ForwardTrace, dscores: np.ndarray) -> Gradients:
    """Exact gradients of any scalar loss given its gradient w.r.t. scores."""
    d = np.asarray(dscores, dtype=np.float64)
    batch = trace.inputs.shape[0]
    expected = (batch, model.n_actions, model.n_quantiles)
    if d.shape != expected:
        raise ShapeError(f"expected output gradient shape {expected}, got {d.shape}")
    out = trace.activations[-1]
    delta = d.reshape(batch, -1) * out * (1.0 - out)  # logistic derivative
    dws: list[np.ndarray] = []
    dbs: list[np.ndarray] = []
    for layer in range(len(model.weights) - 1, -1, -1):
        a_prev = trace.activations[layer - 1] if layer > 0 else trace.inputs
        dws.append(a_prev.T @ delta)
        dbs.append(delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (trace.pre_activations[layer - 1] > 0)
    dws.reverse()
    dbs.reverse()
    return Gradients(weights=dws, biases=dbs)


def adam_init(model: QuantileModel) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in model.weights],
        v_weights=[np.zeros_like(w) for w in model.weights],
        m_biases=[np.zeros_like(b) for b in model.biases],
        v_biases=[np.zeros_like(b) for b in model.biases],
        t=0,
    )


def adam_step(
    model: QuantileModel, grads: Gradients, state: AdamState, hyper: AdamHyper = AdamHyper()
) -> tuple[QuantileModel, AdamState]:
    """One bias-corrected Adam update, in place.

    Parameters and moments are rounded back to the float32 grid so the
    in-memory state always matches its checkpoint image exactly.
    """
    for g, w in zip(grads.weights, model.weights):
        if g.shape != w.shape:
            raise ShapeError(f"weight gradient shape {g.shape} != {w.shape}")
    for g, b in zip(grads.biases, model.biases):
        if g.shape != b.shape:
            raise ShapeError(f"bias gradient shape {g.shape} != {b.shape}")
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    groups = (
        (model.weights, grads.weights, state.m_weights, state.v_weights),
        (model.biases, grads.biases, state.m_biases, state.v_biases),
    )
    for params, gs, ms, vs in groups:
        for p, g, m, v in zip(params, gs, ms, vs):
            # In-place ufuncs: this loop dominates the training step cost.
            scratch = np.multiply(g, 1.0 - b1)
            np.multiply(m, b1, out=m)
            np.add(m, scratch, out=m)
            np.multiply(g, g, out=scratch)
            np.multiply(scratch, 1.0 - b2, out=scratch)
            np.multiply(v, b2, out=v)
            np.add(v, scratch, out=v)
            np.divide(v, bias2, out=scratch)
            np.sqrt(scratch, out=scratch)
            np.add(scratch, hyper.epsilon, out=scratch)
            np.divide(m, scratch, out=scratch)
            np.multiply(scratch, hyper.learning_rate / bias1, out=scratch)
            np.subtract(p, scratch, out=p)
            m[:] = m.astype(np.float32)
            v[:] = v.astype(np.float32)
            p[:] = p.astype(np.float32)
    return model, state


# --- checkpoints ----------------------------------------------------------


def _param_arrays(model: QuantileModel, adam: AdamState) -> list[np.ndarray]:
    arrays = []
    for w, b in zip(model.weights, model.biases):
        arrays.extend((w, b))
    for mw, mb in zip(adam.m_weights, adam.m_biases):
        arrays.extend((mw, mb))
    for vw, vb in zip(adam.v_weights, adam.v_biases):
        arrays.extend((vw, vb))
    return arrays


def save_checkpoint(model: QuantileModel, adam: AdamState, metadata: dict | None = None) -> bytes:
    """Serialize model, Adam state, and JSON metadata.

    Layout: magic, uint32-LE metadata length, UTF-8 JSON metadata, then
    every array as little-endian float32 (weights/biases per layer, Adam
    first moments, Adam second moments).
    """
    meta = {
        "schema": CKPT_SCHEMA,
        "dims": list(model.dims),
        "actions": model.n_actions,
        "quantiles": model.n_quantiles,
        "frequencies": model.n_frequencies,
        "diff_octaves": list(DIFF_OCTAVES) if model.n_frequencies else [],
        "adam_t": adam.t,
    }
    if metadata:
        meta.update(metadata)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    for arr in _param_arrays(model, adam):
        blob += arr.astype("<f4").tobytes(order="C")
    return bytes(blob)


def load_checkpoint(data: bytes) -> tuple[QuantileModel, AdamState, dict]:
    """Inverse of save_checkpoint; raises distinct errors per defect."""
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not a netop checkpoint (bad magic)")
    offset = len(MAGIC)
    if len(data) < offset + 4:
        raise TruncatedCheckpointError("truncated before metadata length")
    (meta_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if len(data) < offset + meta_len:
        raise TruncatedCheckpointError("truncated inside metadata")
    try:
        meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata: {exc}") from exc
    offset += meta_len
    if meta.get("schema") != CKPT_SCHEMA:
        raise CheckpointError(f"expected metadata schema {CKPT_SCHEMA!r}")
    try:
        dims = tuple(int(d) for d in meta["dims"])
        n_actions = int(meta["actions"])
        n_quantiles = int(meta["quantiles"])
        n_frequencies = int(meta["frequencies"])
        adam_t = int(meta["adam_t"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"incomplete metadata: {exc}") from exc
    expected_octaves = list(DIFF_OCTAVES) if n_frequencies else []
    if meta.get("diff_octaves", expected_octaves) != expected_octaves:
        raise CheckpointError(
            f"checkpoint uses difference octaves {meta.get('diff_octaves')}, this build uses {expected_octaves}"
        )

    layer_dims = [feature_width(dims[0], n_frequencies), *dims[1:]]
    shapes: list[tuple[int, ...]] = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        shapes.extend(((fan_in, fan_out), (fan_out,)))
    shapes = shapes * 3  # params, first moments, second moments
    total_floats = sum(int(np.prod(s)) for s in shapes)
    body = data[offset:]
    if len(body) < 4 * total_floats:
        raise TruncatedCheckpointError(
            f"expected {4 * total_floats} array bytes, found {len(body)}"
        )
    if len(body) > 4 * total_floats:
        raise CheckpointError(f"{len(body) - 4 * total_floats} trailing bytes after arrays")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    arrays = []
    pos = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[pos : pos + size].reshape(shape).copy())
        pos += size
    per_block = 2 * (len(dims) - 1)
    params, moments1, moments2 = (
        arrays[:per_block],
        arrays[per_block : 2 * per_block],
        arrays[2 * per_block :],
    )
    model = QuantileModel(
        dims=dims,
        n_actions=n_actions,
        n_quantiles=n_quantiles,
        n_frequencies=n_frequencies,
        weights=params[0::2],
        biases=params[1::2],
    )
    adam = AdamState(
        m_weights=moments1[0::2],
        m_biases=moments1[1::2],
        v_weights=moments2[0::2],
        v_biases=moments2[1::2],
        t=adam_t,
    )
    return model, adam, meta
