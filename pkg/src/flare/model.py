"""Minimal dense multi-class classifier used by clients and sensors.

Plain numpy implementation: relu hidden layers, softmax output,
mean cross-entropy loss, full-batch gradient descent, and a compact
little-endian wire format (optionally 8-bit affine-quantized) for
shipping models to sensors with exact byte accounting.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DeploymentError, NumericError

__all__ = [
    "Layer",
    "ModelParams",
    "Prediction",
    "SerializedModel",
    "init_model",
    "softmax",
    "forward",
    "predict_proba",
    "cross_entropy_loss",
    "sgd_step",
    "evaluate_accuracy",
    "convert_model",
    "deserialize_model",
]

ACTIVATIONS = ("relu", "softmax")

# Probability of the true class is clamped here before taking the log so a
# fully-wrong prediction yields a large finite loss instead of -inf.
PROB_CLAMP = 1e-12

MAGIC = b"FLRM"
WIRE_VERSION = 1
_HEADER = struct.Struct("<4sHBH")        # magic, version, quantized, n_layers
_LAYER_HEADER = struct.Struct("<IIB")    # rows, cols, activation tag
_QPARAMS = struct.Struct("<ff")          # scale, zero_point


@dataclass(frozen=True)
class Layer:
    """One dense layer: weights (out, in), biases (out,), activation tag."""

    weights: np.ndarray = field(repr=False)
    biases: np.ndarray = field(repr=False)
    activation: str = "relu"


@dataclass(frozen=True)
class ModelParams:
    """Parameters of a dense classifier; the unit that is trained, averaged,
    serialized, and deployed."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ContractError("model needs at least one layer")
        prev_out = None
        for k, layer in enumerate(self.layers):
            w, b = np.asarray(layer.weights), np.asarray(layer.biases)
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ContractError(f"layer {k}: weights {w.shape} / biases {b.shape} malformed")
            if prev_out is not None and w.shape[1] != prev_out:
                raise ContractError(
                    f"layer {k}: input dim {w.shape[1]} != previous output dim {prev_out}"
                )
            if layer.activation not in ACTIVATIONS:
                raise ContractError(f"layer {k}: unknown activation {layer.activation!r}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ContractError(f"layer {k}: non-finite parameters")
            prev_out = w.shape[0]
        if self.layers[-1].activation != "softmax":
            raise ContractError("final layer must use softmax")
        if any(l.activation != "relu" for l in self.layers[:-1]):
            raise ContractError("hidden layers must use relu")
        if self.n_classes < 2:
            raise ContractError("output layer needs at least 2 classes")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def n_parameters(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)


@dataclass(frozen=True)
class Prediction:
    """Predicted class, its confidence, and the full probability vector."""

    label: int
    confidence: float
    probabilities: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SerializedModel:
    """A wire-format model blob plus its exact size for traffic accounting."""

    data: bytes = field(repr=False)
    byte_count: int
    quantized: bool


def init_model(layer_dims, seed: int) -> ModelParams:
    """He-style random initialization for the given layer sizes.

    `layer_dims` is (input, hidden..., classes); a two-entry tuple yields a
    purely linear softmax classifier.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ContractError(f"need at least (input, classes) positive dims, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
        act = "softmax" if k == len(dims) - 2 else "relu"
        layers.append(Layer(w, np.zeros(d_out), act))
    return ModelParams(tuple(layers))


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    Outputs are nudged into the open interval (0, 1) so downstream code can
    always take logs and treat entries as proper probabilities even for
    logits of magnitude ~1e6.
    """
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.clip(p, 1e-300, np.nextafter(1.0, 0.0))


def _check_features(model: ModelParams, x: np.ndarray):
    if x.shape[-1] != model.input_dim:
        raise ContractError(
            f"feature dim {x.shape[-1]} does not match model input dim {model.input_dim}"
        )
    if not np.isfinite(x).all():
        raise ContractError("features contain non-finite values")


def predict_proba(model: ModelParams, features) -> np.ndarray:
    """Class probabilities for a batch of feature rows, shape (n, C)."""
    x = np.atleast_2d(np.asarray(features))
    _check_features(model, x)
    for k, layer in enumerate(model.layers):
        z = x @ layer.weights.T + layer.biases
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite activations at layer {k}")
        x = softmax(z) if layer.activation == "softmax" else np.maximum(z, 0.0)
    return x


def forward(model: ModelParams, features) -> Prediction:
    """Run one sample through the network and report the softmax prediction."""
    x = np.asarray(features)
    if x.ndim != 1:
        raise ContractError(f"forward expects a single feature vector, got shape {x.shape}")
    probs = predict_proba(model, x)[0]
    label = int(np.argmax(probs))
    return Prediction(label=label, confidence=float(probs[label]), probabilities=probs)


def confidences(model: ModelParams, features) -> np.ndarray:
    """Max softmax probability per sample; the statistic sensors monitor."""
    return predict_proba(model, features).max(axis=1)


def cross_entropy_loss(model: ModelParams, batch) -> float:
    """Mean negative log-probability of the true class over the batch."""
    features, labels = _batch_arrays(batch)
    probs = predict_proba(model, features)
    p_true = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(p_true, PROB_CLAMP)).mean())


def _loss_and_grads(model: ModelParams, features: np.ndarray, labels: np.ndarray):
    """Forward + backward pass; returns (loss, [(dW, db) per layer])."""
    n = labels.size
    acts = [features]
    zs = []
    x = features
    for layer in model.layers:
        z = x @ layer.weights.T + layer.biases
        zs.append(z)
        x = softmax(z) if layer.activation == "softmax" else np.maximum(z, 0.0)
        acts.append(x)
    probs = acts[-1]
    p_true = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(p_true, PROB_CLAMP)).mean())

    # Softmax + cross-entropy collapse to (p - y)/n at the output.
    dz = probs.copy()
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    grads = [None] * len(model.layers)
    for k in range(len(model.layers) - 1, -1, -1):
        grads[k] = (dz.T @ acts[k], dz.sum(axis=0))
        if k > 0:
            dz = (dz @ model.layers[k].weights) * (zs[k - 1] > 0.0)
    return loss, grads


def sgd_step(model: ModelParams, batch, learning_rate: float) -> ModelParams:
    """One full-batch gradient-descent step; returns the updated model.

    A learning rate of zero is allowed (no-op) so oracle tests can probe the
    gradient path; negative rates are rejected.
    """
    if learning_rate < 0:
        raise ContractError(f"learning rate must be >= 0, got {learning_rate}")
    features, labels = _batch_arrays(batch)
    _check_features(model, features)
    _, grads = _loss_and_grads(model, features, labels)
    new_layers = []
    for k, (layer, (dw, db)) in enumerate(zip(model.layers, grads)):
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise NumericError(f"non-finite gradient at layer {k}")
        new_layers.append(
            Layer(
                layer.weights - learning_rate * dw,
                layer.biases - learning_rate * db,
                layer.activation,
            )
        )
    return ModelParams(tuple(new_layers))


def evaluate_accuracy(model: ModelParams, dataset) -> float:
    """Fraction of samples whose argmax prediction (ties -> lowest class
    index) equals the label."""
    features, labels = _batch_arrays(dataset)
    probs = predict_proba(model, features)
    return float((probs.argmax(axis=1) == labels).mean())


def _batch_arrays(batch):
    features = np.atleast_2d(np.asarray(batch.features))
    labels = np.asarray(batch.labels)
    if labels.size == 0:
        raise ContractError("batch must be non-empty")
    return features, labels


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

_TAG_FOR = {"relu": 0, "softmax": 1}
_ACT_FOR = {v: k for k, v in _TAG_FOR.items()}


def convert_model(model: ModelParams, quantize: bool = False) -> SerializedModel:
    """Serialize to the deployment wire format (little-endian float32, or
    8-bit affine-quantized per layer with a float32 scale/zero-point pair)."""
    parts = [_HEADER.pack(MAGIC, WIRE_VERSION, int(quantize), len(model.layers))]
    for layer in model.layers:
        rows, cols = layer.weights.shape
        parts.append(_LAYER_HEADER.pack(rows, cols, _TAG_FOR[layer.activation]))
        payload = np.concatenate([layer.weights.ravel(), layer.biases])
        if quantize:
            lo = float(payload.min())
            hi = float(payload.max())
            scale = (hi - lo) / 255.0
            if scale > 0.0:
                q = np.clip(np.rint((payload - lo) / scale), 0, 255).astype(np.uint8)
            else:
                q = np.zeros(payload.size, dtype=np.uint8)
            parts.append(q.tobytes())
            parts.append(_QPARAMS.pack(scale, lo))
        else:
            parts.append(payload.astype("<f4").tobytes())
    blob = b"".join(parts)
    return SerializedModel(data=blob, byte_count=len(blob), quantized=quantize)


def serialized_size(layer_dims, quantize: bool = False) -> int:
    """Exact wire size in bytes for a model with the given layer sizes."""
    dims = list(layer_dims)
    total = _HEADER.size
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        n = d_out * d_in + d_out
        total += _LAYER_HEADER.size + (n + _QPARAMS.size if quantize else 4 * n)
    return total


def deserialize_model(blob: bytes) -> ModelParams:
    """Decode a wire-format blob; raises DeploymentError on any defect."""
    try:
        magic, version, quantized, n_layers = _HEADER.unpack_from(blob, 0)
    except struct.error as exc:
        raise DeploymentError(f"blob too short for header: {exc}") from exc
    if magic != MAGIC:
        raise DeploymentError(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise DeploymentError(f"unsupported wire version {version}")
    offset = _HEADER.size
    layers = []
    for k in range(n_layers):
        try:
            rows, cols, tag = _LAYER_HEADER.unpack_from(blob, offset)
        except struct.error as exc:
            raise DeploymentError(f"layer {k}: truncated header at byte {offset}") from exc
        offset += _LAYER_HEADER.size
        if tag not in _ACT_FOR:
            raise DeploymentError(f"layer {k}: unknown activation tag {tag}")
        n = rows * cols + rows
        if quantized:
            end = offset + n + _QPARAMS.size
            if end > len(blob):
                raise DeploymentError(f"layer {k}: truncated payload at byte {offset}")
            q = np.frombuffer(blob, dtype=np.uint8, count=n, offset=offset)
            scale, zero_point = _QPARAMS.unpack_from(blob, offset + n)
            payload = zero_point + scale * q.astype(np.float64)
        else:
            end = offset + 4 * n
            if end > len(blob):
                raise DeploymentError(f"layer {k}: truncated payload at byte {offset}")
            payload = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        offset = end
        w = payload[: rows * cols].reshape(rows, cols)
        b = payload[rows * cols :]
        layers.append(Layer(np.array(w), np.array(b), _ACT_FOR[tag]))
    if offset != len(blob):
        raise DeploymentError(f"{len(blob) - offset} trailing bytes after layer payloads")
    try:
        return ModelParams(tuple(layers))
    except ContractError as exc:
        raise DeploymentError(f"decoded parameters invalid: {exc}") from exc
