"""Dense feedforward classifier: inference, softmax and input Jacobians."""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


logger = logging.getLogger(__name__)


WEIGHTS_FORMAT = "jsma-mlp-weights"
WEIGHTS_FORMAT_VERSION = 1


class ModelShapeError(ValueError):
    """Raised when an input or a layer does not fit the network's dimensions."""


class WeightsFormatError(ValueError):
    """Raised when a weights file cannot be parsed."""


class Activation(Enum):
    """Per-layer activation tag."""
    RELU = "relu"
    IDENTITY = "identity"


class JacobianLayer(Enum):
    """Which output a Jacobian is taken at: softmax probabilities or logits."""
    SOFTMAX = "F"
    LOGIT = "Z"


def _frozen(array, ndim: int, what: str) -> np.ndarray:
    values = np.array(array, dtype=np.float64, copy=True)
    if values.ndim != ndim:
        raise ModelShapeError(f"{what} must be {ndim}-dimensional, got shape {values.shape}")
    values.flags.writeable = False
    return values


@dataclass(frozen=True)
class DenseLayer:
    """Affine map ``activation(W x + b)``; ``weights`` has shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        weights = _frozen(self.weights, 2, "weights")
        bias = _frozen(self.bias, 1, "bias")
        if bias.shape[0] != weights.shape[0]:
            raise ModelShapeError(
                f"bias length {bias.shape[0]} does not match {weights.shape[0]} output units"
            )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class NetworkModel:
    """
    Immutable stack of dense layers whose final output is the logit vector Z.

    Arrays are read-only, so one instance can be shared by concurrent attack
    workers.
    """

    def __init__(self, layers: Sequence[DenseLayer]):
        """
        Initialize the model.

        Args:
            layers: Ordered dense layers; the last one must use the identity
                activation and have at least two outputs

        Raises:
            ModelShapeError: If consecutive dimensions do not chain
        """
        if not layers:
            raise ModelShapeError("A network needs at least one layer")

        for k, (current, following) in enumerate(zip(layers, layers[1:])):
            if current.out_dim != following.in_dim:
                raise ModelShapeError(
                    f"Layer {k} outputs {current.out_dim} values but layer {k + 1} expects {following.in_dim}"
                )

        if layers[-1].activation is not Activation.IDENTITY:
            raise ModelShapeError("The final layer must use the identity activation")

        if layers[-1].out_dim < 2:
            raise ModelShapeError(f"class_count must be >= 2, got {layers[-1].out_dim}")

        self._layers = tuple(layers)

    @property
    def layers(self) -> tuple[DenseLayer, ...]:
        return self._layers

    @property
    def input_dim(self) -> int:
        return self._layers[0].in_dim

    @property
    def class_count(self) -> int:
        return self._layers[-1].out_dim

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self._layers[:-1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkModel) or len(self._layers) != len(other._layers):
            return False
        return all(
            a.activation is b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self._layers, other._layers)
        )

    def __repr__(self) -> str:
        dims = [self.input_dim] + [layer.out_dim for layer in self._layers]
        return f"NetworkModel(dims={dims})"

    def describe(self) -> str:
        """Multi-line summary used by the ``inspect`` subcommand."""
        lines = [f"input_dim: {self.input_dim}", f"class_count: {self.class_count}"]
        for k, layer in enumerate(self._layers):
            lines.append(
                f"layer {k}: {layer.in_dim} -> {layer.out_dim} ({layer.activation.value})"
            )
        lines.append(f"parameters: {sum(l.weights.size + l.bias.size for l in self._layers)}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ClassJacobian:
    """C×n matrix of ∂out_c/∂x_i at the softmax (F) or logit (Z) layer."""

    matrix: np.ndarray
    layer: JacobianLayer

    @property
    def class_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def feature_count(self) -> int:
        return self.matrix.shape[1]


def as_features(model: NetworkModel, x) -> np.ndarray:
    """Coerce `x` to a float64 vector of the model's input length."""
    values = np.asarray(x, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != model.input_dim:
        raise ModelShapeError(
            f"Expected a feature vector of length {model.input_dim}, got shape {values.shape}"
        )
    return values


def _pre_activations(model: NetworkModel, x: np.ndarray) -> list[np.ndarray]:
    pre = []
    a = x
    for layer in model.layers:
        z = layer.weights @ a + layer.bias
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation is Activation.RELU else z
    return pre


def forward_logits(model: NetworkModel, x) -> np.ndarray:
    """Raw final-layer outputs Z(x)."""
    return _pre_activations(model, as_features(model, x))[-1]


def softmax(z, temperature: float = 1.0) -> np.ndarray:
    """
    Softmax of ``z / temperature`` with max-subtraction for stability.

    Raises:
        ValueError: If temperature is not strictly positive
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    scaled = np.asarray(z, dtype=np.float64) / temperature
    shifted = np.exp(scaled - np.max(scaled))
    return shifted / np.sum(shifted)


def predict(model: NetworkModel, x) -> int:
    """argmax of f(x); ties go to the lowest class index."""
    return int(np.argmax(forward_logits(model, x)))


def input_jacobian(
    model: NetworkModel,
    x,
    layer: JacobianLayer = JacobianLayer.SOFTMAX,
    temperature: float = 1.0,
) -> ClassJacobian:
    """
    Exact Jacobian of the logits or the softmax with respect to the input.

    All classes are propagated together: starting from the identity at the
    output, each layer multiplies by its ReLU mask (subgradient 0 at exactly
    zero pre-activation) and then by its weight matrix.

    Args:
        model: The classifier
        x: Input feature vector
        layer: SOFTMAX for ∂f/∂x, LOGIT for ∂Z/∂x
        temperature: Softmax temperature, only used for the SOFTMAX layer

    Returns:
        ClassJacobian with a C×n matrix
    """
    x = as_features(model, x)
    pre = _pre_activations(model, x)

    jac = np.eye(model.class_count)
    for dense, z in zip(reversed(model.layers), reversed(pre)):
        if dense.activation is Activation.RELU:
            jac = jac * (z > 0.0)
        jac = jac @ dense.weights

    if layer is JacobianLayer.SOFTMAX:
        probs = softmax(pre[-1], temperature)
        jac = probs[:, None] * (jac - probs @ jac) / temperature

    return ClassJacobian(matrix=jac, layer=layer)


def model_to_text(model: NetworkModel) -> str:
    """Serialize weights to the self-describing JSON text format."""
    document = {
        "format": WEIGHTS_FORMAT,
        "format_version": WEIGHTS_FORMAT_VERSION,
        "input_dim": model.input_dim,
        "class_count": model.class_count,
        "layers": [
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "activation": layer.activation.value,
                # row-major
                "weights": [float(v) for v in layer.weights.ravel()],
                "bias": [float(v) for v in layer.bias],
            }
            for layer in model.layers
        ],
    }
    try:
        return json.dumps(document, indent=1, allow_nan=False) + "\n"
    except ValueError as e:
        raise WeightsFormatError(f"Weights contain non-finite values: {e}")


def model_from_text(text: str) -> NetworkModel:
    """
    Parse the weights text format.

    Raises:
        WeightsFormatError: On malformed documents or unsupported versions
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise WeightsFormatError(f"Weights file is not valid JSON: {e}")

    if not isinstance(document, dict) or document.get("format") != WEIGHTS_FORMAT:
        raise WeightsFormatError("Not a weights document")

    version = document.get("format_version")
    if version != WEIGHTS_FORMAT_VERSION:
        raise WeightsFormatError(f"Unsupported weights format_version: {version}")

    try:
        layers = []
        for k, entry in enumerate(document["layers"]):
            in_dim, out_dim = int(entry["in_dim"]), int(entry["out_dim"])
            weights = np.array(entry["weights"], dtype=np.float64)
            if weights.size != in_dim * out_dim:
                raise WeightsFormatError(
                    f"Layer {k} declares {out_dim}x{in_dim} weights but stores {weights.size}"
                )
            layers.append(DenseLayer(
                weights=weights.reshape(out_dim, in_dim),
                bias=np.array(entry["bias"], dtype=np.float64),
                activation=Activation(entry["activation"]),
            ))
        model = NetworkModel(layers)
    except (KeyError, TypeError) as e:
        raise WeightsFormatError(f"Weights document is missing a field: {e}")
    except ModelShapeError as e:
        raise WeightsFormatError(str(e))
    except ValueError as e:
        if isinstance(e, WeightsFormatError):
            raise
        raise WeightsFormatError(f"Invalid weights document: {e}")

    if model.input_dim != document.get("input_dim") or model.class_count != document.get("class_count"):
        raise WeightsFormatError("input_dim/class_count header does not match the layers")

    return model
