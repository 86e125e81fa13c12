"""Back-propagation network with batch normalization.

The layer stack is ``[dense, batch_norm, activation] * len(hidden_sizes)``
followed by ``dense -> softmax`` over two classes.  Dense layers that feed
a batch-norm carry no bias: the batch-norm subtracts the batch mean, which
cancels any constant shift, and its beta takes over that role.

All learnable parameters live in one flat float64 vector (``Model.params``);
each layer holds reshaped views into it.  Gradients use the same layout, so
an optimizer step is a handful of vector operations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BatchSizeError, ConfigError, ShapeError
from .numerics import Rng, fmt17, matmul

FORMAT_VERSION = 1
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
HIDDEN_ACTIVATIONS = ("sigmoid", "relu")


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ModelConfig:
    input_dim: int
    hidden_sizes: tuple[int, ...] = (64, 32, 16)
    activation: str = "sigmoid"
    output_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden layer sizes must be positive, got {list(self.hidden_sizes)}")
        if self.activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"activation must be one of {HIDDEN_ACTIVATIONS}, got {self.activation!r}")
        if self.output_dim != 2:
            raise ConfigError("output_dim is fixed at 2 (binary diagnosis)")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
            "output_dim": self.output_dim,
            "seed": self.seed,
        }


class Dense:
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"dense layer needs positive sizes, got {in_dim}->{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.has_bias = bias
        self.weight = None
        self.bias = None

    @property
    def out_features(self):
        return self.out_dim

    def param_shapes(self):
        shapes = [("weight", (self.in_dim, self.out_dim))]
        if self.has_bias:
            shapes.append(("bias", (self.out_dim,)))
        return shapes

    def spec(self):
        return {"kind": "dense", "in": self.in_dim, "out": self.out_dim, "bias": self.has_bias}


class BatchNorm:
    kind = "batch_norm"

    def __init__(self, dim: int, epsilon: float = BN_EPSILON, momentum: float = BN_MOMENTUM):
        if dim < 1:
            raise ConfigError(f"batch-norm dim must be positive, got {dim}")
        if epsilon <= 0:
            raise ConfigError("batch-norm epsilon must be positive")
        self.dim = dim
        self.epsilon = epsilon
        self.momentum = momentum
        self.gamma = None
        self.beta = None
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    @property
    def out_features(self):
        return self.dim

    def param_shapes(self):
        return [("gamma", (self.dim,)), ("beta", (self.dim,))]

    def spec(self):
        return {"kind": "batch_norm", "dim": self.dim, "epsilon": self.epsilon, "momentum": self.momentum}


class Activation:
    kind = "activation"

    def __init__(self, fn: str):
        if fn not in ("sigmoid", "relu", "softmax"):
            raise ConfigError(f"unknown activation {fn!r}")
        self.fn = fn

    def param_shapes(self):
        return []

    def spec(self):
        return {"kind": "activation", "fn": self.fn}


@dataclass
class ForwardCache:
    """Per-layer values kept by a train-mode forward pass for ``backward``."""

    inputs: list
    extras: list
    probs: np.ndarray
    n_rows: int = field(init=False)

    def __post_init__(self):
        self.n_rows = self.probs.shape[0]


class Model:
    def __init__(self, layers, config: ModelConfig | None = None):
        self.layers = list(layers)
        self.config = config
        self._check_chain()
        self.slots = []
        offset = 0
        for li, layer in enumerate(self.layers):
            for name, shape in layer.param_shapes():
                size = int(np.prod(shape))
                self.slots.append((li, name, slice(offset, offset + size), shape))
                offset += size
        self.params = np.zeros(offset)
        self._bind()

    def _check_chain(self):
        width = None
        for layer in self.layers:
            if isinstance(layer, Dense):
                if width is not None and layer.in_dim != width:
                    raise ConfigError(f"dense layer expects {layer.in_dim} inputs but receives {width}")
                width = layer.out_dim
            elif isinstance(layer, BatchNorm):
                if layer.dim != width:
                    raise ConfigError(f"batch-norm of dim {layer.dim} follows a layer of width {width}")
        if not self.layers or not isinstance(self.layers[-1], Activation) or self.layers[-1].fn != "softmax":
            raise ConfigError("the final layer must be a softmax activation")
        if not isinstance(self.layers[0], Dense):
            raise ConfigError("the first layer must be dense")

    def _bind(self):
        for li, name, sl, shape in self.slots:
            setattr(self.layers[li], name, self.params[sl].reshape(shape))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    def dense_layers(self):
        return [layer for layer in self.layers if isinstance(layer, Dense)]

    def batch_norms(self):
        return [layer for layer in self.layers if isinstance(layer, BatchNorm)]

    def named(self, flat: np.ndarray) -> dict:
        """Named views of a flat vector laid out like ``params``."""
        return {f"layer{li}.{name}": flat[sl].reshape(shape) for li, name, sl, shape in self.slots}

    def copy(self) -> "Model":
        clone = Model([_clone_layer(layer) for layer in self.layers], self.config)
        clone.params[:] = self.params
        for src, dst in zip(self.batch_norms(), clone.batch_norms()):
            dst.running_mean = src.running_mean.copy()
            dst.running_var = src.running_var.copy()
        return clone

    def forward(self, batch: np.ndarray, mode: str = "infer", update_running: bool = True):
        """Run the network; returns ``(probs, cache)``.

        In ``"train"`` mode batch-norm normalizes with the batch's own
        statistics, folds them into the running averages (unless
        ``update_running`` is false) and a :class:`ForwardCache` is returned.
        In ``"infer"`` mode the running averages are used and the cache is
        ``None``.
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"model expects (n, {self.input_dim}) input, got {x.shape}")
        train = mode == "train"
        if train and x.shape[0] < 2:
            raise BatchSizeError("train-mode forward needs at least 2 rows (batch variance is undefined for 1)")
        inputs, extras = [], []
        for layer in self.layers:
            inputs.append(x)
            extra = None
            if isinstance(layer, Dense):
                x = matmul(x, layer.weight)
                if layer.has_bias:
                    x = x + layer.bias
            elif isinstance(layer, BatchNorm):
                if train:
                    mean = x.mean(axis=0)
                    centered = x - mean
                    var = (centered * centered).mean(axis=0)
                    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
                    xhat = centered * inv_std
                    if update_running:
                        rho = layer.momentum
                        layer.running_mean = (1.0 - rho) * layer.running_mean + rho * mean
                        layer.running_var = (1.0 - rho) * layer.running_var + rho * var
                    extra = (xhat, inv_std)
                else:
                    xhat = (x - layer.running_mean) / np.sqrt(layer.running_var + layer.epsilon)
                x = layer.gamma * xhat + layer.beta
            else:
                if layer.fn == "sigmoid":
                    x = sigmoid(x)
                elif layer.fn == "relu":
                    x = np.maximum(x, 0.0)
                else:
                    x = softmax(x)
                extra = x
            extras.append(extra)
        if not train:
            return x, None
        return x, ForwardCache(inputs, extras, x)

    def backward(self, cache: ForwardCache, labels) -> np.ndarray:
        """Gradient of mean cross-entropy w.r.t. ``params`` (same flat layout)."""
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        n = cache.n_rows
        if len(y) != n:
            raise ShapeError(f"cache holds {n} rows but {len(y)} labels were given")
        if len(cache.inputs) != len(self.layers):
            raise ShapeError("cache does not belong to this model")
        grad = np.zeros_like(self.params)
        views = {}
        for li, name, sl, shape in self.slots:
            views[(li, name)] = grad[sl].reshape(shape)

        # fused softmax + cross-entropy
        delta = cache.probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        for li in range(len(self.layers) - 2, -1, -1):
            layer = self.layers[li]
            if isinstance(layer, Dense):
                x_in = cache.inputs[li]
                np.einsum("ni,no->io", x_in, delta, out=views[(li, "weight")])
                if layer.has_bias:
                    views[(li, "bias")][...] = delta.sum(axis=0)
                if li > 0:
                    delta = np.einsum("no,io->ni", delta, layer.weight)
            elif isinstance(layer, BatchNorm):
                xhat, inv_std = cache.extras[li]
                views[(li, "gamma")][...] = (delta * xhat).sum(axis=0)
                views[(li, "beta")][...] = delta.sum(axis=0)
                dxhat = delta * layer.gamma
                delta = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                out = cache.extras[li]
                if layer.fn == "sigmoid":
                    delta = delta * out * (1.0 - out)
                elif layer.fn == "relu":
                    delta = delta * (out > 0.0)
                else:
                    raise ConfigError("softmax is only supported as the final layer")
        return grad

    def predict(self, features: np.ndarray):
        """Inference-mode classes and probabilities; an exact tie goes to class 0."""
        probs, _ = self.forward(features, mode="infer")
        return (probs[:, 1] > probs[:, 0]).astype(np.int64), probs

    def to_dict(self) -> dict:
        layers = []
        for li, layer in enumerate(self.layers):
            entry = layer.spec()
            params = {name: self.params[sl] for lj, name, sl, _ in self.slots if lj == li}
            if params:
                entry["params"] = params
            if isinstance(layer, BatchNorm):
                entry["running_mean"] = layer.running_mean
                entry["running_var"] = layer.running_var
            layers.append(entry)
        return {
            "format_version": FORMAT_VERSION,
            "rng_algorithm": Rng.algorithm,
            "config": self.config.to_dict() if self.config is not None else None,
            "layers": layers,
        }

    def to_json(self) -> str:
        return _dumps_with_floats(self.to_dict())

    def save(self, path):
        from .io import atomic_write_text

        atomic_write_text(path, self.to_json())

    @classmethod
    def from_dict(cls, doc: dict) -> "Model":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported model format version {doc.get('format_version')!r}")
        layers = []
        for entry in doc["layers"]:
            kind = entry["kind"]
            if kind == "dense":
                layers.append(Dense(entry["in"], entry["out"], entry["bias"]))
            elif kind == "batch_norm":
                layers.append(BatchNorm(entry["dim"], entry["epsilon"], entry["momentum"]))
            elif kind == "activation":
                layers.append(Activation(entry["fn"]))
            else:
                raise ConfigError(f"unknown layer kind {kind!r}")
        config = ModelConfig(**doc["config"]) if doc.get("config") else None
        model = cls(layers, config)
        for li, name, sl, shape in model.slots:
            values = np.asarray(doc["layers"][li]["params"][name], dtype=np.float64)
            if values.size != sl.stop - sl.start:
                raise ShapeError(f"layer {li} {name}: expected {shape}, got {values.size} values")
            model.params[sl] = values
        for li, layer in enumerate(model.layers):
            if isinstance(layer, BatchNorm):
                layer.running_mean = np.asarray(doc["layers"][li]["running_mean"], dtype=np.float64)
                layer.running_var = np.asarray(doc["layers"][li]["running_var"], dtype=np.float64)
        return model

    @classmethod
    def from_json(cls, text: str) -> "Model":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _clone_layer(layer):
    if isinstance(layer, Dense):
        return Dense(layer.in_dim, layer.out_dim, layer.has_bias)
    if isinstance(layer, BatchNorm):
        return BatchNorm(layer.dim, layer.epsilon, layer.momentum)
    return Activation(layer.fn)


def _dumps_with_floats(doc) -> str:
    """JSON text where every array of floats is written with 17 significant digits."""
    arrays = []

    def stash(obj):
        if isinstance(obj, np.ndarray):
            arrays.append("[" + ", ".join(fmt17(v) for v in obj.ravel()) + "]")
            return f"@@ARRAY{len(arrays) - 1}@@"
        if isinstance(obj, dict):
            return {k: stash(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [stash(v) for v in obj]
        return obj

    text = json.dumps(stash(doc), indent=1)
    for i, body in enumerate(arrays):
        text = text.replace(f'"@@ARRAY{i}@@"', body, 1)
    return text + "\n"


def build(config: ModelConfig, rng: Rng | None = None) -> Model:
    """Construct and initialize the network described by ``config``.

    Weights are Glorot-uniform, drawn layer by layer from ``rng`` (or from
    ``Rng(config.seed)``); biases and betas start at 0, gammas at 1 and the
    batch-norm running statistics at mean 0, variance 1.
    """
    if rng is None:
        rng = Rng(config.seed)
    layers = []
    width = config.input_dim
    for h in config.hidden_sizes:
        layers += [Dense(width, h, bias=False), BatchNorm(h), Activation(config.activation)]
        width = h
    layers += [Dense(width, config.output_dim, bias=True), Activation("softmax")]
    model = Model(layers, config)
    for layer in model.layers:
        if isinstance(layer, Dense):
            bound = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            layer.weight[...] = rng.uniform_range(-bound, bound, layer.weight.shape)
        elif isinstance(layer, BatchNorm):
            layer.gamma[...] = 1.0
    return model


def softmax_regression(input_dim: int, rng: Rng | None = None) -> Model:
    """A single dense layer into softmax (no hidden layers, no batch-norm)."""
    return build(ModelConfig(input_dim=input_dim, hidden_sizes=(), seed=0), rng)


def predict(model: Model, features: np.ndarray):
    return model.predict(features)


def forward(model: Model, batch: np.ndarray, mode: str = "infer"):
    return model.forward(batch, mode)


def backward(model: Model, cache: ForwardCache, labels) -> np.ndarray:
    return model.backward(cache, labels)


def gradient_check(model: Model, batch: np.ndarray, labels, step: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Works on a copy, and train-mode passes here leave running statistics
    untouched.  Relative error uses ``max(|analytic|, |numeric|, 1e-12)`` as
    the denominator.
    """
    from .training import cross_entropy

    if step <= 0:
        raise ValueError("step must be positive")
    net = model.copy()
    y = np.asarray(labels, dtype=np.int64)
    probs, cache = net.forward(batch, "train", update_running=False)
    analytic = net.backward(cache, y)

    def loss():
        p, _ = net.forward(batch, "train", update_running=False)
        return cross_entropy(p, y)[0]

    worst = 0.0
    theta = net.params
    for i in range(theta.size):
        saved = theta[i]
        theta[i] = saved + step
        up = loss()
        theta[i] = saved - step
        down = loss()
        theta[i] = saved
        numeric = (up - down) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
