"""Dense feedforward autoencoders in plain numpy.

Everything that turns an input vector into a reconstruction error lives here:
layer construction, the forward pass, the training objective (squared
reconstruction error plus optional KL sparsity and L2 penalties), exact
backpropagation, mini-batch gradient descent, and a text serialization.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError

SIGMOID = "sigmoid"
LINEAR = "linear"
ACTIVATIONS = (SIGMOID, LINEAR)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = SIGMOID

    def __post_init__(self):
        if int(self.in_dim) < 1 or int(self.out_dim) < 1:
            raise ConfigError(f"layer dimensions must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    The sparsity and weight-decay defaults follow the usual sparse-autoencoder
    toolbox settings; all of them can be overridden.
    """

    epochs: int = 10
    learning_rate: float = 0.1
    batch_size: int = 32
    sparsity_target: float = 0.05
    sparsity_weight: float = 1.0
    l2_weight: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.sparsity_target < 1:
            raise ConfigError("sparsity_target must lie in (0, 1)")
        if self.sparsity_weight < 0 or self.l2_weight < 0:
            raise ConfigError("regularization weights must be >= 0")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


@dataclass
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = SIGMOID

    @property
    def spec(self) -> LayerSpec:
        out_dim, in_dim = self.weights.shape
        return LayerSpec(in_dim, out_dim, self.activation)


@dataclass
class AEModel:
    """Encoder layers followed by decoder layers.

    ``arch`` is ``"ae"`` (one hidden layer), ``"sae"`` (three hidden layers
    with mirrored widths) or ``"custom"`` for hand-built nets.
    """

    layers: list
    arch: str = "ae"
    train_config: TrainConfig | None = None
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def dims(self) -> list:
        """Layer widths from input to output, e.g. ``[768, 31, 768]``."""
        return [self.input_dim] + [layer.weights.shape[0] for layer in self.layers]

    @property
    def bottleneck_index(self) -> int:
        """Index into the hidden activations of the narrowest hidden layer."""
        widths = self.dims[1:-1]
        return int(np.argmin(widths)) if widths else 0

    def copy(self) -> "AEModel":
        return AEModel(
            layers=[Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers],
            arch=self.arch,
            train_config=self.train_config,
            meta=copy.deepcopy(self.meta),
        )


def _infer_arch(specs) -> str:
    if len(specs) == 2:
        return "ae"
    if len(specs) == 4:
        return "sae"
    return "custom"


def _check_chain(specs):
    if not specs:
        raise ConfigError("at least one layer is required")
    for i, (a, b) in enumerate(zip(specs, specs[1:])):
        if a.out_dim != b.in_dim:
            raise ConfigError(
                f"layer {i} outputs {a.out_dim} values but layer {i + 1} expects {b.in_dim}"
            )
    if specs[-1].out_dim != specs[0].in_dim:
        raise ConfigError(
            f"decoder output {specs[-1].out_dim} does not match input dimension {specs[0].in_dim}"
        )


def init_model(specs, seed: int = 0, arch: str | None = None) -> AEModel:
    """Initialize weights uniformly in +-1/sqrt(in_dim); biases start at zero."""
    specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
    _check_chain(specs)
    arch = arch or _infer_arch(specs)
    if arch == "sae":
        widths = [s.out_dim for s in specs[:-1]]
        if len(widths) != 3 or widths[0] != widths[2]:
            raise ConfigError(f"stacked autoencoder widths must mirror, got {widths}")
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    layers = []
    for s in specs:
        limit = 1.0 / math.sqrt(s.in_dim)
        w = rng.uniform(-limit, limit, size=(s.out_dim, s.in_dim))
        layers.append(Layer(w, np.zeros(s.out_dim), s.activation))
    return AEModel(layers, arch=arch)


def layer_specs(input_dim: int, arch: str = "ae", hidden: int = 31) -> list:
    """Layer specs for the two architectures used by the detectors.

    ``ae``: input -> hidden -> input. ``sae``: input -> input/2 -> hidden ->
    input/2 -> input.
    """
    if arch == "ae":
        widths = [input_dim, hidden, input_dim]
    elif arch == "sae":
        half = input_dim // 2
        if half < 1:
            raise ConfigError("stacked autoencoder needs input_dim >= 2")
        widths = [input_dim, half, hidden, half, input_dim]
    else:
        raise ConfigError(f"unknown architecture {arch!r}")
    return [LayerSpec(a, b, SIGMOID) for a, b in zip(widths, widths[1:])]


def _activate(z, activation):
    if activation == SIGMOID:
        # split by sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(a, activation):
    """Derivative of the activation expressed through its output."""
    if activation == SIGMOID:
        return a * (1.0 - a)
    return np.ones_like(a)


def _as_batch(model: AEModel, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InputError("expected a non-empty vector or batch of vectors")
    if arr.shape[1] != model.input_dim:
        raise InputError(f"input has length {arr.shape[1]}, model expects {model.input_dim}")
    return arr


def _forward_batch(model: AEModel, X: np.ndarray) -> list:
    acts = [X]
    for layer in model.layers:
        acts.append(_activate(acts[-1] @ layer.weights.T + layer.bias, layer.activation))
    return acts


def forward(model: AEModel, x):
    """Return ``(hidden, y)``: the activation of every hidden layer and the output.

    Accepts one vector or a 2-D batch; the return shapes follow the input.
    """
    single = np.ndim(x) == 1
    acts = _forward_batch(model, _as_batch(model, x))
    if single:
        return [a[0] for a in acts[1:-1]], acts[-1][0]
    return acts[1:-1], acts[-1]


def reconstruction_errors(model: AEModel, X) -> np.ndarray:
    """Squared Euclidean reconstruction error per row of ``X``."""
    X = _as_batch(model, X)
    y = _forward_batch(model, X)[-1]
    return np.sum((X - y) ** 2, axis=1)


def reconstruction_error(model: AEModel, x) -> float:
    if np.ndim(x) != 1:
        raise InputError("reconstruction_error takes a single vector")
    return float(reconstruction_errors(model, x)[0])


def _sparse_layers(model: AEModel):
    # KL sparsity only makes sense for hidden units bounded in (0, 1)
    return [i for i, l in enumerate(model.layers[:-1]) if l.activation == SIGMOID]


def _kl(target, mean_act):
    mean_act = np.clip(mean_act, 1e-12, 1 - 1e-12)
    return np.sum(
        target * np.log(target / mean_act) + (1 - target) * np.log((1 - target) / (1 - mean_act))
    )


def _loss_terms(model, acts, X, cfg):
    recon = np.mean(np.sum((X - acts[-1]) ** 2, axis=1))
    sparsity = 0.0
    if cfg.sparsity_weight:
        for i in _sparse_layers(model):
            sparsity += _kl(cfg.sparsity_target, acts[i + 1].mean(axis=0))
    l2 = sum(np.sum(l.weights**2) for l in model.layers) if cfg.l2_weight else 0.0
    return recon, sparsity, l2


def batch_loss(model: AEModel, batch, cfg: TrainConfig | None = None) -> float:
    """Mean squared reconstruction error plus sparsity and weight penalties."""
    cfg = cfg or TrainConfig()
    X = _as_batch(model, batch)
    acts = _forward_batch(model, X)
    recon, sparsity, l2 = _loss_terms(model, acts, X, cfg)
    return float(recon + cfg.sparsity_weight * sparsity + cfg.l2_weight * l2)


def backprop_gradients(model: AEModel, batch, cfg: TrainConfig | None = None) -> list:
    """Exact gradient of :func:`batch_loss` as a list of ``(dW, db)`` per layer."""
    cfg = cfg or TrainConfig()
    X = _as_batch(model, batch)
    m = X.shape[0]
    acts = _forward_batch(model, X)
    sparse = set(_sparse_layers(model)) if cfg.sparsity_weight else set()

    grads = [None] * len(model.layers)
    d_act = 2.0 * (acts[-1] - X) / m
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        out = acts[i + 1]
        if i in sparse:
            rho_hat = np.clip(out.mean(axis=0), 1e-12, 1 - 1e-12)
            rho = cfg.sparsity_target
            d_act = d_act + cfg.sparsity_weight * (-rho / rho_hat + (1 - rho) / (1 - rho_hat)) / m
        delta = d_act * _activation_grad(out, layer.activation)
        dW = delta.T @ acts[i] + 2.0 * cfg.l2_weight * layer.weights
        db = delta.sum(axis=0)
        grads[i] = (dW, db)
        d_act = delta @ layer.weights
    return grads


def train(model: AEModel, data, cfg: TrainConfig | None = None, callback=None) -> AEModel:
    """Mini-batch gradient descent with a seeded shuffle each epoch.

    The input model is left untouched. ``callback(epoch, model)`` is invoked
    after every epoch if given.
    """
    cfg = cfg or TrainConfig()
    X = _as_batch(model, data)
    out = model.copy()
    rng = np.random.default_rng(int(cfg.seed) & (2**64 - 1))
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            for layer, (dW, db) in zip(out.layers, backprop_gradients(out, X[idx], cfg)):
                layer.weights -= cfg.learning_rate * dW
                layer.bias -= cfg.learning_rate * db
        if callback is not None:
            callback(epoch + 1, out)
    out.train_config = cfg
    return out


def numeric_gradients(model: AEModel, batch, cfg: TrainConfig | None = None, eps=1e-5) -> list:
    """Central-difference gradients of :func:`batch_loss`, same layout as backprop."""
    if not eps > 0:
        raise InputError("eps must be > 0")
    cfg = cfg or TrainConfig()
    X = _as_batch(model, batch)
    probe = model.copy()
    grads = []
    for layer in probe.layers:
        pair = []
        for param in (layer.weights, layer.bias):
            g = np.zeros_like(param)
            flat, gflat = param.reshape(-1), g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                up = batch_loss(probe, X, cfg)
                flat[k] = orig - eps
                down = batch_loss(probe, X, cfg)
                flat[k] = orig
                gflat[k] = (up - down) / (2 * eps)
            pair.append(g)
        grads.append(tuple(pair))
    return grads


def _relative_error(a, b) -> float:
    num = np.linalg.norm(a - b)
    den = np.linalg.norm(a) + np.linalg.norm(b)
    if den == 0:
        return 0.0
    return float(num / den)


def gradient_check(model: AEModel, batch, eps=1e-5, cfg=None, gradient_fn=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / (|a| + |n|)`` per parameter array (weights
    and biases of each layer separately), maximized over arrays.
    """
    if not eps > 0:
        raise InputError("eps must be > 0")
    gradient_fn = gradient_fn or backprop_gradients
    analytic = gradient_fn(model, batch, cfg)
    numeric = numeric_gradients(model, batch, cfg, eps)
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        worst = max(worst, _relative_error(aw, nw), _relative_error(ab, nb))
    return worst


# -- serialization ---------------------------------------------------------


def model_to_dict(model: AEModel, scaler=None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "arch": model.arch,
        "dims": model.dims,
        "layers": [
            {
                "in_dim": l.weights.shape[1],
                "out_dim": l.weights.shape[0],
                "activation": l.activation,
                "weights": l.weights.ravel().tolist(),
                "bias": l.bias.tolist(),
            }
            for l in model.layers
        ],
        "train_config": asdict(model.train_config) if model.train_config else None,
        "scaler": scaler.to_dict() if scaler is not None else None,
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> AEModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported model format version {d.get('format_version')!r}")
    layers = []
    for spec in d["layers"]:
        w = np.asarray(spec["weights"], dtype=float).reshape(spec["out_dim"], spec["in_dim"])
        layers.append(Layer(w, np.asarray(spec["bias"], dtype=float), spec["activation"]))
    _check_chain([l.spec for l in layers])
    cfg = TrainConfig(**d["train_config"]) if d.get("train_config") else None
    return AEModel(layers, arch=d["arch"], train_config=cfg, meta=d.get("meta") or {})


def dumps_model(model: AEModel, scaler=None) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(model_to_dict(model, scaler), indent=1)


def loads_model(text: str) -> AEModel:
    return model_from_dict(json.loads(text))


def save_model(model: AEModel, path, scaler=None):
    with open(path, "w") as fh:
        fh.write(dumps_model(model, scaler))


def load_model(path) -> AEModel:
    with open(path) as fh:
        return loads_model(fh.read())
