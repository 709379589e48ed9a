"""One-class nearest neighbour on autoencoder bottleneck features.

For a test feature ``x`` let ``z`` be its nearest training feature,
``d1 = |x - z|`` and ``d2`` the distance from ``z`` to its own nearest other
training feature. ``x`` is a fall when ``d1 / d2`` exceeds the ratio
threshold (1 by default). When ``d2 == 0`` any ``d1 > 0`` is a fall.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import data, nn
from .ensemble import train_members
from .errors import ConfigError, InputError


def encode(encoder: nn.AEModel, x) -> np.ndarray:
    """Deepest hidden-layer activations for a vector or a batch."""
    hidden, _ = nn.forward(encoder, x)
    if not hidden:
        raise InputError("model has no hidden layer to take features from")
    return hidden[encoder.bottleneck_index]


def _pairwise(a, b):
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def _nearest(queries, points, chunk=2048, exclude_self=False):
    idx = np.empty(len(queries), dtype=int)
    dist = np.empty(len(queries))
    for s in range(0, len(queries), chunk):
        d = _pairwise(queries[s : s + chunk], points)
        if exclude_self:
            rows = np.arange(d.shape[0])
            d[rows, rows + s] = np.inf
        idx[s : s + chunk] = d.argmin(1)
        dist[s : s + chunk] = d[np.arange(d.shape[0]), idx[s : s + chunk]]
    return idx, dist


@dataclass
class OcnnModel:
    encoder: nn.AEModel | None
    train_features: np.ndarray
    ratio_threshold: float = 1.0
    neighbours: int = 1
    scaler: data.Scaler | None = None

    def __post_init__(self):
        self.train_features = np.atleast_2d(np.asarray(self.train_features, dtype=float))
        if len(self.train_features) < 2:
            raise ConfigError("OCNN needs at least two training points")
        if self.neighbours != 1:
            raise ConfigError("only the 1-nearest-neighbour rule is supported")
        if not self.ratio_threshold > 0:
            raise ConfigError("ratio_threshold must be > 0")
        # exact duplicates should count as neighbours at distance 0
        _, self._nn_dist = _nearest(self.train_features, self.train_features, exclude_self=True)

    def ratios(self, features) -> np.ndarray:
        F = np.atleast_2d(np.asarray(features, dtype=float))
        if F.shape[1] != self.train_features.shape[1]:
            raise InputError(f"feature length {F.shape[1]} != {self.train_features.shape[1]}")
        idx, d1 = _nearest(F, self.train_features)
        d2 = self._nn_dist[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(d2 > 0, d1 / np.where(d2 > 0, d2, 1.0), np.where(d1 > 0, np.inf, 0.0))
        return r

    def predict_features(self, features) -> np.ndarray:
        return self.ratios(features) > self.ratio_threshold

    def predict(self, windows) -> np.ndarray:
        """Fall verdicts for windows, via the scaler and encoder."""
        if not windows:
            return np.zeros(0, dtype=bool)
        X = data.channel_matrix([data.to_view(w, data.MONOLITHIC) for w in windows], data.MONOLITHIC_CHANNEL)
        if self.scaler is not None:
            X = data.apply_scaler(self.scaler, X)
        return self.predict_features(encode(self.encoder, X))


def ocnn_classify(model: OcnnModel, feature) -> str:
    return data.FALL if model.predict_features(feature)[0] else data.NORMAL


def fit_ocnn(windows, arch="ae", cfg=None, hidden=31, ratio_threshold=1.0) -> OcnnModel:
    """Train a monolithic autoencoder on normal windows and index its features."""
    (fit,) = train_members(windows, data.MONOLITHIC, arch, cfg, hidden)
    return OcnnModel(fit.model, encode(fit.model, fit.X), ratio_threshold, scaler=fit.scaler)


def save_ocnn(model: OcnnModel, path):
    doc = {
        "format_version": nn.FORMAT_VERSION,
        "kind": "ocnn",
        "ratio_threshold": model.ratio_threshold,
        "neighbours": model.neighbours,
        "encoder": nn.model_to_dict(model.encoder, model.scaler),
        "train_features": model.train_features.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_ocnn(path) -> OcnnModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "ocnn":
        raise ConfigError(f"{path} is not an OCNN model file")
    enc = doc["encoder"]
    scaler = data.Scaler.from_dict(enc["scaler"]) if enc.get("scaler") else None
    return OcnnModel(nn.model_from_dict(enc), np.asarray(doc["train_features"]), doc["ratio_threshold"],
                     doc["neighbours"], scaler)
