"""Decision thresholds on reconstruction error.

Four ways to pick the threshold from normal-only training errors:

* ``maxre`` - the largest training error;
* ``stdre`` - mean + 3 sample standard deviations;
* ``rre``   - the largest error left after rejecting IQR-fence outliers;
* ``ire``   - retrain on the fence inliers and take their largest error.

A window is a fall when its error is strictly above the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, InputError, SelectionError

MAXRE, STDRE, RRE, IRE = "maxre", "stdre", "rre", "ire"
KINDS = (MAXRE, STDRE, RRE, IRE)
TUNED_KINDS = (RRE, IRE)


@dataclass(frozen=True)
class IqrFence:
    q1: float
    q3: float
    iqr: float
    omega: float

    @property
    def lower(self) -> float:
        return self.q1 - self.omega * self.iqr

    @property
    def upper(self) -> float:
        return self.q3 + self.omega * self.iqr


@dataclass
class ThresholdModel:
    kind: str
    value: float
    omega: float | None = None
    model: nn.AEModel | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown threshold kind {self.kind!r}")
        if not self.value >= 0:
            raise ConfigError(f"threshold must be >= 0, got {self.value}")
        if (self.omega is not None) != (self.kind in TUNED_KINDS):
            raise ConfigError(f"omega must be given exactly for {TUNED_KINDS}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "omega": self.omega}


def _errors(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise InputError("need at least one reconstruction error")
    return e


def quartiles(errors):
    """Lower and upper quartile by linear interpolation between order statistics.

    With ``m`` sorted values the p-quantile sits at 1-based position
    ``(m - 1) * p + 1``.
    """
    e = np.sort(_errors(errors))
    out = []
    for p in (0.25, 0.75):
        pos = (e.size - 1) * p
        lo = int(math.floor(pos))
        hi = min(lo + 1, e.size - 1)
        frac = pos - lo
        out.append(float(e[lo] + frac * (e[hi] - e[lo])))
    return out[0], out[1]


def iqr_fence(errors, omega: float) -> IqrFence:
    if omega < 0:
        raise ConfigError("omega must be >= 0")
    q1, q3 = quartiles(errors)
    return IqrFence(q1, q3, q3 - q1, float(omega))


def iqr_outlier_mask(errors, omega: float) -> np.ndarray:
    """True where an error lies strictly outside ``[Q1 - omega*IQR, Q3 + omega*IQR]``."""
    e = _errors(errors)
    fence = iqr_fence(e, omega)
    return (e > fence.upper) | (e < fence.lower)


def max_re(errors, model=None) -> ThresholdModel:
    return ThresholdModel(MAXRE, float(np.max(_errors(errors))), model=model)


def std_re(errors, model=None) -> ThresholdModel:
    e = _errors(errors)
    sd = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    return ThresholdModel(STDRE, float(np.mean(e)) + 3.0 * sd, model=model)


def rre(errors, omega: float, model=None) -> ThresholdModel:
    e = _errors(errors)
    mask = iqr_outlier_mask(e, omega)
    if mask.all():
        # only reachable when nothing survives; fall back to the upper fence
        value = iqr_fence(e, omega).upper
    else:
        value = float(np.max(e[~mask]))
    return ThresholdModel(RRE, max(value, 0.0), omega=float(omega), model=model)


def train_model(X, specs, cfg: nn.TrainConfig) -> nn.AEModel:
    """Fresh model from ``specs`` trained on ``X``; init and shuffle share ``cfg.seed``."""
    return nn.train(nn.init_model(specs, seed=cfg.seed), X, cfg)


def ire(train_vectors, omega: float, specs, cfg: nn.TrainConfig, stage_a=None) -> ThresholdModel:
    """Inlier reconstruction error.

    Trains on everything (or reuses ``stage_a``), drops the fence outliers,
    retrains a fresh model on the inliers and returns the inliers' largest
    error under that retrained model.
    """
    X = np.asarray(train_vectors, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("ire needs a non-empty 2-D training set")
    first = stage_a if stage_a is not None else train_model(X, specs, cfg)
    keep = ~iqr_outlier_mask(nn.reconstruction_errors(first, X), omega)
    if not keep.any():
        raise SelectionError("every training vector was rejected; use a larger omega")
    return _ire_from_inliers(X[keep], omega, specs, cfg)


def _ire_from_inliers(inliers, omega, specs, cfg) -> ThresholdModel:
    second = train_model(inliers, specs, cfg)
    value = float(np.max(nn.reconstruction_errors(second, inliers)))
    return ThresholdModel(IRE, value, omega=float(omega), model=second)


def fit_threshold(kind: str, X, specs, cfg: nn.TrainConfig, omega=None, stage_a=None) -> ThresholdModel:
    """Train on ``X`` and fit a threshold of the given kind.

    ``stage_a`` short-circuits the first training run when the caller already
    has a model trained on exactly ``X``.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown threshold kind {kind!r}")
    if kind in TUNED_KINDS and omega is None:
        raise ConfigError(f"{kind} needs omega")
    model = stage_a if stage_a is not None else train_model(X, specs, cfg)
    if kind == IRE:
        return ire(X, omega, specs, cfg, stage_a=model)
    errors = nn.reconstruction_errors(model, X)
    if kind == MAXRE:
        return max_re(errors, model)
    if kind == STDRE:
        return std_re(errors, model)
    return rre(errors, omega, model)


def classify(threshold: ThresholdModel, x) -> str:
    """``"fall"`` iff the reconstruction error is strictly above the threshold."""
    if threshold.model is None:
        raise ConfigError("threshold has no model to compute errors with")
    return "fall" if nn.reconstruction_error(threshold.model, x) > threshold.value else "normal"
