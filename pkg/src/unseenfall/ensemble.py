"""Monolithic detectors and channel-wise ensembles.

A monolithic detector feeds the concatenated six-channel window to one
autoencoder. A channel-wise ensemble trains one autoencoder per raw channel
(six members) or per magnitude channel (two members) and combines the
per-member verdicts by majority vote, counting a tie as a fall. The
monolithic detector is treated as a one-member vote so every detector
returns the same :class:`Decision`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import data, nn, thresholds
from .errors import ConfigError, InputError, SelectionError

VOTE_RULE = "majority_ties_fall"
FORMAT_VERSION = 1

# command-line view names -> window views
VIEW_ALIASES = {
    "monolithic": data.MONOLITHIC,
    "6ce": data.SIX_RAW,
    "2ce": data.TWO_MAGNITUDE,
}
VIEW_LABELS = {v: k for k, v in VIEW_ALIASES.items()}


def resolve_view(view: str) -> str:
    view = VIEW_ALIASES.get(view, view)
    if view not in data.VIEWS:
        raise ConfigError(f"unknown view {view!r}")
    return view


def channel_ids(view: str) -> tuple:
    return {
        data.MONOLITHIC: (data.MONOLITHIC_CHANNEL,),
        data.SIX_RAW: data.CHANNELS,
        data.TWO_MAGNITUDE: data.MAGNITUDE_CHANNELS,
    }[resolve_view(view)]


@dataclass
class Member:
    channel: str
    model: nn.AEModel
    threshold: thresholds.ThresholdModel
    scaler: data.Scaler


@dataclass
class Decision:
    verdict: str
    votes_fall: int
    votes_normal: int
    per_member: list = field(default_factory=list)  # (channel, error, verdict)


def majority_vote(verdicts) -> str:
    """Fall iff at least half of the verdicts are falls."""
    verdicts = list(verdicts)
    if not verdicts:
        raise InputError("majority_vote needs at least one verdict")
    falls = sum(1 for v in verdicts if v == data.FALL or v is True)
    return data.FALL if falls >= len(verdicts) - falls else data.NORMAL


def vote_matrix(member_falls: np.ndarray) -> np.ndarray:
    """Vectorized :func:`majority_vote` over rows of a boolean (windows, members) array."""
    member_falls = np.asarray(member_falls, dtype=bool)
    return 2 * member_falls.sum(axis=1) >= member_falls.shape[1]


class ChannelEnsemble:
    """Per-channel (scaler, model, threshold) members plus the vote rule."""

    def __init__(self, members, view: str, arch: str = "ae"):
        self.view = resolve_view(view)
        self.arch = arch
        self.members = list(members)
        expected = channel_ids(self.view)
        if tuple(m.channel for m in self.members) != expected:
            raise ConfigError(f"{self.view} detector needs members {expected}")

    vote_rule = VOTE_RULE

    @property
    def window_length(self) -> int:
        dim = self.members[0].model.input_dim
        return dim // 6 if self.view == data.MONOLITHIC else dim

    def _matrices(self, windows) -> dict:
        windows = [_convert(w, self.view) for w in windows]
        mats = {}
        for m in self.members:
            X = data.channel_matrix(windows, m.channel)
            if X.shape[1] != m.model.input_dim:
                raise InputError(
                    f"channel {m.channel} has {X.shape[1]} samples, detector expects {m.model.input_dim}"
                )
            mats[m.channel] = X
        return mats

    def member_errors(self, windows) -> np.ndarray:
        """Reconstruction errors, shape (n_windows, n_members)."""
        mats = self._matrices(windows)
        cols = [
            nn.reconstruction_errors(m.model, data.apply_scaler(m.scaler, mats[m.channel]))
            for m in self.members
        ]
        return np.column_stack(cols)

    def member_falls(self, windows) -> np.ndarray:
        values = np.array([m.threshold.value for m in self.members])
        return self.member_errors(windows) > values

    def predict(self, windows) -> np.ndarray:
        """Boolean fall verdict per window."""
        if not windows:
            return np.zeros(0, dtype=bool)
        return vote_matrix(self.member_falls(windows))

    def detect(self, window) -> Decision:
        errors = self.member_errors([window])[0]
        per = []
        for m, e in zip(self.members, errors):
            per.append((m.channel, float(e), data.FALL if e > m.threshold.value else data.NORMAL))
        verdict = majority_vote([v for _, _, v in per])
        falls = sum(v == data.FALL for _, _, v in per)
        return Decision(verdict, falls, len(per) - falls, per)


class MonolithicDetector(ChannelEnsemble):
    def __init__(self, members, view: str = data.MONOLITHIC, arch: str = "ae"):
        super().__init__(members, data.MONOLITHIC, arch)

    @property
    def model(self):
        return self.members[0].model

    @property
    def threshold(self):
        return self.members[0].threshold

    @property
    def scaler(self):
        return self.members[0].scaler


def detect(detector: ChannelEnsemble, window) -> Decision:
    return detector.detect(window)


def _convert(w, view):
    if w.view == view:
        return w
    if w.view != data.SIX_RAW:
        raise InputError(f"cannot feed a {w.view} window to a {view} detector")
    return data.to_view(w, view)


# -- training --------------------------------------------------------------


@dataclass
class MemberFit:
    """A member's scaler and stage-A model, before any threshold is chosen."""

    channel: str
    scaler: data.Scaler
    X: np.ndarray  # scaled training matrix
    model: nn.AEModel
    errors: np.ndarray
    cfg: nn.TrainConfig
    specs: list


def check_training_windows(windows):
    if not windows:
        raise ConfigError("no training windows")
    if any(w.is_fall for w in windows):
        raise ConfigError("training windows must all be normal; fall windows cannot be used for training")
    if len({w.n for w in windows}) != 1:
        raise ConfigError("training windows have inconsistent lengths")


def train_members(windows, view, arch="ae", cfg=None, hidden=31) -> list:
    """Fit scalers and stage-A autoencoders for every member of a detector.

    Member ``i`` trains with seed ``cfg.seed + i``.
    """
    cfg = cfg or nn.TrainConfig()
    view = resolve_view(view)
    check_training_windows(windows)
    converted = [_convert(w, view) for w in windows]
    fits = []
    for i, ch in enumerate(channel_ids(view)):
        raw = data.channel_matrix(converted, ch)
        scaler = data.fit_scaler(raw)
        X = data.apply_scaler(scaler, raw)
        specs = nn.layer_specs(X.shape[1], arch, hidden)
        mcfg = cfg.replace(seed=cfg.seed + i)
        model = thresholds.train_model(X, specs, mcfg)
        model.arch = arch
        fits.append(MemberFit(ch, scaler, X, model, nn.reconstruction_errors(model, X), mcfg, specs))
    return fits


def finish_members(fits, view, arch, kind, omega=None, ire_cache=None) -> ChannelEnsemble:
    """Turn stage-A fits into a detector with thresholds of ``kind``.

    ``ire_cache`` (a dict) memoizes inlier retraining by (channel, inlier set),
    which pays off when several omegas reject the same points.
    """
    if kind not in thresholds.KINDS:
        raise ConfigError(f"unknown threshold kind {kind!r}")
    members = []
    for f in fits:
        if kind == thresholds.MAXRE:
            th = thresholds.max_re(f.errors, f.model)
        elif kind == thresholds.STDRE:
            th = thresholds.std_re(f.errors, f.model)
        elif kind == thresholds.RRE:
            th = thresholds.rre(f.errors, omega, f.model)
        else:
            keep = ~thresholds.iqr_outlier_mask(f.errors, omega)
            if not keep.any():
                raise SelectionError("every training vector was rejected; use a larger omega")
            key = (f.channel, keep.tobytes())
            if ire_cache is not None and key in ire_cache:
                base = ire_cache[key]
            else:
                base = thresholds._ire_from_inliers(f.X[keep], omega, f.specs, f.cfg)
                base.model.arch = arch
                if ire_cache is not None:
                    ire_cache[key] = base
            th = thresholds.ThresholdModel(thresholds.IRE, base.value, omega=float(omega), model=base.model)
        members.append(Member(f.channel, th.model, th, f.scaler))
    cls = MonolithicDetector if resolve_view(view) == data.MONOLITHIC else ChannelEnsemble
    return cls(members, view, arch)


def build_detector(windows, view, arch="ae", kind="rre", omega=None, cfg=None, hidden=31):
    fits = train_members(windows, view, arch, cfg, hidden)
    return finish_members(fits, view, arch, kind, omega)


def build_monolithic(windows, arch="ae", kind="rre", omega=None, cfg=None, hidden=31) -> MonolithicDetector:
    return build_detector(windows, data.MONOLITHIC, arch, kind, omega, cfg, hidden)


def build_channel_ensemble(windows, view, arch="ae", kind="rre", omega=None, cfg=None, hidden=31) -> ChannelEnsemble:
    view = resolve_view(view)
    if view == data.MONOLITHIC:
        raise ConfigError("channel ensembles use the six_raw or two_magnitude view")
    return build_detector(windows, view, arch, kind, omega, cfg, hidden)


# -- serialization ---------------------------------------------------------


def detector_to_dict(det: ChannelEnsemble) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "view": det.view,
        "arch": det.arch,
        "vote_rule": det.vote_rule,
        "members": [
            {
                "channel": m.channel,
                "threshold": m.threshold.to_dict(),
                "model": nn.model_to_dict(m.model, m.scaler),
            }
            for m in det.members
        ],
    }


def detector_from_dict(d: dict) -> ChannelEnsemble:
    if d.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported detector format version {d.get('format_version')!r}")
    if d.get("vote_rule") != VOTE_RULE:
        raise ConfigError(f"unsupported vote rule {d.get('vote_rule')!r}")
    members = []
    for md in d["members"]:
        model = nn.model_from_dict(md["model"])
        scaler = data.Scaler.from_dict(md["model"]["scaler"])
        t = md["threshold"]
        th = thresholds.ThresholdModel(t["kind"], t["value"], t["omega"], model)
        members.append(Member(md["channel"], model, th, scaler))
    cls = MonolithicDetector if d["view"] == data.MONOLITHIC else ChannelEnsemble
    return cls(members, d["view"], d.get("arch", "ae"))


def save_detector(det, path):
    with open(path, "w") as fh:
        json.dump(detector_to_dict(det), fh, indent=1)


def load_detector(path) -> ChannelEnsemble:
    with open(path) as fh:
        return detector_from_dict(json.load(fh))
