"""Threshold tuning without falls, and leave-one-subject-out evaluation.

Only normal windows reach any function in this module except the final
evaluation in :func:`run_fold`. Proxy falls are normal windows whose
reconstruction error falls outside an IQR fence with multiplier ``rho``; the
remaining "non-falls" and the proxies then form a validation set on which
the threshold parameter omega is chosen by K-fold cross-validation.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, data, ensemble, metrics, nn, thresholds
from .errors import ConfigError, InputError, SelectionError, UndefinedMetricError

LOG = logging.getLogger(__name__)

DEFAULT_GRID = (0.001, 0.01, 0.1, 0.5, 1.0, 1.5, 1.7239, 2.0, 2.5, 3.0)
OCNN = "ocnn"
METHODS = thresholds.KINDS + (OCNN,)


@dataclass(frozen=True)
class SelectionConfig:
    rho: float = 1.5
    omega_grid: tuple = DEFAULT_GRID
    k_folds: int = 3
    rho_grid: tuple = DEFAULT_GRID
    seed: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError("rho must be > 0")
        if not self.omega_grid or not self.rho_grid:
            raise ConfigError("omega and rho grids must be non-empty")
        if any(v < 0 for v in self.omega_grid) or any(v <= 0 for v in self.rho_grid):
            raise ConfigError("omega values must be >= 0 and rho values > 0")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")


@dataclass(frozen=True)
class PipelineConfig:
    view: str = "6ce"
    arch: str = "ae"
    window: data.WindowConfig = field(default_factory=data.WindowConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    hidden: int = 31
    jobs: int = 1

    def __post_init__(self):
        ensemble.resolve_view(self.view)
        if self.arch not in ("ae", "sae"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.hidden < 1 or self.jobs < 1:
            raise ConfigError("hidden and jobs must be >= 1")

    def with_rho(self, rho) -> "PipelineConfig":
        return replace(self, selection=replace(self.selection, rho=rho))


@dataclass
class ProxySplit:
    nonfalls: list
    proxy_falls: list
    is_proxy: np.ndarray = None  # bool per input window, input order


@dataclass
class SelectionResult:
    best_omega: float
    cv_gmean: dict  # omega -> mean gmean over folds
    fold_gmean: dict  # omega -> list of per-fold gmeans


def proxy_split(normal_windows, rho, view="6ce", arch="ae", cfg=None, hidden=31) -> ProxySplit:
    """Split normal windows into non-falls and proxy falls.

    A detector of the same view/arch is trained on all windows; each member
    flags the windows outside its IQR fence at ``rho``, and the flags are
    combined with the detector's vote rule (ties count as proxy falls).
    """
    if not normal_windows:
        raise InputError("proxy_split needs at least one window")
    fits = ensemble.train_members(normal_windows, view, arch, cfg, hidden)
    flags = np.column_stack([thresholds.iqr_outlier_mask(f.errors, rho) for f in fits])
    is_proxy = ensemble.vote_matrix(flags)
    nonfalls = [w for w, p in zip(normal_windows, is_proxy) if not p]
    proxies = [w for w, p in zip(normal_windows, is_proxy) if p]
    return ProxySplit(nonfalls, proxies, is_proxy)


def fold_assignment(n: int, k: int, rng) -> np.ndarray:
    """Shuffle, then deal indices round-robin into ``k`` folds."""
    folds = np.empty(n, dtype=int)
    folds[rng.permutation(n)] = np.arange(n) % k
    return folds


def tune_omega(split: ProxySplit, sel: SelectionConfig, view="6ce", arch="ae", kind="rre", cfg=None, hidden=31):
    """Pick omega by K-fold cross-validated gmean on non-falls vs proxy falls.

    Ties go to the smaller omega.
    """
    if kind not in thresholds.TUNED_KINDS:
        raise ConfigError(f"{kind} has no omega to tune")
    k = sel.k_folds
    if len(split.proxy_falls) < k:
        raise SelectionError(
            f"only {len(split.proxy_falls)} proxy falls for {k} folds; use a smaller rho"
        )
    if len(split.nonfalls) < k:
        raise SelectionError(f"only {len(split.nonfalls)} non-falls for {k} folds")
    rng = np.random.default_rng(sel.seed)
    nf_fold = fold_assignment(len(split.nonfalls), k, rng)
    pf_fold = fold_assignment(len(split.proxy_falls), k, rng)

    scores = {float(o): [] for o in sel.omega_grid}
    for fold in range(k):
        train = [w for w, f in zip(split.nonfalls, nf_fold) if f != fold]
        neg = [w for w, f in zip(split.nonfalls, nf_fold) if f == fold]
        pos = [w for w, f in zip(split.proxy_falls, pf_fold) if f == fold]
        labels = [False] * len(neg) + [True] * len(pos)
        fits = ensemble.train_members(train, view, arch, cfg, hidden)
        cache = {}
        for omega in scores:
            try:
                det = ensemble.finish_members(fits, view, arch, kind, omega, cache)
            except SelectionError:
                scores[omega].append(0.0)
                continue
            pred = det.predict(neg + pos)
            scores[omega].append(metrics.evaluate(pred, labels).gmean)

    cv = {o: float(np.mean(s)) for o, s in scores.items()}
    best = min(cv, key=lambda o: (-cv[o], o))
    return SelectionResult(best, cv, scores)


def fit_final_thresholds(nonfalls, best_omega, kind, view="6ce", arch="ae", cfg=None, hidden=31, fits=None):
    """Retrain on the non-falls and fit the final detector.

    For ``rre`` the threshold is the largest error inside the omega fence;
    for ``ire`` the fence inliers are retrained once more. ``maxre`` and
    ``stdre`` ignore omega. Precomputed stage-A ``fits`` on ``nonfalls`` may
    be passed in to skip retraining.
    """
    if not nonfalls:
        raise InputError("fit_final_thresholds needs non-fall windows")
    ensemble.check_training_windows(nonfalls)
    if fits is None:
        fits = ensemble.train_members(nonfalls, view, arch, cfg, hidden)
    omega = best_omega if kind in thresholds.TUNED_KINDS else None
    return ensemble.finish_members(fits, view, arch, kind, omega)


def fit_methods(train_windows, cfg: PipelineConfig, methods) -> dict:
    """Fit every method on normal training windows.

    Returns ``{method: (detector, omega)}``; ``omega`` is None for untuned
    methods. The proxy split and the non-fall stage-A models are shared.
    """
    normals = [w for w in train_windows if not w.is_fall]
    sel = cfg.selection
    split = proxy_split(normals, sel.rho, cfg.view, cfg.arch, cfg.train, cfg.hidden)
    if not split.nonfalls:
        raise SelectionError("every training window became a proxy fall; use a larger rho")
    LOG.info("rho=%g: %d non-falls, %d proxy falls", sel.rho, len(split.nonfalls), len(split.proxy_falls))
    fits = None
    out = {}
    for method in methods:
        if method == OCNN:
            det = baselines.fit_ocnn(split.nonfalls, cfg.arch, cfg.train, cfg.hidden)
            out[method] = (det, None)
            continue
        omega = None
        if method in thresholds.TUNED_KINDS:
            omega = tune_omega(split, sel, cfg.view, cfg.arch, method, cfg.train, cfg.hidden).best_omega
        if fits is None:
            fits = ensemble.train_members(split.nonfalls, cfg.view, cfg.arch, cfg.train, cfg.hidden)
        det = fit_final_thresholds(split.nonfalls, omega, method, cfg.view, cfg.arch, cfg.train, cfg.hidden, fits)
        out[method] = (det, omega)
    return out


def run_fold(train_windows, test_windows, cfg: PipelineConfig, methods) -> dict:
    """Fit on training normals, evaluate on the held-out windows.

    Returns ``{method: (omega, EvalMetrics)}``.
    """
    fitted = fit_methods(train_windows, cfg, methods)
    labels = [w.is_fall for w in test_windows]
    return {m: (omega, metrics.evaluate(det.predict(test_windows), labels)) for m, (det, omega) in fitted.items()}


@dataclass
class LoocvResult:
    rows: list  # metrics.ResultRow, fold rows then a "mean" row per method
    skipped: list  # (subject_id, reason)

    def mean_row(self, method) -> metrics.ResultRow:
        return next(r for r in self.rows if r.method == method and r.fold == "mean")

    def fold_rows(self, method) -> list:
        return [r for r in self.rows if r.method == method and r.fold != "mean"]

    def gmean_of_means(self, method) -> float:
        """gmean of the averaged rates, the alternative to the mean of gmeans."""
        m = self.mean_row(method)
        return float(np.sqrt(m.tpr * (1.0 - m.fpr)))


def _check_methods(methods):
    methods = tuple(methods)
    if not methods:
        raise ConfigError("no methods given")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {bad}; choose from {METHODS}")
    return methods


def windows_by_subject(recordings, window_cfg) -> dict:
    out = {}
    for rec in recordings:
        out.setdefault(rec.subject_id, []).extend(data.slide_windows(rec, window_cfg))
    return out


def _fold_job(args):
    train, test, cfg, methods = args
    return run_fold(train, test, cfg, methods)


def _loocv_windows(by_subject: dict, cfg: PipelineConfig, methods) -> LoocvResult:
    if len(by_subject) < 2:
        raise InputError(f"LOOCV needs at least 2 subjects, got {len(by_subject)}")
    jobs, subjects, skipped = [], [], []
    for sid, test in by_subject.items():
        n_fall = sum(w.is_fall for w in test)
        if n_fall == 0 or n_fall == len(test):
            reason = "no fall windows" if n_fall == 0 else "no normal windows"
            LOG.warning("skipping subject %s: %s", sid, reason)
            skipped.append((sid, reason))
            continue
        train = [w for other, ws in by_subject.items() if other != sid for w in ws if not w.is_fall]
        jobs.append((train, test, cfg, methods))
        subjects.append(sid)
    if not jobs:
        raise UndefinedMetricError("no subject has both fall and normal windows")

    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]

    view = ensemble.VIEW_LABELS[ensemble.resolve_view(cfg.view)]
    rho = float(cfg.selection.rho)
    rows = []
    for m in methods:
        # OCNN runs on monolithic features regardless of the configured view
        mview = "monolithic" if m == OCNN else view
        fold_rows = []
        for sid, res in zip(subjects, results):
            omega, ev = res[m]
            fold_rows.append(metrics.ResultRow(m, cfg.arch, mview, rho, omega, sid, ev.tpr, ev.fpr, ev.gmean))
        rows.extend(fold_rows)
        rows.append(
            metrics.ResultRow(
                m,
                cfg.arch,
                mview,
                rho,
                None,
                "mean",
                float(np.mean([r.tpr for r in fold_rows])),
                float(np.mean([r.fpr for r in fold_rows])),
                float(np.mean([r.gmean for r in fold_rows])),
            )
        )
    return LoocvResult(rows, skipped)


def loocv(recordings, cfg: PipelineConfig | None = None, methods=("rre",)) -> LoocvResult:
    """Leave-one-subject-out evaluation: train on the other subjects' normals only."""
    cfg = cfg or PipelineConfig()
    methods = _check_methods(methods)
    return _loocv_windows(windows_by_subject(recordings, cfg.window), cfg, methods)


def rho_sweep(recordings, rho_grid=None, cfg: PipelineConfig | None = None, methods=("rre",)) -> list:
    """LOOCV at every rho in the grid; returns the concatenated long-format rows."""
    cfg = cfg or PipelineConfig()
    methods = _check_methods(methods)
    grid = cfg.selection.rho_grid if rho_grid is None else tuple(rho_grid)
    if not grid:
        raise ConfigError("rho grid is empty")
    by_subject = windows_by_subject(recordings, cfg.window)
    rows = []
    for rho in grid:
        LOG.info("sweep: rho=%g", rho)
        rows.extend(_loocv_windows(by_subject, cfg.with_rho(float(rho)), methods).rows)
    return rows
