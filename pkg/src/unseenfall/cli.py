"""Command-line entry point.

Commands: synth, train, loocv, sweep, gradcheck. Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import functools
import logging
import os
import sys

import numpy as np

from . import baselines, data, ensemble, metrics, nn, selection
from .errors import ConfigError, IngestionError, InputError, SelectionError, UndefinedMetricError

LOG = logging.getLogger("unseenfall")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_LIMIT = 1e-4
DEFAULT_GRID = ",".join(f"{v:g}" for v in selection.DEFAULT_GRID)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_formatter = functools.partial(argparse.ArgumentDefaultsHelpFormatter, width=88, max_help_position=32)


def _float_list(text):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _methods(text):
    methods = tuple(m.strip().lower() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in selection.METHODS]
    if not methods or bad:
        raise argparse.ArgumentTypeError(f"choose from {','.join(selection.METHODS)}; got {text!r}")
    return methods


def _add_common(p, threshold_default):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="sensor CSV (subject_id,label,t,ax,ay,az,wx,wy,wz)")
    g.add_argument("--labels", help="label map CSV (label,class)")
    g.add_argument("--window-seconds", type=_positive_float, default=1.28, help="window length in seconds")
    g.add_argument("--label-rule", choices=("majority", "any"), default="majority", help="window fall label rule")
    g = p.add_argument_group("model")
    g.add_argument("--view", choices=("monolithic", "6ce", "2ce"), default="6ce", help="input view")
    g.add_argument("--arch", choices=("ae", "sae"), default="ae", help="autoencoder architecture")
    g.add_argument("--threshold", type=_methods, default=threshold_default,
                   help="threshold method(s), comma-separated: maxre,stdre,rre,ire,ocnn")
    g.add_argument("--hidden", type=_positive_int, default=31, help="bottleneck width")
    g.add_argument("--epochs", type=_positive_int, default=10, help="training epochs")
    g = p.add_argument_group("selection")
    g.add_argument("--rho", type=_positive_float, default=1.5, help="proxy-fall fence multiplier")
    g.add_argument("--omega-grid", type=_float_list, default=DEFAULT_GRID, help="omega candidates")
    g.add_argument("--rho-grid", type=_float_list, default=DEFAULT_GRID, help="rho values for sweep")
    g.add_argument("--k-folds", type=int, default=3, help="internal cross-validation folds")
    _add_run(p)


def _add_run(p):
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--jobs", type=_positive_int, default=1, help="parallel LOOCV folds")
    g.add_argument("--out", default="out", help="output directory")
    g.add_argument("--config", help="key=value file; explicit flags take precedence")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unseenfall", description="Unseen-fall detection with autoencoders.",
                     formatter_class=_formatter)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic dataset", formatter_class=_formatter)
    p.add_argument("--subjects", type=_positive_int, default=5, help="number of subjects")
    p.add_argument("--duration", type=_positive_float, default=120.0, help="normal activity per subject (s)")
    p.add_argument("--noise-rate", type=float, default=0.01, help="fraction of spiked normal samples")
    p.add_argument("--falls", type=_nonneg_int, default=20, help="falls per subject")
    _add_run(p)

    p = sub.add_parser("train", help="fit a detector on every subject's normal windows",
                       formatter_class=_formatter)
    _add_common(p, "rre")

    p = sub.add_parser("loocv", help="leave-one-subject-out evaluation", formatter_class=_formatter)
    _add_common(p, "rre")

    p = sub.add_parser("sweep", help="LOOCV over the rho grid, CSV + SVG", formatter_class=_formatter)
    _add_common(p, "rre,ire")

    p = sub.add_parser("gradcheck", help="check backprop against finite differences",
                       formatter_class=_formatter)
    p.add_argument("--trials", type=_positive_int, default=20, help="random nets to check")
    p.add_argument("--eps", type=float, default=1e-5, help="finite-difference step")
    _add_run(p)
    return parser


def _subparser(parser, command):
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[command]


def _read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        if not os.path.isfile(args.config):
            parser.error(f"config file not found: {args.config}")
        try:
            overlay = _read_config(args.config)
        except UsageError as exc:
            parser.error(str(exc))
        sub = _subparser(parser, args.command)
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in overlay.items():
            if key not in known or key in ("help", "config"):
                parser.error(f"unknown config key {key!r}")
            action = known[key]
            try:
                if action.type is not None:
                    value = action.type(raw)
                elif isinstance(action, argparse._StoreTrueAction):
                    value = raw.lower() in ("1", "true", "yes", "on")
                else:
                    value = raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"config key {key}: {exc}")
            if action.choices is not None and value not in action.choices:
                parser.error(f"config key {key}: invalid choice {value!r}")
            defaults[key] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# -- commands --------------------------------------------------------------


def _pipeline_config(args) -> selection.PipelineConfig:
    return selection.PipelineConfig(
        view=args.view,
        arch=args.arch,
        window=data.WindowConfig(args.window_seconds, 0.5, args.label_rule),
        selection=selection.SelectionConfig(
            rho=args.rho,
            omega_grid=tuple(args.omega_grid),
            k_folds=args.k_folds,
            rho_grid=tuple(args.rho_grid),
            seed=args.seed,
        ),
        train=nn.TrainConfig(epochs=args.epochs, seed=args.seed),
        hidden=args.hidden,
        jobs=args.jobs,
    )


def _load_dataset(args):
    for flag in ("data", "labels"):
        path = getattr(args, flag)
        if not path:
            raise UsageError(f"--{flag} is required")
        if not os.path.isfile(path):
            raise UsageError(f"--{flag}: file not found: {path}")
    return data.load_csv(args.data, data.load_label_map(args.labels))


def _out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory is not writable: {path}")
    return path


def cmd_synth(args):
    cfg = data.SynthConfig(
        subjects=args.subjects,
        duration_s=args.duration,
        noise_rate=args.noise_rate,
        fall_count=args.falls,
        seed=args.seed,
    )
    out = _out_dir(args.out)
    recs = data.generate_synthetic(cfg)
    csv_path = os.path.join(out, "synthetic.csv")
    labels_path = os.path.join(out, "labels.csv")
    data.write_csv(recs, csv_path)
    data.write_label_map(data.SYNTH_LABEL_MAP, labels_path)
    n = sum(len(r) for r in recs)
    n_fall = sum(int(r.is_fall.sum()) for r in recs)
    print(f"wrote {csv_path}: {len(recs)} subjects, {n} samples, {n_fall} fall samples")
    print(f"wrote {labels_path}")
    return EXIT_OK


def cmd_train(args):
    recs = _load_dataset(args)
    cfg = _pipeline_config(args)
    out = _out_dir(args.out)
    windows = [w for r in recs for w in data.slide_windows(r, cfg.window)]
    fitted = selection.fit_methods(windows, cfg, args.threshold)
    for method, (det, omega) in fitted.items():
        path = os.path.join(out, f"detector_{method}.json")
        if method == selection.OCNN:
            baselines.save_ocnn(det, path)
        else:
            ensemble.save_detector(det, path)
        extra = f" omega={omega:g}" if omega is not None else ""
        print(f"{method}: wrote {path}{extra}")
    return EXIT_OK


def _summary(rows):
    print(f"{'method':<8}{'view':<12}{'rho':>8}{'tpr':>8}{'fpr':>8}{'gmean':>8}")
    for r in rows:
        if r.fold == "mean":
            print(f"{r.method:<8}{r.view:<12}{r.rho:>8g}{r.tpr:>8.3f}{r.fpr:>8.3f}{r.gmean:>8.3f}")


def cmd_loocv(args):
    recs = _load_dataset(args)
    cfg = _pipeline_config(args)
    out = _out_dir(args.out)
    res = selection.loocv(recs, cfg, args.threshold)
    path = os.path.join(out, "results.csv")
    metrics.export_results_csv(res.rows, path)
    _summary(res.rows)
    for sid, reason in res.skipped:
        print(f"skipped subject {sid}: {reason}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args):
    recs = _load_dataset(args)
    cfg = _pipeline_config(args)
    out = _out_dir(args.out)
    rows = selection.rho_sweep(recs, args.rho_grid, cfg, args.threshold)
    csv_path = os.path.join(out, "sweep.csv")
    svg_path = os.path.join(out, "sweep.svg")
    metrics.export_results_csv(rows, csv_path)
    metrics.export_sweep_svg(rows, svg_path, title=f"{args.view}/{args.arch}: TPR, FPR, gmean vs rho")
    _summary(rows)
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return EXIT_OK


def cmd_gradcheck(args, gradient_fn=None):
    if not args.eps > 0:
        raise UsageError("--eps must be > 0")
    rng = np.random.default_rng(args.seed)
    cfg = nn.TrainConfig()
    worst = 0.0
    for _ in range(args.trials):
        d = int(rng.integers(2, 11))
        h = int(rng.integers(1, 6))
        model = nn.init_model([(d, h), (h, d)], seed=int(rng.integers(2**31)))
        batch = rng.uniform(0, 1, size=(int(rng.integers(1, 9)), d))
        worst = max(worst, nn.gradient_check(model, batch, args.eps, cfg, gradient_fn))
    ok = worst < GRADCHECK_LIMIT
    print(f"gradcheck: {args.trials} nets, max relative error {worst:.3e} ({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "loocv": cmd_loocv,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"unseenfall {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestionError, InputError, SelectionError, UndefinedMetricError) as exc:
        print(f"unseenfall {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"unseenfall {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"unseenfall {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
