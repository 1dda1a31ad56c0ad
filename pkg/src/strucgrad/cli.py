"""``strucgrad`` command line: train, eval, gradcheck, analyze-hessian, synth.

Exit codes: 0 ok, 1 check failure, 2 usage or config error, 3 numeric abort.
``STRUCGRAD_THREADS`` caps the BLAS thread pool.
"""

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint
from .analysis import analyze_hessian
from .config import ConfigError, load_config
from .data import FormatError, SynthSpec, format_mlc, gen_synth, load_conll, load_mlc
from .gradcheck import run_suite
from .tasks import task_from_description
from .tensor import NumericalError
from .trainer import METRIC_COLUMNS, METRICS_VERSION, REGIMES, TrainingAborted, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_FILE = "model.ckpt"
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
DIAGNOSTICS_FILE = "diagnostics.json"
OUTPUT_FILES = (CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE, DIAGNOSTICS_FILE)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_metrics(records, config_hash):
    """Metrics CSV text: a version comment, the fixed header, one row per record."""
    buf = io.StringIO()
    buf.write(f"# strucgrad-metrics v{METRICS_VERSION} config_sha256={config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for rec in records:
        writer.writerow([_fmt(v) for v in rec.row().values()])
    return buf.getvalue()


def read_metrics(path):
    """Parse a metrics CSV back into a list of dicts of floats (``None`` for blanks)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for row in csv.DictReader(lines):
        rows.append({k: (float(v) if v != "" else None) for k, v in row.items()})
    return rows


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _checkpoint_extra(task, train_data):
    if task.name == "seq":
        return {"vocab": train_data.vocab, "tagset": train_data.tagset}
    return {}


def _prepare_out(out, force):
    out = Path(out)
    if out.exists():
        if not out.is_dir():
            raise UsageError(f"output path {out} exists and is not a directory")
        if any(out.iterdir()) and not force:
            raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
        for name in OUTPUT_FILES:
            if (out / name).exists():
                (out / name).unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args):
    try:
        run = load_config(args.config).with_overrides(seed=args.seed, output=args.out)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if run.output is None:
        raise UsageError("no output directory: set 'output' in the config or pass --out")
    cfg = run.train_config()
    try:
        train_data, valid, test = run.load_data()
        task = run.build_task(train_data)
    except (OSError, FormatError, ValueError) as exc:
        raise UsageError(f"cannot prepare data: {exc}") from None
    out = _prepare_out(run.output, args.force)
    chash = run.config_hash()
    started = time.perf_counter()
    try:
        result = train(task, train_data, cfg, args.regime, valid=valid)
    except NumericalError as exc:
        metrics = getattr(exc, "metrics", [])
        (out / METRICS_FILE).write_text(format_metrics(metrics, chash), encoding="utf-8")
        _write_json(out / DIAGNOSTICS_FILE, {
            "error": str(exc), "diagnostics": {k: _jsonable(v) for k, v in exc.diagnostics.items()},
            "regime": args.regime, "config_sha256": chash})
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    (out / METRICS_FILE).write_text(format_metrics(result.metrics, chash), encoding="utf-8")
    checkpoint.save(out / CHECKPOINT_FILE, task.describe(), result.theta, result.phi,
                    {"config_sha256": chash, **_checkpoint_extra(task, train_data)})
    scores = {}
    if valid is not None:
        scores["valid"] = task.evaluate(result.theta, valid)
    if test is not None:
        scores["test"] = task.evaluate(result.theta, test)
    summary = {
        "regime": args.regime,
        "seed": cfg.seed,
        "config_sha256": chash,
        "config": run.raw,
        "scores": scores,
        "best_outer_iter": result.best_iter,
        "stopped_early": result.stopped_early,
        "outer_iters": result.state.outer_iter,
        "theta_updates": result.state.theta_updates,
        "phi_updates": result.state.phi_updates,
        "metrics_version": METRICS_VERSION,
        "wall_seconds": time.perf_counter() - started,
    }
    _write_json(out / SUMMARY_FILE, summary)
    print(json.dumps({"regime": args.regime, "scores": scores, "out": str(out)}, sort_keys=True))
    return EXIT_OK


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def _load_checkpoint(path):
    try:
        return checkpoint.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except checkpoint.CheckpointError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_eval_data(task, path, extra):
    try:
        if task.name == "mlc":
            data = load_mlc(path)
        else:
            data = load_conll(path, extra.get("vocab"), extra.get("tagset"))
        task.check_data(data)
    except OSError as exc:
        raise UsageError(f"cannot read data {path}: {exc.strerror}") from None
    except FormatError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return data


def cmd_eval(args):
    desc, theta, phi, extra = _load_checkpoint(args.checkpoint)
    task = task_from_description(desc)
    data = _load_eval_data(task, args.data, extra)
    scores = task.evaluate(theta, data)
    print(json.dumps(scores, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_suite(tolerance=args.tolerance, seed=0 if args.seed is None else args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _write_matrix(path, M):
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def cmd_analyze_hessian(args):
    desc, theta, phi, extra = _load_checkpoint(args.checkpoint)
    if desc.get("task") != "mlc":
        raise UsageError("analyze-hessian supports multi-label checkpoints only")
    task = task_from_description(desc)
    data = _load_eval_data(task, args.data, extra)
    neg, cooc, corr, fd_error = analyze_hessian(task.energy, phi, data)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("neg_hessian.csv", "cooccurrence.csv"):
            if (out / name).exists() and not args.force:
                raise UsageError(f"{out / name} exists; pass --force to overwrite")
        _write_matrix(out / "neg_hessian.csv", neg)
        _write_matrix(out / "cooccurrence.csv", cooc)
    print(json.dumps({"correlation": "n/a" if corr is None else corr,
                      "fd_max_abs_error": fd_error}, sort_keys=True))
    return EXIT_OK


def cmd_synth(args):
    if args.out is None:
        raise UsageError("synth needs --out PATH")
    try:
        spec = SynthSpec.planted(args.L, args.d, args.N, seed=0 if args.seed is None else args.seed,
                                 strength=args.strength, weight_scale=args.weight_scale,
                                 sweeps=args.sweeps)
    except ValueError as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from None
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    out.write_text(format_mlc(gen_synth(spec)), encoding="utf-8")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the random seed")
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("--force", action="store_true", help="allow overwriting outputs")
    common.add_argument("--tolerance", type=float, default=None,
                        help="override every gradient-check threshold")

    parser = _Parser(prog="strucgrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train from a JSON run config")
    p.add_argument("config")
    p.add_argument("--regime", choices=REGIMES, default="implicit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a data file")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="run the gradient oracle suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze-hessian", parents=[common],
                       help="compare the learned label Hessian with co-occurrence")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.set_defaults(func=cmd_analyze_hessian)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic multi-label dataset")
    p.add_argument("--L", type=int, required=True, help="number of labels")
    p.add_argument("--d", type=int, required=True, help="number of features")
    p.add_argument("--N", type=int, required=True, help="number of examples")
    p.add_argument("--strength", type=float, default=2.0, help="planted pair coupling")
    p.add_argument("--weight-scale", type=float, default=2.0)
    p.add_argument("--sweeps", type=int, default=20)
    p.set_defaults(func=cmd_synth)
    return parser


def _thread_limit():
    raw = os.environ.get("STRUCGRAD_THREADS")
    if raw in (None, ""):
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"STRUCGRAD_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
