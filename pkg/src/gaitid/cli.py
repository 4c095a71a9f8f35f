"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 data error, 3 model error.
"""

import argparse
import csv
import io
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import quant, tinycnn
from .datasets import background_dataset, synthetic_dataset
from .errors import GaitError
from .features import N_FEATURES, feature_columns, featurize_many
from .imu import (CANONICAL_RATE_HZ, GaitSegment, ImuStream,
                  default_profiles, load_segments, load_stream, save_segments,
                  save_stream, synthesize_gait, window_stream)
from .segmentation import segment_stream
from .streaming import StreamEngine, bench, replay

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3
WHUGAIT_RATE_HZ = 50.0


class DataError(Exception):
    pass


class ModelError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad input; usage errors here are 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ file I/O ---

def save_features(path, X, y):
    """Feature CSV: one row per grid, columns ``{feature}_{axis}`` + label."""
    X = np.asarray(X)
    axes = X.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*feature_columns(axes), "label"])
        for grid, label in zip(X.reshape(len(X), -1), y):
            w.writerow([f"{v:.9g}" for v in grid] + [int(label)])


def load_features(path):
    """Inverse of ``save_features`` -> ``(X float32 (n, 13, axes), y)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(str(exc)) from None
    if not rows:
        raise DataError(f"{path}: empty feature file")
    header = rows[0]
    n_values = len(header) - 1
    if header[-1] != "label" or n_values % N_FEATURES:
        raise DataError(f"{path}: not a feature CSV")
    axes = n_values // N_FEATURES
    if axes not in (3, 6) or header[:-1] != feature_columns(axes):
        raise DataError(f"{path}: unexpected feature columns")
    try:
        body = np.array(rows[1:], dtype=np.float64).reshape(-1, n_values + 1)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if len(body) == 0:
        raise DataError(f"{path}: no rows")
    return body[:, :-1].reshape(-1, N_FEATURES, axes).astype(np.float32), body[:, -1].astype(np.int64)


def load_any_model(path, quantized=False):
    """Float or int8 model, chosen by the kind byte in the file header."""
    try:
        head = Path(path).read_bytes()[:7]
    except OSError as exc:
        raise ModelError(str(exc)) from None
    is_int8 = len(head) == 7 and head[6] == tinycnn.KIND_INT8
    if quantized and not is_int8:
        raise ModelError(f"{path} is not an int8 model (run `quantize` first)")
    try:
        return quant.load_quant_model(path) if is_int8 else tinycnn.load_model(path)
    except GaitError as exc:
        raise ModelError(f"{path}: {exc}") from None


def _load_stream(path, args):
    try:
        return load_stream(path, "csv", rate_hz=args.rate, axes=args.axes)
    except OSError as exc:
        raise DataError(str(exc)) from None


def _check_model_axes(model, axes):
    cols = model.config.input_cols
    if cols != axes:
        raise ModelError(f"model expects {cols}-axis input, data has {axes}")


# ------------------------------------------------------------- commands ---

def cmd_synth(args):
    """Synthetic walkers: labelled feature CSV plus one CSV stream each."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profiles = default_profiles(args.classes, args.axes or 6, seed=args.profile_seed)
    X, y = synthetic_dataset(profiles, args.windows, args.window_s, 1.0, args.rate,
                             seed=args.seed)
    if args.background:
        Xb, yb = background_dataset(args.background, args.window_s, args.rate,
                                    args.axes or 6, seed=args.seed + 1)
        X, y = np.concatenate([X, Xb]), np.concatenate([y, yb])
    save_features(out / "features.csv", X, y)
    for p in profiles[:args.streams]:
        s = synthesize_gait(p, args.stream_s, args.rate, seed=args.seed + 1000 + p.class_id)
        save_stream(s, out / f"walk_{p.class_id:02d}.csv")
    print(f"wrote {len(X)} feature rows and {min(args.streams, len(profiles))} streams to {out}")


def _whugait_file(folder, split, pattern):
    """First ``.txt`` under ``folder`` whose name parts match ``pattern`` and ``split``."""
    pat = re.compile(pattern)
    for f in sorted(folder.rglob("*.txt")):
        parts = re.split(r"[_\-.]", f.stem.lower())
        if split in parts and pat.fullmatch("_".join(p for p in parts if p != split)):
            return f
    raise DataError(f"no file matching {pattern!r} for split {split!r} under {folder}")


def _read_rows(path, width=None):
    try:
        data = np.loadtxt(io.StringIO(path.read_text().replace(",", " ")), ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if width is not None and data.shape[1] != width:
        raise DataError(f"{path}: rows have {data.shape[1]} values, expected {width}")
    return data


def cmd_convert_whugait(args):
    """whuGAIT text layout -> per-class CSV streams + segments-binary.

    Each split needs six channel files named like ``acc_x_train.txt`` or
    ``train_gyr_z.txt`` (the sensor word may be longer, e.g. ``body_acc``), one
    128-value segment per row, plus a label file ``y_train.txt`` or
    ``label_train.txt`` with one integer per row.
    """
    src, out = Path(args.src), Path(args.out)
    if not src.is_dir():
        raise DataError(f"{src} is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    rate = args.rate or WHUGAIT_RATE_HZ
    per_split = {}
    for split in args.splits:
        chans = [_read_rows(_whugait_file(src, split, rf"(.*_)?{sensor}\w*_{axis}"), 128)
                 for sensor in ("acc", "gyr") for axis in "xyz"]
        labels_file = _whugait_file(src, split, r"y|labels?")
        labels = _read_rows(labels_file).ravel().astype(np.int64)
        if any(len(c) != len(labels) for c in chans):
            raise DataError(f"{split}: channel and label files disagree on row count")
        per_split[split] = (np.stack(chans, axis=1), labels)     # (n, 6, 128)
    # subject ids become contiguous class ids shared by every split
    originals = np.unique(np.concatenate([l for _, l in per_split.values()]))
    with open(out / "classes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "source_label"])
        w.writerows(enumerate(originals.tolist()))
    for split, (data, raw) in per_split.items():
        labels = np.searchsorted(originals, raw)
        if args.axes == 3:
            data = data[:, :3]
        segs = [GaitSegment(d, None, int(l)) for d, l in zip(data, labels)]
        save_segments(segs, out / f"{split}.gaitseg", rate)
        for label in np.unique(labels):
            rows = data[labels == label]
            stream = ImuStream(rate, np.concatenate([r.T for r in rows]), 0.0, int(label))
            save_stream(stream, out / f"{split}_class{int(label):03d}.csv")
        print(f"{split}: {len(segs)} segments, {len(np.unique(labels))} classes")


def cmd_segment(args):
    stream = _load_stream(args.input, args)
    segs = segment_stream(stream, args.threshold, args.min_duration, args.cv_max, args.method)
    save_segments(segs, args.out, stream.rate_hz)
    print(f"{len(segs)} segments -> {args.out}")


def cmd_featurize(args):
    """Segments-binary or CSV stream -> feature CSV."""
    path = Path(args.input)
    if path.suffix == ".csv":
        stream = _load_stream(path, args)
        windows = window_stream(stream, args.window_s, args.hop_s)
        labels = [stream.label if stream.label is not None else -1] * len(windows)
        rate = stream.rate_hz
    else:
        try:
            segs, rate = load_segments(path)
        except OSError as exc:
            raise DataError(str(exc)) from None
        windows = [s.as_window(rate) for s in segs]
        labels = [s.label if s.label is not None else -1 for s in segs]
    if not windows:
        raise DataError(f"{path}: nothing to featurize")
    X = featurize_many(windows, rate)
    save_features(args.out, X, labels)
    print(f"{len(X)} feature rows -> {args.out}")


def cmd_train(args):
    X, y = load_features(args.features)
    cfg = tinycnn.TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                              batch_size=args.batch_size, val_fraction=args.val_fraction,
                              seed=args.seed)
    params, history = tinycnn.train(X, y, cfg, log=print)
    tinycnn.save_model(params, args.model)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(history[0]))
            w.writeheader()
            w.writerows(history)
    best = max(h["val_acc"] for h in history)
    print(f"best val_acc {best:.4f}; model -> {args.model}")


def cmd_eval(args):
    model = load_any_model(args.model, args.quantized)
    X, y = load_features(args.features)
    _check_model_axes(model, X.shape[2])
    fg = y >= 0
    if not fg.any():
        raise DataError("evaluation file has no labelled walking rows")
    if y[fg].max() >= model.config.n_classes:
        raise DataError("labels exceed the model's class count")
    print(tinycnn.evaluate(model, X[fg], y[fg]).format())
    if (~fg).any():
        conf = model.predict_proba(X[~fg]).max(axis=1)
        gated = np.mean(conf < args.tau)
        print(f"background rows {int((~fg).sum())}: {gated:.3f} below tau {args.tau}")


def cmd_quantize(args):
    params = load_any_model(args.model)
    if not isinstance(params, tinycnn.ModelParams):
        raise ModelError(f"{args.model} is already quantized")
    Xc, _ = load_features(args.calib)
    _check_model_axes(params, Xc.shape[2])
    qmodel = quant.quantize(params, quant.calibrate(params, Xc))
    quant.save_quant_model(qmodel, args.out)
    print(f"int8 model -> {args.out}")
    if args.eval:
        X, y = load_features(args.eval)
        fg = y >= 0
        f_acc, q_acc, delta = quant.accuracy_delta(params, qmodel, X[fg], y[fg])
        agree = np.mean(params.predict_proba(X).argmax(1) == qmodel.predict_proba(X).argmax(1))
        print(f"float {f_acc:.4f}  int8 {q_acc:.4f}  drop {100 * delta:.2f} points  "
              f"argmax agreement {agree:.4f}")


def format_memory(report):
    lines = [f"{'#':>2} {'layer':8} {'weights':>8} {'bias':>6} {'meta':>5} "
             f"{'in':>6} {'out':>6} {'scratch':>7} {'live':>6}"]
    for r in report.layers:
        lines.append(f"{r['index']:>2} {r['kind']:8} {r['weight_bytes']:>8} {r['bias_bytes']:>6} "
                     f"{r['meta_bytes']:>5} {r['in_bytes']:>6} {r['out_bytes']:>6} "
                     f"{r['scratch_bytes']:>7} {r['live_bytes']:>6}")
    lines.append(f"weight payload {report.weight_bytes} B ({report.weight_bytes / 1024:.1f} KB)")
    lines.append(f"flash total    {report.flash_bytes} B ({report.flash_bytes / 1024:.1f} KB)")
    lines.append(f"arena peak     {report.arena_bytes} B ({report.arena_bytes / 1024:.2f} KB)")
    return "\n".join(lines)


def cmd_report_memory(args):
    qmodel = load_any_model(args.model, quantized=True)
    report = quant.memory_report(qmodel)
    print(report.to_json() if args.json else format_memory(report))


def cmd_stream(args):
    model = load_any_model(args.model, args.quantized)
    stream = _load_stream(args.input, args)
    _check_model_axes(model, stream.axes)
    engine = StreamEngine(model, stream.rate_hz, stream.axes, args.window_s, args.ips,
                          args.tau, args.smooth_k, t0=stream.t0)

    def emit(ev):
        print(json.dumps(ev.to_record(args.probs)), flush=True)

    events = replay(engine, stream, args.speed, on_event=emit)
    known = sum(e.smoothed_label != "unknown" for e in events)
    print(f"{len(events)} events, {known} identified", file=sys.stderr)


def cmd_bench(args):
    model = load_any_model(args.model, args.quantized)
    stats = bench(model, args.n, model.config.input_cols, args.rate or CANONICAL_RATE_HZ,
                  args.window_s, args.seed)
    kind = "int8" if isinstance(model, quant.QuantModel) else "float"
    print(json.dumps({"model": kind, **stats}, indent=2))


# --------------------------------------------------------------- parser ---

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--rate", type=float, default=None,
                        help="sampling rate in Hz (default: inferred or 100)")
    common.add_argument("--axes", type=int, choices=(3, 6), default=None)
    common.add_argument("--seed", type=int, default=0)

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--model", required=True, help="GMDL model file")
    model_opts.add_argument("--quantized", action="store_true",
                            help="require (and use) an int8 model")

    p = _Parser(prog="gaitid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="emit a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=24)
    s.add_argument("--profile-seed", type=int, default=0,
                   help="picks the walkers; --seed only changes the noise realisation")
    s.add_argument("--windows", type=int, default=200, help="windows per class")
    s.add_argument("--background", type=int, default=480,
                   help="non-walking windows labelled -1")
    s.add_argument("--window-s", type=float, default=3.0)
    s.add_argument("--streams", type=int, default=24, help="CSV streams to write")
    s.add_argument("--stream-s", type=float, default=20.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("convert-whugait", parents=[common], help="whuGAIT text -> CSV")
    s.add_argument("src")
    s.add_argument("--out", required=True)
    s.add_argument("--splits", nargs="+", default=["train", "test"])
    s.set_defaults(func=cmd_convert_whugait)

    s = sub.add_parser("segment", parents=[common], help="CSV stream -> segments-binary")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--min-duration", type=float, default=2.0)
    s.add_argument("--cv-max", type=float, default=0.2)
    s.add_argument("--method", choices=("heuristic", "learned"), default="heuristic")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("featurize", parents=[common],
                       help="segments-binary or CSV stream -> feature CSV")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--window-s", type=float, default=3.0)
    s.add_argument("--hop-s", type=float, default=1.0)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", parents=[common], help="train the float model")
    s.add_argument("features")
    s.add_argument("--model", required=True, help="output GMDL file")
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--lr", type=float, default=5e-4)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--val-fraction", type=float, default=0.2)
    s.add_argument("--history", help="per-epoch history CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common, model_opts], help="accuracy + confusion")
    s.add_argument("features")
    s.add_argument("--tau", type=float, default=0.6)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("quantize", parents=[common], help="int8 post-training quantization")
    s.add_argument("--model", required=True, help="float GMDL file")
    s.add_argument("--calib", required=True, help="feature CSV for calibration ranges")
    s.add_argument("--out", required=True)
    s.add_argument("--eval", help="feature CSV to compare float and int8 accuracy")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("report-memory", parents=[common], help="flash and arena footprint")
    s.add_argument("--model", required=True, help="int8 GMDL file")
    s.add_argument("--quantized", action="store_true", help="accepted for symmetry")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_report_memory)

    s = sub.add_parser("stream", parents=[common, model_opts],
                       help="replay a CSV stream, one JSON event per line")
    s.add_argument("input")
    s.add_argument("--window-s", type=float, default=3.0)
    s.add_argument("--ips", type=float, default=4.0, help="inferences per second")
    s.add_argument("--tau", type=float, default=0.6)
    s.add_argument("--smooth-k", type=int, default=4)
    s.add_argument("--speed", type=float, default=1.0,
                   help="replay speed multiple; 0 = as fast as possible")
    s.add_argument("--probs", action="store_true", help="include raw probabilities")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("bench", parents=[common, model_opts], help="inference latency")
    s.add_argument("--n", type=int, default=200, help="windows to time")
    s.add_argument("--window-s", type=float, default=3.0)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "rate", None) is None and args.command == "synth":
        args.rate = CANONICAL_RATE_HZ
    try:
        args.func(args)
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, GaitError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
