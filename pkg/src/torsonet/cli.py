"""Command-line entry point: ``torsonet {summary,index,train,eval,predict,verify}``.

Exit codes: 0 success, 1 verification failure, 2 usage error,
3 data/format error, 4 runtime/numeric error.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .data import decode_image, index_dataset, split
from .errors import ArgumentError, DatasetError, FormatError, NumericError
from .graph import build_model, format_summary, forward
from .metrics import evaluate
from .serialize import load_weights, to_bytes
from .train import TrainConfig, train
from .verify import run_verification

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3, 4

log = logging.getLogger("torsonet")


def _thread_limit():
    """Honour TORSONET_THREADS (0 or unset = library default) for BLAS pools."""
    raw = os.environ.get("TORSONET_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ArgumentError(f"TORSONET_THREADS must be an integer, got {raw!r}") from None
    if n <= 0:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl not installed; TORSONET_THREADS ignored")
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# commands

def cmd_summary(args):
    print(format_summary(build_model(args.classes, args.activation)))
    return EXIT_OK


def cmd_index(args):
    index = index_dataset(args.data)
    if args.out:
        index.write_manifest(args.out)
    else:
        for p, c in index.entries:
            print(f"{p}\t{index.class_names[c]}")
    counts = ", ".join(f"{n}={k}" for n, k in zip(index.class_names, index.class_counts()))
    print(f"{len(index)} images in {index.num_classes} classes ({counts})", file=sys.stderr)
    return EXIT_OK


def cmd_train(args):
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch,
                      seed=args.seed, optimizer=args.optimizer, val_fraction=args.val_split)
    out = Path(args.out)
    if not out.parent.exists():
        raise ArgumentError(f"output directory {out.parent} does not exist")
    history_path = Path(args.history) if args.history else out.with_name(out.name + ".history.jsonl")

    index = index_dataset(args.data)
    train_set, val_set = split(index, cfg.val_fraction, cfg.seed)
    print(f"train {len(train_set)} / val {len(val_set)} images, classes: "
          f"{', '.join(index.class_names)}")
    model = build_model(index.num_classes, args.activation, cfg.dropout_rate, seed=cfg.seed,
                        class_names=index.class_names)

    def report(r):
        print(f"epoch {r.epoch:3d}  loss {r.train_loss:.4f}  train_acc {r.train_acc:.4f}  "
              f"val_acc {r.val_acc:.4f}  {r.seconds:.1f}s", flush=True)

    history = train(model, train_set, val_set, cfg, callback=report)
    _atomic_write(out, to_bytes(model))
    _atomic_write(history_path, history.to_jsonl().encode("utf-8"))
    print(f"wrote {out} and {history_path}")
    return EXIT_OK


def cmd_eval(args):
    model = load_weights(args.model)
    index = index_dataset(args.data)
    if index.num_classes != model.num_classes:
        raise DatasetError(f"{args.data} has {index.num_classes} classes but the model predicts "
                           f"{model.num_classes}")
    if list(index.class_names) != list(model.class_names):
        log.warning("class directories %s differ from the model's %s", index.class_names,
                    model.class_names)
    cm, report = evaluate(model, index, batch_size=args.batch)
    print(report.format_table())
    if args.metrics_out:
        _atomic_write(args.metrics_out, report.to_jsonl().encode("utf-8"))
    return EXIT_OK


def cmd_predict(args):
    model = load_weights(args.model)
    status = EXIT_OK
    for path in args.images:
        try:
            image = decode_image(path)
        except (FormatError, OSError) as exc:
            print(f"{path}\tERROR\t{exc}", file=sys.stderr)
            status = EXIT_DATA
            continue
        probs, _ = forward(model, image)
        best = int(np.argmax(probs))
        vec = " ".join(f"{p:.6f}" for p in probs)
        print(f"{path}\t{model.class_names[best]}\t{vec}")
    return status


def cmd_verify(args):
    passed, lines = run_verification(args.seed, trials=args.trials)
    for line in lines:
        print(line)
    print("verification " + ("PASSED" if passed else "FAILED"))
    return EXIT_OK if passed else EXIT_VERIFY


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="torsonet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summary", help="print the layer table")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--activation", choices=["relu", "swish"], default="relu")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("index", help="list a class-per-directory dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="manifest file (path<TAB>class per line)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="weight archive to write")
    p.add_argument("--activation", choices=["relu", "swish"], default="relu")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-split", type=float, default=0.2)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--history", help="history export (default: OUT.history.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class precision/recall/F1 on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--metrics-out", help="write per-class records as JSON lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify image files")
    p.add_argument("--model", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("verify", help="gradient checks and layer-table conformance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
