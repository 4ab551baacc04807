"""Command-line pipeline: synthesize or ingest data, train, evaluate,
predict, explain, search counterfactuals, emit plot data, serve HTTP.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
Every run logs its fully resolved configuration (defaults and seed
included) to stderr before doing any work; all file outputs are
byte-deterministic for a fixed seed in single-threaded mode.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import data as dio
from . import explain as ex
from . import plots
from . import training as tr
from .checkpoint import load_checkpoint, save_checkpoint
from .docio import canonical_dump, canonical_dumps
from .errors import SchemaError, SleepLensError, TrainingDivergedError
from .service import ApiSession, counterfactual_document, predict_document, shap_document

log = logging.getLogger("sleeplens")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DATA_DIR_ENV = "SLEEPLENS_DATA_DIR"


def _resolve_path(path):
    if path is None or os.path.isabs(path) or os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _log_config(args):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    log.info("resolved config: %s", json.dumps(resolved, default=str, sort_keys=True))


def _load_labeled(path):
    return dio.parse_csv(_resolve_path(path))


def _read_instance(args, stats=None):
    """Instance from --instance JSON or --data CSV + --subject."""
    if getattr(args, "instance", None):
        with open(_resolve_path(args.instance), encoding="utf-8") as fh:
            seq = dio.sequence_from_doc(json.load(fh))
    elif getattr(args, "data", None) and getattr(args, "subject", None):
        matches = [s for s in _load_labeled(args.data) if s.subject_id == args.subject]
        if not matches:
            raise SchemaError(f"subject {args.subject!r} not found in {args.data}")
        seq = matches[0]
    else:
        raise SchemaError("provide --instance FILE or both --data FILE and --subject ID")
    if stats is not None:
        (seq,), _ = dio.preprocess([seq], stats)
    return seq


def _background_set(args, stats):
    data = _load_labeled(args.data)
    processed, _ = dio.preprocess(data, stats)
    return processed[: args.background]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    _log_config(args)
    sequences = dio.synth_generate(args.subjects, args.timesteps, seed=args.seed)
    dio.write_csv(args.out, sequences)
    log.info("wrote %d subjects x %d timesteps to %s", args.subjects, args.timesteps, args.out)
    return EXIT_OK


def cmd_train(args):
    _log_config(args)
    data = _load_labeled(args.data)
    test_n = args.test_n if args.test_n is not None else max(0, len(data) - args.train_n)
    split = tr.prepare_split(data, args.train_n, test_n, seed=args.seed)
    oversample = args.oversample
    if oversample not in (None, "balance"):
        oversample = float(oversample)
    cfg = tr.TrainConfig(
        arch=args.arch,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        early_stop_patience=args.patience,
        seed=args.seed,
        augmentation=tr.AugmentSpec(args.jitter, oversample),
        hyper={"hidden_size": args.hidden} if args.hidden else {},
        parallel=args.parallel,
    )
    log.info("training %s on %d sequences (lr=%s)", cfg.arch, len(split.train), cfg.learning_rate)
    checkpoint, history = tr.train(split, cfg)
    save_checkpoint(checkpoint, args.out)
    if args.history:
        tr.write_history(history, args.history)
    if split.test and args.metrics:
        metrics = tr.evaluate(checkpoint, split.test)
        canonical_dump(metrics.to_doc(), args.metrics)
        log.info("test accuracy %.4f, mean loss %.4f", metrics.accuracy, metrics.mean_loss)
    log.info("checkpoint written to %s", args.out)
    return EXIT_OK


def cmd_evaluate(args):
    _log_config(args)
    checkpoint = load_checkpoint(_resolve_path(args.checkpoint))
    data, _ = dio.preprocess(_load_labeled(args.data), checkpoint.normalization_stats)
    metrics = tr.evaluate(checkpoint, data)
    doc = metrics.to_doc()
    if args.out:
        canonical_dump(doc, args.out)
    else:
        sys.stdout.write(canonical_dumps(doc))
    if args.scatter:
        plots.write_prediction_scatter(checkpoint, data, args.scatter, args.scatter_svg)
    return EXIT_OK


def cmd_predict(args):
    _log_config(args)
    checkpoint = load_checkpoint(_resolve_path(args.checkpoint))
    session = ApiSession(checkpoint, background=[])
    instance = _read_instance(args)
    doc = predict_document(session, dio.sequence_to_doc(instance))
    if args.out:
        canonical_dump(doc, args.out)
    else:
        sys.stdout.write(canonical_dumps(doc))
    return EXIT_OK


def cmd_shap(args):
    _log_config(args)
    checkpoint = load_checkpoint(_resolve_path(args.checkpoint))
    session = ApiSession(checkpoint, _background_set(args, checkpoint.normalization_stats))
    instance = _read_instance(args)
    body = {
        "instance": dio.sequence_to_doc(instance),
        "method": args.method,
        "n_samples": args.samples,
        "seed": args.seed,
        "per_timestep": args.per_timestep,
    }
    if args.target_class is not None:
        body["target_class"] = args.target_class
    doc = shap_document(session, body)
    canonical_dump(doc, args.out)
    if args.plot or args.svg:
        report = _report_from_doc(doc)
        plots.write_shap_matrix(report, args.plot or args.out + ".tsv", args.svg)
    log.info("attribution report written to %s", args.out)
    return EXIT_OK


def _report_from_doc(doc):
    import numpy as np

    return ex.ShapReport(
        matrix=np.asarray(doc["attributions"], dtype=float),
        feature_names=doc["feature_names"],
        timestep_labels=doc["timestep_labels"],
        base_value=doc["base_value"],
        model_output=doc["model_output"],
        target_class=doc["target_class"],
        method=doc["method"],
        background_size=doc["background_size"],
        seed=doc.get("seed"),
    )


def cmd_counterfactual(args):
    _log_config(args)
    checkpoint = load_checkpoint(_resolve_path(args.checkpoint))
    session = ApiSession(checkpoint, background=[], request_timeout=args.timeout)
    instance = _read_instance(args)
    body = {
        "instance": dio.sequence_to_doc(instance),
        "target_class": args.target_class,
        "mutable_features": args.mutable.split(",") if args.mutable else None,
        "config": {"max_iters": args.max_iters},
    }
    doc = counterfactual_document(session, body)
    canonical_dump(doc, args.out)
    log.info(
        "counterfactual %s (distance %.4f) written to %s",
        "converged" if doc["converged"] else "did not converge",
        doc["distance"],
        args.out,
    )
    return EXIT_OK


def cmd_attention(args):
    _log_config(args)
    checkpoint = load_checkpoint(_resolve_path(args.checkpoint))
    instance = _read_instance(args, stats=checkpoint.normalization_stats)
    trace = ex.attention_trace(checkpoint, instance)
    canonical_dump(trace.to_doc(), args.out)
    if args.plot or args.svg:
        plots.write_attention_trace(trace, args.plot or args.out + ".tsv", args.svg)
    return EXIT_OK


def cmd_serve(args):
    _log_config(args)
    checkpoint = load_checkpoint(_resolve_path(args.checkpoint))
    background = _background_set(args, checkpoint.normalization_stats) if args.data else []
    from .service import make_server

    session = ApiSession(checkpoint, background, request_timeout=args.timeout)
    server = make_server(session, args.host, args.port, static_root=args.static_root)
    log.info("serving on http://%s:%d (model %s)", *server.server_address, session.model_hash[:12])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sleeplens",
        description="Train, evaluate, and explain sleep-disorder sequence classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--timesteps", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one architecture on a CSV")
    p.add_argument("--arch", choices=("lstm", "tcn", "tft"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--train-n", type=int, default=400)
    p.add_argument("--test-n", type=int, default=None)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--oversample", default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=int, default=1,
                   help="shard gradient evaluation across N threads")
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--metrics", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--scatter", default=None, help="prediction scatter TSV path")
    p.add_argument("--scatter-svg", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one instance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance", default=None, help="instance JSON (wire format)")
    p.add_argument("--data", default=None)
    p.add_argument("--subject", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("shap", help="Shapley attribution report for one instance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CSV supplying the background set")
    p.add_argument("--background", type=int, default=ex.DEFAULT_BACKGROUND_SIZE)
    p.add_argument("--instance", default=None)
    p.add_argument("--subject", default=None)
    p.add_argument("--method", choices=("exact", "kernel"), default="kernel")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-class", type=int, default=None)
    p.add_argument("--per-timestep", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="attribution matrix TSV path")
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_shap)

    p = sub.add_parser("counterfactual", help="minimal feature change flipping the prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--subject", default=None)
    p.add_argument("--target-class", type=int, required=True)
    p.add_argument("--mutable", default=None, help="comma-separated feature names")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("attention", help="attention trace for one instance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--subject", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("serve", help="HTTP service over a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="CSV supplying the SHAP background set")
    p.add_argument("--background", type=int, default=ex.DEFAULT_BACKGROUND_SIZE)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--static-root", default=None, help="directory of UI assets to serve at /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage problems; remap usage to 1
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError) as exc:
        log.error("cannot read input: %s", exc)
        return EXIT_DATA
    except SchemaError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        log.error("runtime error: %s", exc)
        return EXIT_RUNTIME
    except SleepLensError as exc:
        log.error("error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
