"""Command-line entry point: data generation, training, benchmarking,
one-off explanations, and serving.

Every artifact write is atomic (temp file + rename) and accompanied by a
run-manifest JSON recording the seeds and flags that produced it. Exit
codes: 0 success, 1 runtime/user error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

from . import benchmark as bench
from .engines import (
    CounterganConfig,
    CsgpConfig,
    RgdConfig,
    countergan_generate,
    countergan_train,
    csgp_generate,
    export_gan_traces,
    make_diff,
    rgd_generate,
    save_gan,
)
from .errors import CfeedbackError
from .numerics import Rand
from .predictors import (
    ClassifierModel,
    TrainConfig,
    compute_prototypes,
    load_model,
    save_model,
    save_prototypes,
    train_autoencoder,
    train_classifier,
)
from .profiles import (
    GeneratorConfig,
    generate_dataset,
    load_csv,
    normalize,
    parse_profile_json,
    save_csv,
    save_schema,
    split,
)

DEFAULT_SPLIT_SEED = 123
DEFAULT_TRAIN_FRACTION = 0.8


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_manifest(out_dir: str, command: str, arguments: dict, artifacts: list[str],
                    metrics: dict | None = None) -> None:
    manifest = {
        "command": command,
        "arguments": arguments,
        "artifacts": {os.path.basename(p): _sha256(p) for p in artifacts},
        "metrics": metrics or {},
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    _write_atomic(os.path.join(out_dir, f"{command}.manifest.json"),
                  json.dumps(manifest, indent=2))


def _load_split(data_path: str, split_seed: int, train_fraction: float):
    dataset = load_csv(data_path)
    return split(dataset, train_fraction, Rand(split_seed))


def _require_file(path: str, flag: str) -> None:
    if not os.path.exists(path):
        raise CfeedbackError(f"{flag}: no such file: {path}")


def cmd_gen_data(args) -> int:
    config = GeneratorConfig(n_samples=args.n, target_positive_rate=args.positive_rate,
                             seed=args.seed, label_noise_std=args.label_noise_std)
    dataset = generate_dataset(config, Rand(args.seed))
    save_csv(dataset, args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_manifest(out_dir, "gen-data", _arg_dict(args), [args.out],
                    metrics={"rows": len(dataset), "positive_rate": dataset.positive_rate})
    print(f"wrote {len(dataset)} rows to {args.out} "
          f"(positive rate {dataset.positive_rate:.4f})")
    return 0


def cmd_train_classifier(args) -> int:
    _require_file(args.data, "--data")
    train, test = _load_split(args.data, args.split_seed, args.train_fraction)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.learning_rate, seed=args.seed)
    model, report = train_classifier(train, test, config)
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "classifier.json")
    schema_path = os.path.join(args.out, "schema.json")
    save_model(model, model_path)
    save_schema(train.schema, schema_path)
    _write_manifest(args.out, "train-classifier", _arg_dict(args),
                    [model_path, schema_path], metrics=report)
    print(f"classifier: train accuracy {report['train_accuracy']:.4f}, "
          f"test accuracy {report['test_accuracy']:.4f} -> {model_path}")
    return 0


def cmd_train_autoencoder(args) -> int:
    _require_file(args.data, "--data")
    train, _ = _load_split(args.data, args.split_seed, args.train_fraction)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.learning_rate, seed=args.seed)
    ae = train_autoencoder(train, noise_std=args.noise_std, config=config)
    protos = compute_prototypes(ae, train, target_class=1, k=args.prototype_k)
    os.makedirs(args.out, exist_ok=True)
    ae_path = os.path.join(args.out, "autoencoder.json")
    proto_path = os.path.join(args.out, "prototypes.json")
    save_model(ae, ae_path)
    save_prototypes(protos, proto_path)
    _write_manifest(args.out, "train-autoencoder", _arg_dict(args), [ae_path, proto_path],
                    metrics={"noise_std": args.noise_std})
    print(f"autoencoder -> {ae_path}; prototypes (k={args.prototype_k}) -> {proto_path}")
    return 0


def cmd_train_countergan(args) -> int:
    _require_file(args.classifier, "--classifier")
    _require_file(args.data, "--data")
    classifier = load_model(args.classifier)
    if not isinstance(classifier, ClassifierModel):
        raise CfeedbackError(f"--classifier: {args.classifier} is not a classifier model")
    train, _ = _load_split(args.data, args.split_seed, args.train_fraction)
    if classifier.schema.digest() != train.schema.digest():
        raise CfeedbackError(
            "--classifier was trained against a different schema than this data/split; "
            "re-run with the same --split-seed used for train-classifier"
        )
    config = CounterganConfig(reg_weight=args.reg_weight, steps=args.steps,
                              batch_size=args.batch_size, seed=args.seed)
    gan = countergan_train(classifier, train, train.schema, config, Rand(args.seed))
    os.makedirs(args.out, exist_ok=True)
    gan_path = os.path.join(args.out, "gan.json")
    traces_path = os.path.join(args.out, "countergan_losses.csv")
    save_gan(gan, gan_path)
    export_gan_traces(gan, traces_path)
    _write_manifest(args.out, "train-countergan", _arg_dict(args), [gan_path, traces_path],
                    metrics={"final_d_loss": gan.d_losses[-1], "final_g_loss": gan.g_losses[-1]})
    print(f"countergan ({args.steps} steps, lambda={args.reg_weight}) -> {gan_path}")
    return 0


def _load_artifacts(models_dir: str):
    from .service import load_snapshot

    return load_snapshot(models_dir)


def cmd_benchmark(args) -> int:
    _require_file(args.data, "--data")
    snap = _load_artifacts(args.models_dir)
    _, test = _load_split(args.data, args.split_seed, args.train_fraction)
    if snap.schema.digest() != test.schema.digest():
        raise CfeedbackError("models and data/split schemas do not match")
    if args.limit is not None and args.limit < len(test):
        from .profiles import Dataset

        test = Dataset(schema=test.schema, raw=test.raw[: args.limit],
                       labels=test.labels[: args.limit])
    report = bench.run_benchmark(
        snap.classifier, snap.autoencoder, snap.gan, test, snap.prototypes,
        seeds={"split_seed": args.split_seed},
        classifier_accuracy=snap.classifier.metadata.get("test_accuracy", float("nan")),
    )
    os.makedirs(args.out, exist_ok=True)
    md_path = os.path.join(args.out, "report.md")
    csv_path = os.path.join(args.out, "report.csv")
    _write_atomic(md_path, bench.render_table(report))
    bench.export_csv(report, csv_path)
    _write_manifest(args.out, "benchmark", _arg_dict(args), [md_path, csv_path],
                    metrics={"n_test": report.n_test, "failures": report.failures})
    print(bench.render_table(report))
    print(f"report written to {md_path} and {csv_path}")
    return 0


def cmd_explain(args) -> int:
    _require_file(args.profile, "--profile")
    snap = _load_artifacts(args.models_dir)
    with open(args.profile, encoding="utf-8") as fh:
        raw = parse_profile_json(fh.read(), snap.schema)
    x = normalize(raw, snap.schema)
    if args.method == "rgd":
        result = rgd_generate(snap.classifier, x, snap.schema, RgdConfig(), raw_input=raw)
    elif args.method == "csgp":
        result = csgp_generate(snap.classifier, snap.autoencoder, snap.prototypes, x,
                               snap.schema, CsgpConfig(), raw_input=raw)
    else:
        result = countergan_generate(snap.gan, snap.classifier, x, snap.schema, raw_input=raw)
    diff = make_diff(raw, result, snap.schema)
    print(bench.render_examples([(raw, {args.method: diff})], snap.schema))
    print(f"score: {result.score_before:.4f} -> {result.score_after:.4f} "
          f"({'approved' if result.score_after >= 0.5 else 'rejected'} at threshold 0.5), "
          f"{result.iterations} iterations, {result.elapsed_ms:.2f} ms")
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, run_service

    config = ServiceConfig(
        model_dir=args.models_dir,
        host=args.host,
        port=args.port,
        default_method=args.default_method,
        request_log_path=args.request_log,
    )
    run_service(config)
    return 0


def _arg_dict(args) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split-seed", type=int, default=DEFAULT_SPLIT_SEED,
                   help="seed for the train/test partition (must match across commands)")
    p.add_argument("--train-fraction", type=float, default=DEFAULT_TRAIN_FRACTION,
                   help="fraction of rows in the training split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfeedback",
        description="Counterfactual what-if feedback engine for tabular binary classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the calibrated synthetic dataset")
    p.add_argument("--n", type=int, default=3029, help="number of profiles")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--positive-rate", type=float, default=0.43)
    p.add_argument("--label-noise-std", type=float, default=0.15)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-classifier", help="train the approval classifier")
    p.add_argument("--data", required=True, help="dataset CSV from gen-data")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    _add_split_flags(p)
    p.add_argument("--out", required=True, help="output model directory")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-autoencoder", help="train the denoising autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--prototype-k", type=int, default=5)
    _add_split_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_autoencoder)

    p = sub.add_parser("train-countergan", help="train the residual-generator GAN")
    p.add_argument("--classifier", required=True, help="classifier.json path")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="reg_weight", type=float, default=1.0,
                   help="proximity regularizer weight")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=5)
    _add_split_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_countergan)

    p = sub.add_parser("benchmark", help="run the metric suite over the test split")
    p.add_argument("--models-dir", default=os.environ.get("RECOURSE_MODEL_DIR"), required=False)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=None, help="cap the number of test rows")
    _add_split_flags(p)
    p.add_argument("--out", required=True, help="output report directory")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("explain", help="one-off counterfactual for a profile JSON")
    p.add_argument("--models-dir", default=os.environ.get("RECOURSE_MODEL_DIR"))
    p.add_argument("--profile", required=True, help="profile JSON path")
    p.add_argument("--method", choices=["rgd", "csgp", "countergan"], default="countergan")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("serve", help="serve the HTTP/JSON API over a model directory")
    p.add_argument("--models-dir", default=os.environ.get("RECOURSE_MODEL_DIR"))
    p.add_argument("--host", default=os.environ.get("RECOURSE_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=int(os.environ.get("RECOURSE_PORT", "8000")))
    p.add_argument("--default-method", choices=["rgd", "csgp", "countergan"],
                   default="countergan")
    p.add_argument("--request-log", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "models_dir", "unset") is None:
        print("error: --models-dir is required (or set RECOURSE_MODEL_DIR)", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except CfeedbackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
