"""Metric suite over a test split: realism, prediction gain, actionability,
per-sample latency, and batch latency, with 95% confidence intervals and
markdown/CSV report rendering."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .engines import (
    CfResult,
    CsgpConfig,
    FeedbackDiff,
    GanModels,
    RgdConfig,
    countergan_generate,
    countergan_generate_batch,
    csgp_generate,
    rgd_generate,
)
from .errors import CfeedbackError, MeasurementError, SpecificationError
from .predictors import AutoencoderModel, ClassifierModel, PrototypeSet, reconstruction_error
from .profiles import Dataset, ProfileSchema

METRIC_NAMES = ("realism", "prediction_gain", "actionability", "latency_ms", "batch_latency_s")

# arrow per metric: does a larger or a lower value win
METRIC_DIRECTIONS = {
    "realism": "lower",
    "prediction_gain": "higher",
    "actionability": "lower",
    "latency_ms": "lower",
    "batch_latency_s": "lower",
}

METHOD_LABELS = {"rgd": "RGD", "csgp": "CSGP", "countergan": "CounteRGAN"}


@dataclass
class MetricRecord:
    name: str
    values: list[float]
    mean: float
    ci_half_width: float

    def __post_init__(self):
        if self.ci_half_width < 0:
            raise SpecificationError("ci_half_width must be non-negative")
        if not math.isfinite(self.mean):
            raise SpecificationError("metric mean must be finite")


@dataclass
class BenchmarkReport:
    methods: dict[str, dict[str, MetricRecord]]
    n_test: int
    seeds: dict = field(default_factory=dict)
    classifier_accuracy: float = float("nan")
    failures: dict[str, int] = field(default_factory=dict)
    timestamp: str = ""
    # per-row CfResults keyed by method, for downstream constraint checks
    results: dict = field(default_factory=dict, repr=False)


def ci95(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width (1.96 * s / sqrt(n))."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise SpecificationError("ci95 needs at least one value")
    mean = float(arr.mean())
    if arr.size <= 1:
        return mean, 0.0
    s = float(arr.std(ddof=1))
    return mean, 1.96 * s / math.sqrt(arr.size)


def realism_metric(ae: AutoencoderModel, result: CfResult) -> float:
    """Squared reconstruction error of the finalized counterfactual."""
    return reconstruction_error(ae, result.norm_cf)


def prediction_gain(result: CfResult) -> float:
    return result.score_after - result.score_before


def actionability_metric(x_norm: np.ndarray, result: CfResult) -> float:
    """L1 distance between input and counterfactual in normalized space."""
    return float(np.abs(result.norm_cf - np.asarray(x_norm)).sum())


def _elapsed_ms(t0: float, t1: float) -> float:
    if t1 < t0:
        raise MeasurementError("monotonic clock went backwards")
    return (t1 - t0) * 1e3


def measure_latency(fn, inputs, warmup: int = 5) -> list[float]:
    """Per-invocation wall milliseconds; at least `warmup` unmeasured calls first."""
    inputs = list(inputs)
    if not inputs:
        raise SpecificationError("measure_latency needs at least one input")
    for i in range(warmup):
        fn(inputs[i % len(inputs)])
    samples = []
    for x in inputs:
        t0 = time.perf_counter()
        fn(x)
        samples.append(_elapsed_ms(t0, time.perf_counter()))
    return samples


def measure_batch_latency(fn, batch) -> float:
    """Wall seconds for one call over the whole batch."""
    t0 = time.perf_counter()
    fn(batch)
    return _elapsed_ms(t0, time.perf_counter()) / 1e3


def run_benchmark(
    classifier: ClassifierModel,
    ae: AutoencoderModel,
    gan: GanModels,
    test: Dataset,
    prototypes: PrototypeSet,
    rgd_config: RgdConfig | None = None,
    csgp_config: CsgpConfig | None = None,
    warmup: int = 5,
    seeds: dict | None = None,
    classifier_accuracy: float = float("nan"),
) -> BenchmarkReport:
    """Generate a counterfactual per test row and method, and aggregate metrics.

    Iterative methods loop sequentially over the split (their batch latency is
    the wall time of that loop); the GAN additionally gets one vectorized
    batch pass. Failures are counted per method and excluded from aggregates.
    """
    rgd_config = rgd_config or RgdConfig()
    csgp_config = csgp_config or CsgpConfig()
    schema = test.schema
    X, raws = test.X, test.raw
    n = len(test)
    if n == 0:
        raise SpecificationError("test split is empty")

    generators = {
        "rgd": lambda i: rgd_generate(classifier, X[i], schema, rgd_config, raw_input=raws[i]),
        "csgp": lambda i: csgp_generate(
            classifier, ae, prototypes, X[i], schema, csgp_config, raw_input=raws[i]
        ),
        "countergan": lambda i: countergan_generate(
            gan, classifier, X[i], schema, raw_input=raws[i]
        ),
    }

    methods: dict[str, dict[str, MetricRecord]] = {}
    failures: dict[str, int] = {}
    results: dict[str, list[CfResult | None]] = {}
    for name, gen in generators.items():
        for i in range(min(warmup, n)):
            try:
                gen(i)
            except CfeedbackError:
                pass
        per_sample: dict[str, list[float]] = {
            "realism": [], "prediction_gain": [], "actionability": [], "latency_ms": []
        }
        row_results: list[CfResult | None] = []
        failed = 0
        t_batch = time.perf_counter()
        for i in range(n):
            t0 = time.perf_counter()
            try:
                result = gen(i)
            except CfeedbackError:
                failed += 1
                row_results.append(None)
                continue
            latency = _elapsed_ms(t0, time.perf_counter())
            row_results.append(result)
            per_sample["realism"].append(realism_metric(ae, result))
            per_sample["prediction_gain"].append(prediction_gain(result))
            per_sample["actionability"].append(actionability_metric(X[i], result))
            per_sample["latency_ms"].append(latency)
        loop_seconds = _elapsed_ms(t_batch, time.perf_counter()) / 1e3

        if name == "countergan":
            batch_seconds = measure_batch_latency(
                lambda rows: countergan_generate_batch(gan, classifier, rows, schema, raws), X
            )
        else:
            batch_seconds = loop_seconds

        records = {}
        for metric, values in per_sample.items():
            mean, hw = ci95(values) if values else (float("nan"), 0.0)
            records[metric] = MetricRecord(name=metric, values=values, mean=mean, ci_half_width=hw)
        records["batch_latency_s"] = MetricRecord(
            name="batch_latency_s", values=[], mean=batch_seconds, ci_half_width=0.0
        )
        methods[name] = records
        failures[name] = failed
        results[name] = row_results

    return BenchmarkReport(
        methods=methods,
        n_test=n,
        seeds=seeds or {},
        classifier_accuracy=classifier_accuracy,
        failures=failures,
        timestamp=datetime.now(timezone.utc).isoformat(),
        results=results,
    )


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def render_table(report: BenchmarkReport) -> str:
    """Markdown metric table: rows are metrics, columns are methods."""
    method_keys = list(report.methods.keys())
    header = "| Metric | " + " | ".join(METHOD_LABELS.get(m, m) for m in method_keys) + " |"
    rule = "|---|" + "---|" * len(method_keys)
    lines = [header, rule]
    for metric in METRIC_NAMES:
        arrow = "↓" if METRIC_DIRECTIONS[metric] == "lower" else "↑"
        cells = []
        for m in method_keys:
            rec = report.methods[m][metric]
            if rec.values:
                cells.append(f"{_fmt(rec.mean)} ± {_fmt(rec.ci_half_width)}")
            else:
                cells.append(_fmt(rec.mean))
        lines.append(f"| {arrow} {metric} | " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("↓ lower is better, ↑ higher is better; cells are mean ± 95% half-width.")
    return "\n".join(lines) + "\n"


def _fmt_raw(value: float, integral: bool) -> str:
    if integral:
        return str(int(round(value)))
    return f"{value:.2f}"


def _fmt_delta(value: float, integral: bool) -> str:
    if value == 0:
        return "0"
    body = _fmt_raw(abs(value), integral)
    return ("+" if value > 0 else "-") + body


def render_examples(
    examples: list[tuple[np.ndarray, dict[str, FeedbackDiff]]],
    schema: ProfileSchema,
) -> str:
    """Feedback tables: initial values plus per-method deltas for mutable features,
    with before/after approval scores in the bottom rows."""
    blocks = []
    for idx, (raw, diffs) in enumerate(examples, start=1):
        method_keys = list(diffs.keys())
        header = "| Feature | Initial | " + " | ".join(
            METHOD_LABELS.get(m, m) for m in method_keys
        ) + " |"
        rule = "|---|---|" + "---|" * len(method_keys)
        lines = [f"**Profile {idx}**", "", header, rule]
        for i, f in enumerate(schema.features):
            if not f.mutable:
                continue
            integral = f.kind != "continuous"
            cells = []
            for m in method_keys:
                entry = next((e for e in diffs[m].entries if e.feature == f.name), None)
                cells.append(_fmt_delta(entry.delta if entry else 0.0, integral))
            lines.append(
                f"| {f.name} | {_fmt_raw(raw[i], integral)} | " + " | ".join(cells) + " |"
            )
        before = next(iter(diffs.values())).score_before
        lines.append(
            f"| *score before* | {before:.2f} | " + " | ".join("" for _ in method_keys) + " |"
        )
        lines.append(
            "| *score after* | | "
            + " | ".join(f"{diffs[m].score_after:.2f}" for m in method_keys)
            + " |"
        )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def export_csv(report: BenchmarkReport, path: str) -> None:
    """method, metric, mean, ci_half_width, n, failures — full float precision."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "mean", "ci_half_width", "n", "failures"])
        for method, records in report.methods.items():
            for metric in METRIC_NAMES:
                rec = records[metric]
                n = len(rec.values) if rec.values else (1 if metric == "batch_latency_s" else 0)
                writer.writerow(
                    [method, metric, repr(rec.mean), repr(rec.ci_half_width),
                     n, report.failures.get(method, 0)]
                )
    os.replace(tmp, path)


def read_csv_means(path: str) -> dict[tuple[str, str], float]:
    """Parse an exported report CSV back into {(method, metric): mean}."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[(row["method"], row["metric"])] = float(row["mean"])
    return out
