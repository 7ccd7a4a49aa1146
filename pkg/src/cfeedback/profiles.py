"""Candidate-profile schema, constraint utilities, and a calibrated synthetic dataset.

A profile is a flat vector of 33 raw-unit features. Six of them are mutable
(the knobs a candidate can actually turn); the other 27 are immutable facts
and marketplace metadata. Counterfactual search runs in z-scored space, so
the schema also carries per-feature normalization stats fitted on a training
split.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import CalibrationError, ParseError, SchemaError, SpecificationError
from .numerics import Rand

SCHEMA_FORMAT_VERSION = 1

KIND_CONTINUOUS = "continuous"
KIND_INTEGER = "integer"
KIND_MULTIPLE_OF = "multiple_of"

# Steepness of the hidden labelling sigmoid (applied to the unit-variance score)
# and the exogenous mislabel rate. The base rate keeps the conditional label
# probability bounded away from 0/1 everywhere, so no region of feature space
# is hopeless for gradient-based search against a calibrated classifier.
LABEL_SIGMOID_GAIN = 2.5
LABEL_BASE_FLIP = 0.02


@dataclass(frozen=True)
class FeatureSpec:
    """One feature: value kind, mutability, raw-unit bounds, normalization stats."""

    name: str
    kind: str
    mutable: bool
    lower: float
    upper: float
    step: float | None = None
    mean: float | None = None
    std: float | None = None

    def __post_init__(self):
        if self.kind not in (KIND_CONTINUOUS, KIND_INTEGER, KIND_MULTIPLE_OF):
            raise SpecificationError(f"unknown feature kind {self.kind!r}")
        if self.kind == KIND_MULTIPLE_OF:
            if self.step is None or self.step <= 0:
                raise SpecificationError(f"feature {self.name}: multiple_of needs a positive step")
            span = self.upper - self.lower
            if abs(span / self.step - round(span / self.step)) > 1e-9:
                raise SpecificationError(
                    f"feature {self.name}: step {self.step} does not divide the bound span {span}"
                )
        if self.lower > self.upper:
            raise SpecificationError(f"feature {self.name}: lower bound above upper bound")
        if self.std is not None and self.std <= 0:
            raise SpecificationError(f"feature {self.name}: fitted std must be positive")

    @property
    def fitted(self) -> bool:
        return self.mean is not None and self.std is not None

    def kind_json(self):
        """Wire form of the kind: "continuous" | "integer" | {"multiple_of": step}."""
        if self.kind == KIND_MULTIPLE_OF:
            return {"multiple_of": self.step}
        return self.kind


@dataclass(frozen=True)
class ProfileSchema:
    """Ordered feature definitions with unique names."""

    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SpecificationError("feature names must be unique")

    def __len__(self) -> int:
        return len(self.features)

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @cached_property
    def mutable_mask(self) -> np.ndarray:
        return np.array([f.mutable for f in self.features], dtype=bool)

    @property
    def mutable_count(self) -> int:
        return int(self.mutable_mask.sum())

    @property
    def immutable_count(self) -> int:
        return len(self.features) - self.mutable_count

    @cached_property
    def fitted(self) -> bool:
        return all(f.fitted for f in self.features)

    @cached_property
    def means(self) -> np.ndarray:
        self._require_fitted()
        return np.array([f.mean for f in self.features])

    @cached_property
    def stds(self) -> np.ndarray:
        self._require_fitted()
        return np.array([f.std for f in self.features])

    @cached_property
    def lowers(self) -> np.ndarray:
        return np.array([f.lower for f in self.features])

    @cached_property
    def uppers(self) -> np.ndarray:
        return np.array([f.upper for f in self.features])

    def _require_fitted(self) -> None:
        if not self.fitted:
            raise SpecificationError("schema normalization stats have not been fitted")

    def feature(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"unknown feature {name!r}")

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    def with_stats(self, means: np.ndarray, stds: np.ndarray) -> "ProfileSchema":
        feats = tuple(
            replace(f, mean=float(m), std=float(s))
            for f, m, s in zip(self.features, means, stds)
        )
        return ProfileSchema(features=feats)

    def to_json(self) -> dict:
        return {
            "version": SCHEMA_FORMAT_VERSION,
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "step": f.step,
                    "mutable": f.mutable,
                    "lower": f.lower,
                    "upper": f.upper,
                    "mean": f.mean,
                    "std": f.std,
                }
                for f in self.features
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ProfileSchema":
        from .errors import FormatError

        if not isinstance(data, dict):
            raise FormatError("schema record is not an object")
        if data.get("version") != SCHEMA_FORMAT_VERSION:
            raise FormatError(f"unsupported value in field 'version': {data.get('version')!r}")
        try:
            feats = tuple(
                FeatureSpec(
                    name=f["name"],
                    kind=f["kind"],
                    step=f.get("step"),
                    mutable=bool(f["mutable"]),
                    lower=float(f["lower"]),
                    upper=float(f["upper"]),
                    mean=None if f.get("mean") is None else float(f["mean"]),
                    std=None if f.get("std") is None else float(f["std"]),
                )
                for f in data["features"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed schema record: {exc}") from exc
        return cls(features=feats)

    def digest(self) -> str:
        """Stable content hash used to tie models to the schema they were trained on."""
        payload = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class Dataset:
    """Raw and normalized rows with binary labels over a fitted schema."""

    schema: ProfileSchema
    raw: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "labels", labels)
        if raw.ndim != 2 or raw.shape[1] != len(self.schema):
            raise SpecificationError(
                f"raw matrix has shape {raw.shape}, schema expects width {len(self.schema)}"
            )
        if labels.shape != (raw.shape[0],):
            raise SpecificationError("label count must equal row count")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise SpecificationError("labels must be binary")

    def __len__(self) -> int:
        return self.raw.shape[0]

    @cached_property
    def X(self) -> np.ndarray:
        """Rows normalized through the schema stats."""
        return normalize(self.raw, self.schema)

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int = 3029
    target_positive_rate: float = 0.43
    seed: int = 42
    # Calibrated so the hidden labelling rule itself scores about 0.85 accuracy,
    # leaving realistic headroom for a trained classifier.
    label_noise_std: float = 0.15

    def __post_init__(self):
        if self.n_samples <= 0:
            raise SpecificationError("n_samples must be positive")
        if not 0.0 < self.target_positive_rate < 1.0:
            raise SpecificationError("target_positive_rate must lie strictly inside (0, 1)")
        if self.label_noise_std <= 0:
            raise SpecificationError("label_noise_std must be positive")


def default_schema() -> ProfileSchema:
    """The 33-feature candidate profile: 6 mutable knobs, 27 immutable facts."""
    feats: list[FeatureSpec] = [
        FeatureSpec("expected_salary", KIND_MULTIPLE_OF, True, 60_000, 300_000, step=5_000),
        FeatureSpec("headline_word_count", KIND_INTEGER, True, 0, 30),
        FeatureSpec("experience_relevance_score", KIND_CONTINUOUS, True, 0, 3),
        FeatureSpec("work_experience_avg_word_count", KIND_CONTINUOUS, True, 0, 200),
        FeatureSpec("verified_years_of_experience", KIND_CONTINUOUS, True, 0, 45),
        FeatureSpec("skills_popularity_score", KIND_CONTINUOUS, True, 0, 3),
    ]
    binary_names = (
        "has_phd",
        "has_masters_degree",
        "has_bootcamp_certificate",
        "open_to_remote",
        "open_to_relocation",
        "has_referral",
        "profile_photo_present",
    )
    feats += [FeatureSpec(n, KIND_INTEGER, False, 0, 1) for n in binary_names]
    count_names = (
        "num_work_experiences",
        "num_education_entries",
        "num_skills_listed",
        "num_certifications",
        "num_languages_spoken",
        "num_publications",
        "num_awards",
        "num_volunteer_roles",
        "num_portfolio_items",
        "num_references",
    )
    feats += [FeatureSpec(n, KIND_INTEGER, False, 0, 50) for n in count_names]
    metadata_names = (
        "market_demand_index",
        "recruiter_view_rate",
        "search_appearance_score",
        "profile_freshness_score",
        "category_competition_index",
        "regional_salary_index",
        "engagement_score",
        "response_rate_score",
        "platform_tenure_score",
        "profile_completeness_score",
    )
    feats += [FeatureSpec(n, KIND_CONTINUOUS, False, -3, 3) for n in metadata_names]
    return ProfileSchema(features=tuple(feats))


def normalize(raw: np.ndarray, schema: ProfileSchema) -> np.ndarray:
    """Per-coordinate z-score using the schema's fitted stats."""
    schema._require_fitted()
    x = np.asarray(raw, dtype=np.float64)
    if x.shape[-1] != len(schema):
        raise SpecificationError(f"profile width {x.shape[-1]} != schema width {len(schema)}")
    return (x - schema.means) / schema.stds


def denormalize(norm: np.ndarray, schema: ProfileSchema) -> np.ndarray:
    """Inverse of `normalize`."""
    schema._require_fitted()
    x = np.asarray(norm, dtype=np.float64)
    if x.shape[-1] != len(schema):
        raise SpecificationError(f"profile width {x.shape[-1]} != schema width {len(schema)}")
    return x * schema.stds + schema.means


def apply_immutable_mask(residual: np.ndarray, schema: ProfileSchema) -> np.ndarray:
    """Zero the immutable coordinates of a residual/delta vector."""
    r = np.asarray(residual, dtype=np.float64)
    if r.shape[-1] != len(schema):
        raise SpecificationError(f"residual width {r.shape[-1]} != schema width {len(schema)}")
    out = r.copy()
    out[..., ~schema.mutable_mask] = 0.0
    return out


def _round_half_away(values: np.ndarray) -> np.ndarray:
    # np.round rounds half to even; the contract here is half away from zero.
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def apply_discrete_rounding(raw: np.ndarray, schema: ProfileSchema) -> np.ndarray:
    """Snap integer features to integers and stepped features to their grid."""
    x = np.asarray(raw, dtype=np.float64).copy()
    for i, f in enumerate(schema.features):
        if f.kind == KIND_INTEGER:
            x[..., i] = _round_half_away(x[..., i])
        elif f.kind == KIND_MULTIPLE_OF:
            x[..., i] = _round_half_away(x[..., i] / f.step) * f.step
    return x


def clamp_bounds(raw: np.ndarray, schema: ProfileSchema) -> np.ndarray:
    """Clip every coordinate into its raw-unit [lower, upper] range."""
    x = np.asarray(raw, dtype=np.float64)
    return np.clip(x, schema.lowers, schema.uppers)


def fit_stats(schema: ProfileSchema, raw: np.ndarray) -> ProfileSchema:
    """Schema copy with per-feature mean/std fitted on the given raw rows."""
    x = np.asarray(raw, dtype=np.float64)
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds > 1e-12, stds, 1.0)  # constant columns normalize to 0
    return schema.with_stats(means, stds)


def _truncated_normal(rng: Rand, mean, std: float, lower: float, upper: float, n: int) -> np.ndarray:
    """Rejection-sampled normal restricted to [lower, upper]; clips after 100 rounds."""
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (n,))
    out = rng.normal(size=n) * std + mean
    for _ in range(100):
        bad = (out < lower) | (out > upper)
        if not bad.any():
            return out
        out[bad] = rng.normal(size=int(bad.sum())) * std + mean[bad]
    return np.clip(out, lower, upper)


def generate_dataset(config: GeneratorConfig, rng: Rand) -> Dataset:
    """Draw a synthetic candidate population with a calibrated positive rate.

    Features are sampled per-kind within their bounds: salary uniform over its
    5000 grid, counts as discretized truncated normals, binaries as coin
    flips, and continuous features as truncated normals whose means shift
    with a latent quality class. Labels come from a hidden linear score over
    z-scored features plus Gaussian noise; the score bias is bisected until
    the empirical positive rate lands within +/-0.01 of the target.
    """
    schema = default_schema()
    n = config.n_samples
    d = len(schema)

    # Hidden linear rule. Mutable knobs carry most of the weight (two anchor
    # features dominate) so feedback restricted to them can actually flip
    # decisions; immutable features contribute a modest background signal.
    w = np.empty(d)
    mutable = schema.mutable_mask
    signs = np.where(rng.uniform(size=d) < 0.5, -1.0, 1.0)
    mutable_idx = np.where(mutable)[0]
    anchors = {schema.index("expected_salary"), schema.index("experience_relevance_score")}
    for j in mutable_idx:
        lo, hi = (1.8, 2.3) if j in anchors else (0.8, 1.2)
        w[j] = signs[j] * rng.uniform(lo, hi)
    w[~mutable] = rng.normal(size=int((~mutable).sum())) * 0.18

    # Latent quality class drives mean shifts of continuous features.
    latent = (rng.uniform(size=n) < config.target_positive_rate).astype(np.float64)
    centered = latent - config.target_positive_rate

    raw = np.empty((n, d))
    for i, f in enumerate(schema.features):
        if f.name == "expected_salary":
            n_grid = int(round((f.upper - f.lower) / f.step)) + 1
            raw[:, i] = f.lower + f.step * rng.integers(0, n_grid, size=n)
        elif f.kind == KIND_INTEGER and f.upper == 1:
            p = 0.2 + 0.6 * rng.uniform()
            raw[:, i] = (rng.uniform(size=n) < p).astype(np.float64)
        elif f.kind == KIND_INTEGER:
            span = f.upper - f.lower
            mean = f.lower + span * (0.15 + 0.5 * rng.uniform())
            std = span * (0.1 + 0.15 * rng.uniform())
            raw[:, i] = _round_half_away(_truncated_normal(rng, mean, std, f.lower, f.upper, n))
        else:
            span = f.upper - f.lower
            base = f.lower + span * (0.25 + 0.3 * rng.uniform())
            std = span * (0.12 + 0.1 * rng.uniform())
            shift = 1.3 * std * np.sign(w[i]) * centered
            raw[:, i] = _truncated_normal(rng, base + shift, std, f.lower, f.upper, n)

    # Hidden score over z-scored features, scaled to unit spread, then pushed
    # through a steepened sigmoid; labels are Bernoulli draws from that
    # probability. The steepness keeps the approval boundary sharp enough for
    # gradient-based search while the sampling noise bounds how well any
    # classifier can do.
    mu = raw.mean(axis=0)
    sd = raw.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    score = ((raw - mu) / sd) @ w
    score = (score - score.mean()) / score.std()
    noisy = score + rng.normal(size=n) * config.label_noise_std
    coins = rng.uniform(size=n)

    def label_probs(bias: float) -> np.ndarray:
        p = 1.0 / (1.0 + np.exp(-(LABEL_SIGMOID_GAIN * noisy + bias)))
        return LABEL_BASE_FLIP + (1.0 - 2.0 * LABEL_BASE_FLIP) * p

    lo, hi = -30.0, 30.0
    bias = 0.0
    for _ in range(100):
        bias = 0.5 * (lo + hi)
        rate = float((coins < label_probs(bias)).mean())
        if abs(rate - config.target_positive_rate) <= 0.01:
            break
        if rate < config.target_positive_rate:
            lo = bias
        else:
            hi = bias
    else:
        raise CalibrationError(
            f"positive-rate calibration did not converge (last rate {rate:.4f})"
        )
    labels = (coins < label_probs(bias)).astype(np.int64)

    return Dataset(schema=fit_stats(schema, raw), raw=raw, labels=labels)


def split(dataset: Dataset, train_fraction: float, rng: Rand) -> tuple[Dataset, Dataset]:
    """Random partition; normalization stats are refitted on the train side only."""
    if not 0.0 < train_fraction < 1.0:
        raise SpecificationError("train_fraction must lie strictly inside (0, 1)")
    n = len(dataset)
    n_train = int(math.floor(train_fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise SpecificationError("split would leave one partition empty")
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    fitted = fit_stats(dataset.schema, dataset.raw[train_idx])
    train = Dataset(schema=fitted, raw=dataset.raw[train_idx], labels=dataset.labels[train_idx])
    test = Dataset(schema=fitted, raw=dataset.raw[test_idx], labels=dataset.labels[test_idx])
    return train, test


def save_csv(dataset: Dataset, path: str) -> None:
    """Raw values plus label, one row per profile; floats keep full precision."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.schema.names) + ["label"])
        for row, label in zip(dataset.raw, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    os.replace(tmp, path)


def load_csv(path: str, schema: ProfileSchema | None = None) -> Dataset:
    """Read a dataset CSV; stats are fitted over the whole file."""
    if schema is None:
        schema = default_schema()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        expected = list(schema.names) + ["label"]
        if header != expected:
            if len(header) != len(expected):
                raise SchemaError(
                    f"{path}: header has {len(header)} columns, schema expects {len(expected)}"
                )
            bad = next(h for h, e in zip(header, expected) if h != e)
            raise SchemaError(f"{path}: unexpected column {bad!r}")
        rows, labels = [], []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(expected):
                raise SchemaError(f"{path}:{lineno}: expected {len(expected)} columns")
            try:
                rows.append([float(v) for v in record[:-1]])
            except ValueError as exc:
                col = next(i for i, v in enumerate(record[:-1]) if not _is_float(v))
                raise ParseError(f"{path}:{lineno}: column {col + 1}: {exc}") from exc
            try:
                labels.append(int(record[-1]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: label column: {exc}") from exc
    raw = np.asarray(rows, dtype=np.float64)
    if raw.size == 0:
        raise ParseError(f"{path}: no data rows")
    return Dataset(schema=fit_stats(schema, raw), raw=raw, labels=np.asarray(labels))


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def parse_profile_json(text: str, schema: ProfileSchema) -> np.ndarray:
    """Parse a flat {feature_name: value} object into a raw profile vector."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid profile JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("profile JSON must be an object keyed by feature name")
    return profile_from_mapping(data, schema)


def profile_from_mapping(data: dict, schema: ProfileSchema) -> np.ndarray:
    """Validate and order a name->value mapping against the schema."""
    unknown = set(data) - set(schema.names) - {"label"}
    if unknown:
        raise SchemaError(f"unknown feature {sorted(unknown)[0]!r}")
    missing = [n for n in schema.names if n not in data]
    if missing:
        raise SchemaError(f"missing feature {missing[0]!r}")
    values = np.empty(len(schema))
    for i, name in enumerate(schema.names):
        v = data[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"feature {name!r}: expected a number, got {v!r}")
        values[i] = float(v)
    return values


def profile_to_mapping(raw: np.ndarray, schema: ProfileSchema) -> dict:
    return {name: float(v) for name, v in zip(schema.names, raw)}


def save_schema(schema: ProfileSchema, path: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh)
    os.replace(tmp, path)


def load_schema(path: str) -> ProfileSchema:
    from .errors import FormatError

    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read schema file {path}: {exc}") from exc
    return ProfileSchema.from_json(data)
