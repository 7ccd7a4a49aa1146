"""The three counterfactual generators: RGD, CSGP, and CounteRGAN.

All engines search in normalized feature space, keep immutable coordinates
pinned to the input, and hand their candidate to `finalize`, which restores
immutable raw values exactly, snaps discrete features to their grids, and
scores the deliverable profile.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, SpecificationError, TrainingError
from .numerics import (
    AdamState,
    MlpParams,
    MlpSpec,
    Rand,
    adam_step,
    bce_loss,
    init_params,
    mlp_backward,
    mlp_forward,
    params_from_dict,
    params_to_dict,
)
from .predictors import (
    MODEL_FORMAT_VERSION,
    AutoencoderModel,
    ClassifierModel,
    PrototypeSet,
    predict,
    predict_with_gradient,
    prototype_for,
)
from .profiles import (
    Dataset,
    ProfileSchema,
    apply_discrete_rounding,
    apply_immutable_mask,
    clamp_bounds,
    denormalize,
    normalize,
)


@dataclass(frozen=True)
class RgdConfig:
    """Regularized gradient descent on the classifier score.

    l1_weight sits well below the classifier's typical mutable-coordinate
    prediction gradients; anything much larger pins the subgradient iteration
    at its start point for deeply rejected profiles.
    """

    target_prob: float = 0.95
    l1_weight: float = 0.01
    learning_rate: float = 0.05
    max_iters: int = 1000
    enforce_bounds: bool = False

    def __post_init__(self):
        if not 0 < self.target_prob < 1:
            raise SpecificationError("target_prob must lie in (0, 1)")
        if self.l1_weight < 0 or self.learning_rate <= 0:
            raise SpecificationError("l1_weight must be >= 0 and learning_rate positive")
        if self.max_iters < 1:
            raise SpecificationError("max_iters must be at least 1")


@dataclass(frozen=True)
class CsgpConfig:
    """Prototype-guided search: prediction loss plus sparsity, proximity,
    prototype and reconstruction penalties. The squared-L2 proximity term
    enters at full weight by default; that is what keeps these suggestions
    an order sparser than unconstrained gradient descent."""

    pred_weight: float = 1.0
    l1_weight: float = 0.1
    l2_weight: float = 1.0
    proto_weight: float = 0.5
    ae_weight: float = 0.5
    k: int = 5
    learning_rate: float = 0.01
    max_iters: int = 1000
    enforce_bounds: bool = True

    def __post_init__(self):
        weights = (self.pred_weight, self.l1_weight, self.l2_weight,
                   self.proto_weight, self.ae_weight)
        if any(w < 0 for w in weights):
            raise SpecificationError("loss weights must be non-negative")
        if self.k < 1 or self.max_iters < 1 or self.learning_rate <= 0:
            raise SpecificationError("k/max_iters must be >= 1 and learning_rate positive")


@dataclass(frozen=True)
class CounterganConfig:
    """Residual-generator GAN trained against the fixed classifier."""

    reg_weight: float = 1.0
    target_class: int = 1
    generator_spec: MlpSpec = MlpSpec((33, 64, 64, 33), ("relu", "relu", "linear"))
    discriminator_spec: MlpSpec = MlpSpec((33, 32, 16, 1), ("relu", "relu", "sigmoid"))
    learning_rate: float = 2e-4
    beta1: float = 0.5
    batch_size: int = 64
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.reg_weight < 0:
            raise SpecificationError("reg_weight must be non-negative")
        if self.steps < 1 or self.batch_size < 1:
            raise SpecificationError("steps and batch_size must be at least 1")


@dataclass
class GanModels:
    generator: MlpParams
    discriminator: MlpParams
    d_losses: list[float]
    g_losses: list[float]
    config: CounterganConfig
    schema: ProfileSchema
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.schema)
        if (self.generator.spec.input_width != width
                or self.generator.spec.output_width != width):
            raise SpecificationError("generator input and output width must equal feature count")


@dataclass
class CfResult:
    """One generated counterfactual with scores and bookkeeping."""

    method: str
    raw_cf: np.ndarray
    norm_cf: np.ndarray
    residual: np.ndarray
    score_before: float
    score_after: float
    iterations: int
    elapsed_ms: float
    objective_trace: list[float] | None = None
    pred_loss_trace: list[float] | None = None


@dataclass(frozen=True)
class DiffEntry:
    feature: str
    old: float
    delta: float
    new: float


@dataclass
class FeedbackDiff:
    entries: list[DiffEntry]
    score_before: float
    score_after: float


def finalize(
    raw_input: np.ndarray,
    candidate_norm: np.ndarray,
    schema: ProfileSchema,
    classifier: ClassifierModel,
    enforce_bounds: bool,
    *,
    method: str = "",
    iterations: int = 0,
    elapsed_ms: float = 0.0,
    objective_trace: list[float] | None = None,
    pred_loss_trace: list[float] | None = None,
) -> CfResult:
    """Turn a search iterate into a deliverable profile and score it.

    Pipeline: denormalize, restore immutable raw coordinates exactly, round
    discrete features, optionally clamp bounds, re-normalize, score. The
    reported score_after reflects the finalized (deliverable) profile.
    """
    raw_input = np.asarray(raw_input, dtype=np.float64)
    cand = np.asarray(candidate_norm, dtype=np.float64)
    if raw_input.shape != (len(schema),) or cand.shape != (len(schema),):
        raise SpecificationError("profile width does not match the schema")
    if not np.all(np.isfinite(cand)):
        raise NumericError("candidate contains non-finite values")

    raw_cf = denormalize(cand, schema)
    immutable = ~schema.mutable_mask
    raw_cf[immutable] = raw_input[immutable]
    raw_cf = apply_discrete_rounding(raw_cf, schema)
    if enforce_bounds:
        raw_cf = clamp_bounds(raw_cf, schema)
        raw_cf[immutable] = raw_input[immutable]
    norm_input = normalize(raw_input, schema)
    norm_cf = normalize(raw_cf, schema)
    return CfResult(
        method=method,
        raw_cf=raw_cf,
        norm_cf=norm_cf,
        residual=norm_cf - norm_input,
        score_before=predict(classifier, norm_input),
        score_after=predict(classifier, norm_cf),
        iterations=iterations,
        elapsed_ms=elapsed_ms,
        objective_trace=objective_trace,
        pred_loss_trace=pred_loss_trace,
    )


def _resolve_raw_input(x_norm: np.ndarray, schema: ProfileSchema, raw_input) -> np.ndarray:
    if raw_input is not None:
        return np.asarray(raw_input, dtype=np.float64)
    return denormalize(x_norm, schema)


def rgd_generate(
    classifier: ClassifierModel,
    x: np.ndarray,
    schema: ProfileSchema,
    config: RgdConfig = RgdConfig(),
    raw_input: np.ndarray | None = None,
) -> CfResult:
    """Gradient descent on (score - target)^2 with an L1 pull toward the input.

    Plain subgradient steps (the L1 subgradient is 0 at exact zeros); after
    every step immutable coordinates are reset to the input. Runs the fixed
    iteration budget unless the score reaches the target early.
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    raw_in = _resolve_raw_input(x, schema, raw_input)
    mutable = schema.mutable_mask

    cur = x.copy()
    pred, grad_pred = predict_with_gradient(classifier, cur)
    pred_trace = [(pred - config.target_prob) ** 2]
    obj_trace = [pred_trace[0]]
    iterations = 0

    while iterations < config.max_iters and pred < config.target_prob:
        iterations += 1
        grad = 2.0 * (pred - config.target_prob) * grad_pred
        grad += config.l1_weight * np.sign(cur - x)
        grad[~mutable] = 0.0
        cur = cur - config.learning_rate * grad
        cur[~mutable] = x[~mutable]
        if not np.all(np.isfinite(cur)):
            raise NumericError(f"rgd produced a non-finite iterate at iteration {iterations}")
        pred, grad_pred = predict_with_gradient(classifier, cur)
        pred_loss = (pred - config.target_prob) ** 2
        pred_trace.append(pred_loss)
        obj_trace.append(pred_loss + config.l1_weight * float(np.abs(cur - x).sum()))

    elapsed = (time.perf_counter() - t0) * 1e3
    return finalize(
        raw_in, cur, schema, classifier, config.enforce_bounds,
        method="rgd", iterations=iterations, elapsed_ms=elapsed,
        objective_trace=obj_trace, pred_loss_trace=pred_trace,
    )


def csgp_generate(
    classifier: ClassifierModel,
    ae: AutoencoderModel,
    prototypes: PrototypeSet,
    x: np.ndarray,
    schema: ProfileSchema,
    config: CsgpConfig = CsgpConfig(),
    raw_input: np.ndarray | None = None,
    target_class: int = 1,
) -> CfResult:
    """Prototype-guided descent over a delta restricted to mutable features."""
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    raw_in = _resolve_raw_input(x, schema, raw_input)
    mutable = schema.mutable_mask

    use_proto = config.proto_weight > 0
    use_ae = config.ae_weight > 0
    proto = prototype_for(prototypes, ae, x, target_class) if use_proto else None

    delta = np.zeros_like(x)
    for it in range(config.max_iters):
        xc = x + delta
        pred, grad_pred = predict_with_gradient(classifier, xc)
        grad = config.pred_weight * 2.0 * (pred - 1.0) * grad_pred
        if config.l1_weight:
            grad += config.l1_weight * np.sign(delta)
        if config.l2_weight:
            grad += 2.0 * config.l2_weight * delta
        if use_proto or use_ae:
            latent, enc_cache = mlp_forward(ae.encoder, xc[None, :])
            latent_grad = np.zeros_like(latent)
            if use_proto:
                latent_grad += 2.0 * config.proto_weight * (latent - proto)
            if use_ae:
                recon, dec_cache = mlp_forward(ae.decoder, latent)
                r = recon - xc[None, :]
                _, d_latent = mlp_backward(ae.decoder, dec_cache, 2.0 * config.ae_weight * r)
                latent_grad += d_latent
                grad -= 2.0 * config.ae_weight * r[0]
            _, d_input = mlp_backward(ae.encoder, enc_cache, latent_grad)
            grad += d_input[0]
        grad[~mutable] = 0.0
        delta = delta - config.learning_rate * grad
        delta[~mutable] = 0.0
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"csgp produced a non-finite iterate at iteration {it + 1}")

    elapsed = (time.perf_counter() - t0) * 1e3
    return finalize(
        raw_in, x + delta, schema, classifier, config.enforce_bounds,
        method="csgp", iterations=config.max_iters, elapsed_ms=elapsed,
    )


def countergan_train(
    classifier: ClassifierModel,
    train: Dataset,
    schema: ProfileSchema,
    config: CounterganConfig = CounterganConfig(),
    rng: Rand | None = None,
) -> GanModels:
    """Adversarial training of a residual generator against the fixed classifier.

    Each step draws one minibatch, updates the discriminator on real rows
    versus constrained counterfactuals, then updates the generator with the
    non-saturating surrogate plus the proximity regularizer. Immutable
    residual coordinates are zeroed before anything downstream sees them, so
    the discriminator and classifier only ever judge constrained outputs.
    """
    if len(train) == 0:
        raise SpecificationError("training dataset is empty")
    width = len(schema)
    gen_spec = config.generator_spec
    if gen_spec.input_width != width or gen_spec.output_width != width:
        raise SpecificationError("generator spec width must equal the feature count")
    if config.discriminator_spec.input_width != width:
        raise SpecificationError("discriminator spec width must equal the feature count")
    if rng is None:
        rng = Rand(config.seed)

    generator = init_params(gen_spec, rng)
    discriminator = init_params(config.discriminator_spec, rng)
    g_state = AdamState.for_params(generator, learning_rate=config.learning_rate, beta1=config.beta1)
    d_state = AdamState.for_params(discriminator, learning_rate=config.learning_rate, beta1=config.beta1)

    X = train.X
    n = len(train)
    mask = schema.mutable_mask.astype(np.float64)
    batch = config.batch_size
    ones = np.ones((batch, 1))
    zeros = np.zeros((batch, 1))
    d_losses: list[float] = []
    g_losses: list[float] = []

    for step in range(config.steps):
        idx = rng.integers(0, n, size=batch)
        x = X[idx]

        # Discriminator update: generator frozen.
        residual, _ = mlp_forward(generator, x)
        fake = x + residual * mask
        d_real, real_cache = mlp_forward(discriminator, x)
        d_fake, fake_cache = mlp_forward(discriminator, fake)
        loss_real, grad_real = bce_loss(d_real, ones)
        loss_fake, grad_fake = bce_loss(d_fake, zeros)
        grads_real, _ = mlp_backward(discriminator, real_cache, grad_real)
        grads_fake, _ = mlp_backward(discriminator, fake_cache, grad_fake)
        for i in range(len(grads_real.weights)):
            grads_real.weights[i] += grads_fake.weights[i]
            grads_real.biases[i] += grads_fake.biases[i]
        adam_step(discriminator, grads_real, d_state)
        d_loss = loss_real + loss_fake

        # Generator update: non-saturating surrogate through D and the classifier.
        residual, gen_cache = mlp_forward(generator, x)
        fake = x + residual * mask
        d_fake, fake_cache = mlp_forward(discriminator, fake)
        c_fake, clf_cache = mlp_forward(classifier.params, fake)
        loss_d_term, grad_d = bce_loss(d_fake, ones)
        loss_c_term, grad_c = bce_loss(c_fake, ones)
        _, d_input_grad = mlp_backward(discriminator, fake_cache, grad_d)
        _, c_input_grad = mlp_backward(classifier.params, clf_cache, grad_c)
        reg_loss = config.reg_weight * float(np.sum(residual * residual)) / batch
        residual_grad = (d_input_grad + c_input_grad) * mask
        residual_grad += 2.0 * config.reg_weight * residual / batch
        gen_grads, _ = mlp_backward(generator, gen_cache, residual_grad)
        adam_step(generator, gen_grads, g_state)
        g_loss = loss_d_term + loss_c_term + reg_loss

        if not (math.isfinite(d_loss) and math.isfinite(g_loss)):
            raise TrainingError(f"gan training diverged at step {step}")
        d_losses.append(d_loss)
        g_losses.append(g_loss)

    gan = GanModels(
        generator=generator,
        discriminator=discriminator,
        d_losses=d_losses,
        g_losses=g_losses,
        config=config,
        schema=schema,
    )
    gan.metadata = {
        "role": "gan",
        "seed": config.seed,
        "steps": config.steps,
        "reg_weight": config.reg_weight,
        "final_d_loss": d_losses[-1],
        "final_g_loss": g_losses[-1],
    }
    return gan


def countergan_generate(
    gan: GanModels,
    classifier: ClassifierModel,
    x: np.ndarray,
    schema: ProfileSchema,
    raw_input: np.ndarray | None = None,
    enforce_bounds: bool = True,
) -> CfResult:
    """One residual-generator forward pass; no iterative search."""
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(schema),):
        raise SpecificationError("profile width does not match the schema")
    raw_in = _resolve_raw_input(x, schema, raw_input)
    residual, _ = mlp_forward(gan.generator, x[None, :])
    candidate = x + apply_immutable_mask(residual[0], schema)
    result = finalize(
        raw_in, candidate, schema, classifier, enforce_bounds,
        method="countergan", iterations=1,
    )
    result.elapsed_ms = (time.perf_counter() - t0) * 1e3
    return result


def countergan_residuals(gan: GanModels, X: np.ndarray) -> np.ndarray:
    """Raw (unmasked) generator residuals for a batch of normalized rows."""
    residual, _ = mlp_forward(gan.generator, np.atleast_2d(X))
    return residual


def countergan_generate_batch(
    gan: GanModels,
    classifier: ClassifierModel,
    X: np.ndarray,
    schema: ProfileSchema,
    raw_inputs: np.ndarray,
    enforce_bounds: bool = True,
) -> np.ndarray:
    """Vectorized batch pass used for batch-latency measurement.

    Returns the finalized raw counterfactual matrix; per-row scoring happens
    inside so the timed work matches the sequential path end to end.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    raw_inputs = np.atleast_2d(np.asarray(raw_inputs, dtype=np.float64))
    residual, _ = mlp_forward(gan.generator, X)
    masked = residual * schema.mutable_mask.astype(np.float64)
    raw_cf = denormalize(X + masked, schema)
    immutable = ~schema.mutable_mask
    raw_cf[:, immutable] = raw_inputs[:, immutable]
    raw_cf = apply_discrete_rounding(raw_cf, schema)
    if enforce_bounds:
        raw_cf = clamp_bounds(raw_cf, schema)
        raw_cf[:, immutable] = raw_inputs[:, immutable]
    predict(classifier, normalize(raw_cf, schema))
    return raw_cf


def make_diff(raw_input: np.ndarray, result: CfResult, schema: ProfileSchema) -> FeedbackDiff:
    """Per-feature changes between the input and the finalized counterfactual."""
    raw_input = np.asarray(raw_input, dtype=np.float64)
    entries: list[DiffEntry] = []
    for i, f in enumerate(schema.features):
        old = float(raw_input[i])
        new = float(result.raw_cf[i])
        if new == old:
            continue
        delta = new - old
        if old + delta != new:
            # pick the representable delta whose application is exact
            for cand in (np.nextafter(delta, math.inf), np.nextafter(delta, -math.inf)):
                if old + cand == new:
                    delta = float(cand)
                    break
        entries.append(DiffEntry(feature=f.name, old=old, delta=delta, new=new))
    return FeedbackDiff(
        entries=entries,
        score_before=result.score_before,
        score_after=result.score_after,
    )


GAN_FORMAT_VERSION = MODEL_FORMAT_VERSION


def save_gan(gan: GanModels, path: str) -> None:
    payload = {
        "version": GAN_FORMAT_VERSION,
        "role": "gan",
        "schema_hash": gan.schema.digest(),
        "schema": gan.schema.to_json(),
        "generator": {"role": "generator", **params_to_dict(gan.generator)},
        "discriminator": {"role": "discriminator", **params_to_dict(gan.discriminator)},
        "config": {
            "reg_weight": gan.config.reg_weight,
            "target_class": gan.config.target_class,
            "learning_rate": gan.config.learning_rate,
            "beta1": gan.config.beta1,
            "batch_size": gan.config.batch_size,
            "steps": gan.config.steps,
            "seed": gan.config.seed,
        },
        "d_losses": gan.d_losses,
        "g_losses": gan.g_losses,
        "metadata": gan.metadata,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_gan(path: str) -> GanModels:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read gan file {path}: {exc}") from exc
    if data.get("version") != GAN_FORMAT_VERSION:
        raise FormatError(f"unsupported value in field 'version': {data.get('version')!r}")
    if data.get("role") != "gan":
        raise FormatError(f"unsupported value in field 'role': {data.get('role')!r}")
    schema = ProfileSchema.from_json(data.get("schema", {}))
    if data.get("schema_hash") != schema.digest():
        raise FormatError("field 'schema_hash' does not match the embedded schema")
    try:
        generator = params_from_dict(data["generator"])
        discriminator = params_from_dict(data["discriminator"])
        cfg = data["config"]
        config = CounterganConfig(
            reg_weight=float(cfg["reg_weight"]),
            target_class=int(cfg["target_class"]),
            generator_spec=generator.spec,
            discriminator_spec=discriminator.spec,
            learning_rate=float(cfg["learning_rate"]),
            beta1=float(cfg["beta1"]),
            batch_size=int(cfg["batch_size"]),
            steps=int(cfg["steps"]),
            seed=int(cfg["seed"]),
        )
        return GanModels(
            generator=generator,
            discriminator=discriminator,
            d_losses=[float(v) for v in data.get("d_losses", [])],
            g_losses=[float(v) for v in data.get("g_losses", [])],
            config=config,
            schema=schema,
            metadata=data.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed gan record: {exc}") from exc


def export_gan_traces(gan: GanModels, path: str) -> None:
    """Loss traces as CSV: step, d_loss, g_loss."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("step,d_loss,g_loss\n")
        for i, (d, g) in enumerate(zip(gan.d_losses, gan.g_losses)):
            fh.write(f"{i},{d!r},{g!r}\n")
    os.replace(tmp, path)
