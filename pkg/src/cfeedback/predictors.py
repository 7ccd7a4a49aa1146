"""Target classifier, denoising autoencoder, and class prototypes.

The classifier is the fixed model whose decision counterfactuals must flip;
the autoencoder supplies the realism signal (reconstruction error) and the
latent space in which prototypes live.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, SpecificationError, TrainingError
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
    mse_loss,
    params_from_dict,
    params_to_dict,
)
from .profiles import Dataset, ProfileSchema

MODEL_FORMAT_VERSION = 1

DECISION_THRESHOLD = 0.5

CLASSIFIER_SPEC = MlpSpec((33, 32, 16, 1), ("relu", "relu", "sigmoid"))
ENCODER_SPEC = MlpSpec((33, 16, 8), ("relu", "linear"))
DECODER_SPEC = MlpSpec((8, 16, 33), ("relu", "linear"))

DEFAULT_AE_NOISE_STD = 0.1
DEFAULT_PROTOTYPE_K = 5

# Training targets are softened to 0.05/0.95 and inputs jittered with a small
# Gaussian during training. Hard 0/1 targets on memorizable synthetic data
# drive this net to fully saturated outputs with dead input gradients, which
# would break every gradient-based counterfactual search downstream.
LABEL_SMOOTHING = 0.05
INPUT_JITTER_STD = 0.35


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 7

    def __post_init__(self):
        if min(self.epochs, self.batch_size) <= 0 or self.learning_rate <= 0:
            raise SpecificationError("epochs, batch_size and learning_rate must be positive")


@dataclass
class ClassifierModel:
    params: MlpParams
    schema: ProfileSchema
    metadata: dict = field(default_factory=dict)


@dataclass
class AutoencoderModel:
    encoder: MlpParams
    decoder: MlpParams
    schema: ProfileSchema
    noise_std: float = DEFAULT_AE_NOISE_STD
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decoder.spec.output_width != self.encoder.spec.input_width:
            raise SpecificationError("decoder output width must equal encoder input width")
        if self.encoder.spec.output_width >= self.encoder.spec.input_width:
            raise SpecificationError("latent width must be smaller than the input width")


@dataclass
class PrototypeSet:
    """Latent encodings of the training rows, grouped by class."""

    encodings: dict[int, np.ndarray]
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise SpecificationError("k must be at least 1")


def _iterate_minibatches(n: int, batch_size: int, epochs: int, rng: Rand):
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def train_classifier(
    train: Dataset,
    test: Dataset,
    config: TrainConfig = TrainConfig(),
    rng: Rand | None = None,
) -> tuple[ClassifierModel, dict]:
    """Fit the approval classifier with binary cross-entropy.

    Returns the model plus a report with train/test accuracy at the 0.5
    decision threshold.
    """
    if train.schema is not test.schema and train.schema.digest() != test.schema.digest():
        raise SpecificationError("train and test datasets must share a schema")
    if rng is None:
        rng = Rand(config.seed)
    spec = MlpSpec(
        (len(train.schema),) + CLASSIFIER_SPEC.layer_sizes[1:], CLASSIFIER_SPEC.activations
    )
    params = init_params(spec, rng)
    state = AdamState.for_params(params, learning_rate=config.learning_rate)
    X = train.X
    y = train.labels.astype(np.float64)[:, None] * (1 - 2 * LABEL_SMOOTHING) + LABEL_SMOOTHING
    for batch_idx in _iterate_minibatches(len(train), config.batch_size, config.epochs, rng):
        batch = X[batch_idx] + rng.normal(size=(len(batch_idx), X.shape[1])) * INPUT_JITTER_STD
        out, cache = mlp_forward(params, batch)
        loss, grad = bce_loss(out, y[batch_idx])
        if not np.isfinite(loss):
            raise TrainingError(f"classifier loss diverged (loss={loss})")
        param_grads, _ = mlp_backward(params, cache, grad)
        adam_step(params, param_grads, state)

    model = ClassifierModel(params=params, schema=train.schema)
    report = {
        "train_accuracy": accuracy(model, train),
        "test_accuracy": accuracy(model, test),
        "seed": config.seed,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
    }
    model.metadata = {"role": "classifier", **report}
    return model, report


def predict(model: ClassifierModel, x: np.ndarray):
    """Approval probability for one normalized profile or a batch of them."""
    out, _ = mlp_forward(model.params, x)
    if np.ndim(x) == 1:
        return float(out[0])
    return out[:, 0]


def accuracy(model: ClassifierModel, dataset: Dataset, threshold: float = DECISION_THRESHOLD) -> float:
    preds = predict(model, dataset.X) >= threshold
    return float((preds == dataset.labels.astype(bool)).mean())


def predict_input_gradient(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """Gradient of the approval probability with respect to the input."""
    single = np.ndim(x) == 1
    out, cache = mlp_forward(model.params, x if not single else np.asarray(x)[None, :])
    _, input_grad = mlp_backward(model.params, cache, np.ones_like(out))
    return input_grad[0] if single else input_grad


def predict_with_gradient(model: ClassifierModel, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Score and input gradient for one profile, sharing a single forward pass."""
    out, cache = mlp_forward(model.params, np.asarray(x)[None, :])
    _, input_grad = mlp_backward(model.params, cache, np.ones_like(out))
    return float(out[0, 0]), input_grad[0]


def train_autoencoder(
    train: Dataset,
    noise_std: float = DEFAULT_AE_NOISE_STD,
    config: TrainConfig = TrainConfig(),
    rng: Rand | None = None,
) -> AutoencoderModel:
    """Denoising autoencoder: reconstruct clean rows from noise-corrupted ones."""
    if noise_std <= 0:
        raise SpecificationError("noise_std must be positive")
    if rng is None:
        rng = Rand(config.seed)
    width = len(train.schema)
    enc_spec = MlpSpec((width,) + ENCODER_SPEC.layer_sizes[1:], ENCODER_SPEC.activations)
    dec_spec = MlpSpec(DECODER_SPEC.layer_sizes[:-1] + (width,), DECODER_SPEC.activations)
    encoder = init_params(enc_spec, rng)
    decoder = init_params(dec_spec, rng)
    enc_state = AdamState.for_params(encoder, learning_rate=config.learning_rate)
    dec_state = AdamState.for_params(decoder, learning_rate=config.learning_rate)

    X = train.X
    for batch_idx in _iterate_minibatches(len(train), config.batch_size, config.epochs, rng):
        clean = X[batch_idx]
        noisy = clean + rng.normal(size=clean.shape) * noise_std
        latent, enc_cache = mlp_forward(encoder, noisy)
        recon, dec_cache = mlp_forward(decoder, latent)
        loss, grad = mse_loss(recon, clean)
        if not np.isfinite(loss):
            raise TrainingError(f"autoencoder loss diverged (loss={loss})")
        dec_grads, latent_grad = mlp_backward(decoder, dec_cache, grad)
        enc_grads, _ = mlp_backward(encoder, enc_cache, latent_grad)
        adam_step(decoder, dec_grads, dec_state)
        adam_step(encoder, enc_grads, enc_state)

    ae = AutoencoderModel(encoder=encoder, decoder=decoder, schema=train.schema, noise_std=noise_std)
    ae.metadata = {
        "role": "autoencoder",
        "seed": config.seed,
        "epochs": config.epochs,
        "noise_std": noise_std,
    }
    return ae


def encode(ae: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    out, _ = mlp_forward(ae.encoder, x)
    return out[0] if np.ndim(x) == 1 else out


def reconstruct(ae: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    latent, _ = mlp_forward(ae.encoder, x)
    recon, _ = mlp_forward(ae.decoder, latent)
    return recon[0] if np.ndim(x) == 1 else recon


def reconstruction_error(ae: AutoencoderModel, x: np.ndarray) -> float:
    """Squared Euclidean distance between a profile and its reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise SpecificationError("reconstruction_error expects a single profile vector")
    diff = reconstruct(ae, x) - x
    return float(diff @ diff)


def compute_prototypes(
    ae: AutoencoderModel, dataset: Dataset, target_class: int, k: int = DEFAULT_PROTOTYPE_K
) -> PrototypeSet:
    """Encode the rows of the requested class for later nearest-latent lookups."""
    if k < 1:
        raise SpecificationError("k must be at least 1")
    mask = dataset.labels == target_class
    if not mask.any():
        raise SpecificationError(f"dataset has no rows of class {target_class}")
    return PrototypeSet(encodings={int(target_class): encode(ae, dataset.X[mask])}, k=k)


def prototype_for(
    protos: PrototypeSet, ae: AutoencoderModel, x: np.ndarray, target_class: int
) -> np.ndarray:
    """Mean of the k class encodings nearest to encode(x); k is capped at the class size."""
    if target_class not in protos.encodings:
        raise SpecificationError(f"no prototypes available for class {target_class}")
    bank = protos.encodings[target_class]
    z = encode(ae, np.asarray(x, dtype=np.float64))
    dists = np.sum((bank - z) ** 2, axis=1)
    k = min(protos.k, bank.shape[0])
    nearest = np.argsort(dists, kind="stable")[:k]
    return bank[nearest].mean(axis=0)


def _model_envelope(role: str, schema: ProfileSchema, metadata: dict) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "role": role,
        "schema_hash": schema.digest(),
        "schema": schema.to_json(),
        "metadata": metadata,
    }


def save_model(model, path: str) -> None:
    """Write a classifier or autoencoder as versioned JSON (atomic replace)."""
    if isinstance(model, ClassifierModel):
        payload = _model_envelope("classifier", model.schema, model.metadata)
        payload["params"] = params_to_dict(model.params)
    elif isinstance(model, AutoencoderModel):
        payload = _model_envelope("autoencoder", model.schema, model.metadata)
        payload["encoder"] = params_to_dict(model.encoder)
        payload["decoder"] = params_to_dict(model.decoder)
        payload["noise_std"] = model.noise_std
    else:
        raise SpecificationError(f"cannot serialize {type(model).__name__}")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_model(path: str):
    """Load a model file written by save_model; fails closed on any corruption."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError("model file is not an object")
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported value in field 'version': {data.get('version')!r}")
    role = data.get("role")
    schema = ProfileSchema.from_json(data.get("schema", {}))
    if data.get("schema_hash") != schema.digest():
        raise FormatError("field 'schema_hash' does not match the embedded schema")
    metadata = data.get("metadata", {})
    if role == "classifier":
        return ClassifierModel(
            params=params_from_dict(data.get("params", {})), schema=schema, metadata=metadata
        )
    if role == "autoencoder":
        return AutoencoderModel(
            encoder=params_from_dict(data.get("encoder", {})),
            decoder=params_from_dict(data.get("decoder", {})),
            schema=schema,
            noise_std=float(data.get("noise_std", DEFAULT_AE_NOISE_STD)),
            metadata=metadata,
        )
    raise FormatError(f"unsupported value in field 'role': {role!r}")


def save_prototypes(protos: PrototypeSet, path: str) -> None:
    payload = {
        "version": MODEL_FORMAT_VERSION,
        "role": "prototypes",
        "k": protos.k,
        "encodings": {str(c): enc.tolist() for c, enc in protos.encodings.items()},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_prototypes(path: str) -> PrototypeSet:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read prototype file {path}: {exc}") from exc
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported value in field 'version': {data.get('version')!r}")
    if data.get("role") != "prototypes":
        raise FormatError(f"unsupported value in field 'role': {data.get('role')!r}")
    try:
        encodings = {
            int(c): np.asarray(enc, dtype=np.float64) for c, enc in data["encodings"].items()
        }
        return PrototypeSet(encodings=encodings, k=int(data["k"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed prototype record: {exc}") from exc
