"""Minimal dense-network core: seeded RNG, MLP forward/backward, Adam, losses.

Everything here is plain numpy over explicitly passed state. All stochastic
operations consume a `Rand`; there is no hidden global randomness.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, SpecificationError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")

PARAMS_FORMAT_VERSION = 1


class Rand:
    """Deterministic random source.

    Wraps numpy's PCG64 bit generator, which produces identical streams for
    identical seeds on every platform. All randomness in the package flows
    through instances of this class.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise SpecificationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc=loc, scale=scale, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low=low, high=high, size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers drawn uniformly from [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def fork(self) -> "Rand":
        """Child generator with a seed drawn from this stream."""
        return Rand(int(self._gen.integers(0, 2**63)))


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a dense network: widths plus one activation per layer."""

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2:
            raise SpecificationError("layer_sizes needs at least an input and an output width")
        if any(s <= 0 for s in sizes):
            raise SpecificationError(f"layer sizes must be positive, got {sizes}")
        if len(acts) != len(sizes) - 1:
            raise SpecificationError(
                f"expected {len(sizes) - 1} activations for {len(sizes)} layer sizes, got {len(acts)}"
            )
        for a in acts:
            if a not in ACTIVATIONS:
                raise SpecificationError(f"unknown activation {a!r}; choose from {ACTIVATIONS}")

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass
class MlpParams:
    """Per-layer weight matrices (out x in) and bias vectors (out,)."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def check_shapes(self) -> None:
        expect = list(zip(self.spec.layer_sizes[1:], self.spec.layer_sizes[:-1]))
        got_w = [w.shape for w in self.weights]
        if got_w != expect:
            raise SpecificationError(f"weight shapes {got_w} do not match spec {expect}")
        got_b = [b.shape for b in self.biases]
        if got_b != [(o,) for o, _ in expect]:
            raise SpecificationError(f"bias shapes {got_b} do not match spec")

    def copy(self) -> "MlpParams":
        return MlpParams(
            spec=self.spec,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            spec=self.spec,
            weights=[np.zeros_like(w) for w in self.weights],
            biases=[np.zeros_like(b) for b in self.biases],
        )


@dataclass
class ForwardCache:
    """Intermediate activations from one forward pass, consumed by backward."""

    params: MlpParams
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators shaped like the parameters they track."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        if learning_rate <= 0 or epsilon <= 0:
            raise SpecificationError("learning_rate and epsilon must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise SpecificationError("beta1 and beta2 must lie in [0, 1)")
        z = params.zeros_like()
        z2 = params.zeros_like()
        return cls(
            m_weights=z.weights, m_biases=z.biases,
            v_weights=z2.weights, v_biases=z2.biases,
            step=0, learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon,
        )


def init_params(spec: MlpSpec, rng: Rand) -> MlpParams:
    """He-style init for relu layers, Xavier-style (fan-in) otherwise; zero biases."""
    weights, biases = [], []
    for i in range(spec.n_layers):
        fan_in = spec.layer_sizes[i]
        fan_out = spec.layer_sizes[i + 1]
        if spec.activations[i] == "relu":
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(1.0 / fan_in)
        weights.append(rng.normal(size=(fan_out, fan_in)) * std)
        biases.append(np.zeros(fan_out))
    return MlpParams(spec=spec, weights=weights, biases=biases)


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # numerically stable split by sign
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise SpecificationError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d activation / d pre-activation, using whichever of z/a is cheapest."""
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    if name == "linear":
        return np.ones_like(z)
    raise SpecificationError(f"unknown activation {name!r}")


def mlp_forward(params: MlpParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass over a batch (n x d_in). Returns output and a backward cache."""
    x = np.asarray(batch, dtype=np.float64)
    squeeze = False
    if x.ndim == 1:
        x = x[None, :]
        squeeze = True
    if x.ndim != 2 or x.shape[1] != params.spec.input_width:
        raise SpecificationError(
            f"batch width {x.shape[-1] if x.ndim else '?'} does not match input width "
            f"{params.spec.input_width}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in forward input")

    pre, post = [], []
    a = x
    for w, b, act in zip(params.weights, params.biases, params.spec.activations):
        z = a @ w.T + b
        a = _apply_activation(act, z)
        pre.append(z)
        post.append(a)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite values in forward output")
    out = post[-1][0] if squeeze else post[-1]
    return out, ForwardCache(params=params, inputs=x, pre=pre, post=post)


def mlp_backward(
    params: MlpParams, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Backpropagate an output gradient; returns (parameter grads, input grad)."""
    if cache.params is not params:
        raise SpecificationError("cache was produced by a different parameter set")
    if len(cache.pre) != params.spec.n_layers:
        raise SpecificationError("cache depth does not match the network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.post[-1].shape:
        raise SpecificationError(
            f"output_grad shape {g.shape} does not match forward output {cache.post[-1].shape}"
        )

    grads = params.zeros_like()
    d_a = g
    for layer in range(params.spec.n_layers - 1, -1, -1):
        act = params.spec.activations[layer]
        d_z = d_a * _activation_grad(act, cache.pre[layer], cache.post[layer])
        a_prev = cache.inputs if layer == 0 else cache.post[layer - 1]
        grads.weights[layer] = d_z.T @ a_prev
        grads.biases[layer] = d_z.sum(axis=0)
        d_a = d_z @ params.weights[layer]
    return grads, d_a


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update, applied to `params` in place."""
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradients passed to adam_step")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr, eps = state.learning_rate, state.epsilon
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for i in range(len(params.weights)):
        for p, g, m, v in (
            (params.weights[i], grads.weights[i], state.m_weights[i], state.v_weights[i]),
            (params.biases[i], grads.biases[i], state.m_biases[i], state.v_biases[i]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    return params, state


_PROB_CLAMP = 1e-7


def bce_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the predictions."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise SpecificationError(f"pred shape {p.shape} != target shape {t.shape}")
    pc = np.clip(p, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    n = pc.size
    loss = float(-np.sum(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)) / n)
    grad = (pc - t) / (pc * (1.0 - pc)) / n
    return loss, grad


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient w.r.t. the predictions."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise SpecificationError(f"pred shape {p.shape} != target shape {t.shape}")
    diff = p - t
    n = p.size
    loss = float(np.sum(diff * diff) / n)
    grad = 2.0 * diff / n
    return loss, grad


def params_to_dict(params: MlpParams) -> dict:
    """Versioned JSON-ready form: spec, row-major weights, biases."""
    return {
        "version": PARAMS_FORMAT_VERSION,
        "spec": {
            "layer_sizes": list(params.spec.layer_sizes),
            "activations": list(params.spec.activations),
        },
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(data: dict) -> MlpParams:
    if not isinstance(data, dict):
        raise FormatError("parameter record is not an object")
    version = data.get("version")
    if version != PARAMS_FORMAT_VERSION:
        raise FormatError(f"unsupported value in field 'version': {version!r}")
    try:
        spec = MlpSpec(
            layer_sizes=tuple(data["spec"]["layer_sizes"]),
            activations=tuple(data["spec"]["activations"]),
        )
        weights = [np.asarray(w, dtype=np.float64) for w in data["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed parameter record: {exc}") from exc
    params = MlpParams(spec=spec, weights=weights, biases=biases)
    params.check_shapes()
    return params


def save_params(params: MlpParams, path: str) -> None:
    payload = json.dumps(params_to_dict(params))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_params(path: str) -> MlpParams:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read parameter file {path}: {exc}") from exc
    return params_from_dict(data)
