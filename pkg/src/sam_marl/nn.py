"""Minimal dense-network substrate.

Plain-numpy MLPs with tanh hidden layers and identity/sigmoid outputs,
exact reverse-mode gradients, and a bias-corrected Adam update. Parameters
and gradients are plain values (lists of float64 arrays), safe to copy and
pass between threads; every operation here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericsError

HIDDEN_ACTIVATIONS = ("tanh",)
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


@dataclass
class MlpParams:
    """Weights of a fully-connected net.

    weights[l] has shape (layer_sizes[l+1], layer_sizes[l]), biases[l]
    shape (layer_sizes[l+1],). Hidden layers use tanh; the output layer
    uses `output_activation`.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unsupported output activation {self.output_activation!r}")
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigError(f"layer_sizes must be >= 2 positive entries, got {sizes}")
        self.layer_sizes = sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigError("weights/biases count does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ConfigError(
                    f"layer {l}: weight shape {w.shape} / bias shape {b.shape} "
                    f"inconsistent with layer_sizes {sizes}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpParams":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class GradientSet:
    """Per-parameter gradients, shape-matching an MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "GradientSet":
        return GradientSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class AdamState:
    """Adam first/second moments plus hyperparameters for one network."""

    first_moment: GradientSet
    second_moment: GradientSet
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def zeros_like_grads(params: MlpParams) -> GradientSet:
    return GradientSet(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def init_mlp(
    layer_sizes,
    rng: np.random.Generator,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
) -> MlpParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    sizes = tuple(int(s) for s in layer_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(sizes, weights, biases, hidden_activation, output_activation)


def init_adam(params: MlpParams, learning_rate: float = 1e-4) -> AdamState:
    return AdamState(
        first_moment=zeros_like_grads(params),
        second_moment=zeros_like_grads(params),
        learning_rate=learning_rate,
    )


def _sigmoid(z):
    # numerically stable in both tails
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply_output(z, kind):
    return _sigmoid(z) if kind == "sigmoid" else z


def _forward_trace(params: MlpParams, x: np.ndarray):
    """Returns (activations list incl. input, output). x is (n, in_dim)."""
    acts = [x]
    h = x
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = _apply_output(z, params.output_activation) if l == last else np.tanh(z)
        acts.append(h)
    return acts


def _as_batch(v: np.ndarray, dim: int, what: str):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ConfigError(f"{what} has shape {np.shape(v)}, expected (..., {dim})")
    return arr


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass. Accepts a vector (in_dim,) or a batch (n, in_dim)."""
    single = np.ndim(x) == 1
    xb = _as_batch(x, params.in_dim, "input")
    out = _forward_trace(params, xb)[-1]
    return out[0] if single else out


def backward(params: MlpParams, x, upstream) -> GradientSet:
    """Exact reverse-mode gradients of sum(output * upstream) w.r.t. all
    weights and biases. Batched inputs sum gradients over the batch."""
    grads, _ = backward_io(params, x, upstream)
    return grads


def backward_io(params: MlpParams, x, upstream):
    """Like backward, but also returns the gradient w.r.t. the input
    (same shape as x). Needed where a gradient must flow through one
    network into another's input, e.g. critic-to-action."""
    single = np.ndim(x) == 1
    xb = _as_batch(x, params.in_dim, "input")
    ub = _as_batch(upstream, params.out_dim, "upstream gradient")
    if ub.shape[0] != xb.shape[0]:
        raise ConfigError(f"batch mismatch: input {xb.shape[0]} vs upstream {ub.shape[0]}")

    acts = _forward_trace(params, xb)
    out = acts[-1]
    if params.output_activation == "sigmoid":
        delta = ub * out * (1.0 - out)
    else:
        delta = ub

    gw = [None] * params.n_layers
    gb = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        dprev = delta @ params.weights[l]
        if l > 0:
            dprev = dprev * (1.0 - acts[l] ** 2)  # tanh'
        delta = dprev
    grads = GradientSet(gw, gb)
    return grads, (delta[0] if single else delta)


def grad_norm(grads: GradientSet) -> float:
    """Global L2 norm over all tensors jointly."""
    total = 0.0
    for g in grads.weights:
        total += float(np.sum(g * g))
    for g in grads.biases:
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def param_axpy(params: MlpParams, direction: GradientSet, scale: float) -> MlpParams:
    """params + scale * direction, elementwise."""
    _check_shapes(params, direction)
    out = params.copy()
    for w, d in zip(out.weights, direction.weights):
        w += scale * d
    for b, d in zip(out.biases, direction.biases):
        b += scale * d
    return out


def _check_shapes(params: MlpParams, grads: GradientSet):
    if len(grads.weights) != params.n_layers or len(grads.biases) != params.n_layers:
        raise ConfigError("gradient layer count does not match params")
    for l in range(params.n_layers):
        if grads.weights[l].shape != params.weights[l].shape:
            raise ConfigError(f"layer {l}: weight gradient shape mismatch")
        if grads.biases[l].shape != params.biases[l].shape:
            raise ConfigError(f"layer {l}: bias gradient shape mismatch")


def adam_step(params: MlpParams, grads: GradientSet, state: AdamState):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    _check_shapes(params, grads)
    for l in range(params.n_layers):
        for tag, g in (("weights", grads.weights[l]), ("biases", grads.biases[l])):
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient in layer {l} {tag}")

    t = state.step_count + 1
    b1, b2, eps, lr = state.beta1, state.beta2, state.epsilon, state.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t

    new = params.copy()
    m = state.first_moment.copy()
    v = state.second_moment.copy()
    for group, gsrc, mdst, vdst in (
        (new.weights, grads.weights, m.weights, v.weights),
        (new.biases, grads.biases, m.biases, v.biases),
    ):
        for l in range(params.n_layers):
            mdst[l] = b1 * mdst[l] + (1.0 - b1) * gsrc[l]
            vdst[l] = b2 * vdst[l] + (1.0 - b2) * gsrc[l] ** 2
            group[l] -= lr * (mdst[l] / c1) / (np.sqrt(vdst[l] / c2) + eps)
            if not np.all(np.isfinite(group[l])):
                raise NumericsError(f"non-finite parameter after update in layer {l}")
    new_state = AdamState(m, v, t, lr, b1, b2, eps)
    return new, new_state
