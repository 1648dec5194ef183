"""Dense 64-bit numerics for small fully connected networks.

Matrices are plain 2-D float64 numpy arrays (row-major batches: one example
per row). The forward/backward passes, the adaptive-moment optimizer, and the
central finite-difference oracle are written out explicitly so every gradient
in the package can be cross-checked against an independent numeric estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateWeightError,
    DimensionError,
    NumericError,
)

Array = np.ndarray

_ACTIVATIONS = ("tanh", "relu")


def as_matrix(x, name: str = "array") -> Array:
    """Coerce to a 2-D float64 array, rejecting other ranks."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def ensure_finite(a: Array, name: str) -> Array:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def _activate(z: Array, kind: str) -> Array:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: Array, kind: str) -> Array:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.where(z > 0.0, 1.0, 0.0)


@dataclass
class MlpParams:
    """Parameters of a fully connected net.

    ``layers`` is an ordered list of (weight, bias) pairs; weights have shape
    (fan_in, fan_out) and act on row-vector batches as ``x @ W + b``. Hidden
    layers apply ``activation``; the final layer is linear.
    """

    layers: list[tuple[Array, Array]]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise ValueError("MlpParams needs at least one layer")
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise DimensionError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
            if prev_out is not None and w.shape[0] != prev_out:
                raise DimensionError(
                    f"layer {i} expects {w.shape[0]} inputs but layer {i - 1} emits {prev_out}"
                )
            ensure_finite(w, f"layer {i} weights")
            ensure_finite(b, f"layer {i} biases")
            prev_out = w.shape[1]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def arrays(self) -> list[Array]:
        """Flat list [W0, b0, W1, b1, ...] referencing the stored arrays."""
        return [a for w, b in self.layers for a in (w, b)]

    def with_arrays(self, arrays: list[Array]) -> "MlpParams":
        """Rebuild an MlpParams of identical topology from a flat array list."""
        if len(arrays) != 2 * len(self.layers):
            raise DimensionError("array list does not match layer count")
        pairs = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(self.layers))]
        return MlpParams(pairs, self.activation)

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers], self.activation)


def init_mlp(sizes: list[int], activation: str = "tanh", rng: np.random.Generator | None = None) -> MlpParams:
    """Seeded uniform init with half-width sqrt(6 / (fan_in + fan_out)); zero biases."""
    if rng is None:
        rng = np.random.default_rng(0)
    if len(sizes) < 2:
        raise ValueError("need an input and an output size")
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return MlpParams(layers, activation)


def mlp_forward(x: Array, params: MlpParams) -> Array:
    """Map a batch (n, input_dim) to (n, output_dim)."""
    h = as_matrix(x, "input batch")
    if h.shape[1] != params.input_dim:
        raise DimensionError(
            f"input has {h.shape[1]} columns, first layer expects {params.input_dim}"
        )
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i != last:
            h = _activate(h, params.activation)
    return h


def mlp_backward(x: Array, params: MlpParams, upstream: Array) -> tuple[list[tuple[Array, Array]], Array]:
    """Backpropagate ``upstream`` (shape of the forward output) through the net.

    Returns (per-layer (dW, db) gradients, gradient with respect to x).
    """
    h = as_matrix(x, "input batch")
    g = as_matrix(upstream, "upstream gradient")
    if h.shape[1] != params.input_dim:
        raise DimensionError(
            f"input has {h.shape[1]} columns, first layer expects {params.input_dim}"
        )
    # Forward, remembering layer inputs and pre-activations.
    inputs = []
    preacts = []
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = _activate(z, params.activation) if i != last else z
    if g.shape != h.shape:
        raise DimensionError(f"upstream gradient shape {g.shape} != output shape {h.shape}")

    grads: list[tuple[Array, Array]] = [None] * len(params.layers)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        w, _ = params.layers[i]
        dz = g if i == last else g * _activate_grad(preacts[i], params.activation)
        grads[i] = (inputs[i].T @ dz, dz.sum(axis=0))
        g = dz @ w.T
    return grads, g


@dataclass
class AdamState:
    """Adaptive-moment accumulators for a flat list of parameter arrays."""

    m: list[Array]
    v: list[Array]
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Array], lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: list[Array], grads: list[Array], state: AdamState) -> tuple[list[Array], AdamState]:
    """One bias-corrected adaptive-moment update. Pure: returns new params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("parameter, gradient, and state lists must align")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape} in block {i}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {i}")
        m = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    next_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new_params, next_state


def finite_diff_grad(loss_fn, params: list[Array], step: float = 1e-5) -> list[Array]:
    """Central-difference gradient of ``loss_fn(params)`` for each entry.

    ``loss_fn`` takes the full parameter list and returns a scalar; it must be
    finite at every probed point.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    work = [p.astype(np.float64).copy() for p in params]
    grads = [np.zeros_like(p) for p in work]
    for k, p in enumerate(work):
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            up = float(loss_fn(work))
            p[idx] = orig - step
            down = float(loss_fn(work))
            p[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"loss_fn returned non-finite value near block {k}{idx}")
            grads[k][idx] = (up - down) / (2.0 * step)
            it.iternext()
    return grads


def normalize_columns(w: Array) -> Array:
    """Rescale every column of ``w`` to unit L2 norm, preserving direction."""
    w = as_matrix(w, "classifier weights")
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms < 1e-15):
        bad = int(np.argmin(norms))
        raise DegenerateWeightError(f"column {bad} has zero norm")
    return w / norms
