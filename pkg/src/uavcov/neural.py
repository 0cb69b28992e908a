"""Small dense networks in float64 numpy: forward, backward, Adam and Polyak updates.

Parameters may carry leading "stack" axes (weights of shape ``(*stack, in, out)``)
so a whole team of same-shaped networks runs as one batched matmul. Every
function works unchanged for a single network.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")
FINAL_INIT = 3e-3
_MAGIC = b"UMLP"


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "tanh"
    hidden_activation: str = "relu"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[-2:] != self.layer_sizes[i:i + 2] or b.shape[-1] != self.layer_sizes[i + 1]:
                raise ValueError(f"layer {i} has shapes {w.shape}, {b.shape}")
        for act in (self.output_activation, self.hidden_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def stack_shape(self) -> tuple[int, ...]:
        return self.weights[0].shape[:-2]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.output_activation,
                         self.hidden_activation)

    def member(self, j: int) -> "MlpParams":
        """Copy of network ``j`` from a stack."""
        return MlpParams(self.layer_sizes, [w[j].copy() for w in self.weights],
                         [b[j].copy() for b in self.biases], self.output_activation,
                         self.hidden_activation)

    @classmethod
    def stack(cls, nets: list["MlpParams"]) -> "MlpParams":
        first = nets[0]
        return cls(first.layer_sizes,
                   [np.stack([n.weights[i] for n in nets]) for i in range(len(first.weights))],
                   [np.stack([n.biases[i] for n in nets]) for i in range(len(first.biases))],
                   first.output_activation, first.hidden_activation)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def init_params(rng: np.random.Generator, layer_sizes, output_activation: str = "tanh",
                stack: tuple[int, ...] = ()) -> MlpParams:
    """He-uniform hidden layers, final layer uniform in +-3e-3."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    stack = tuple(stack)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == len(sizes) - 2:
            weights.append(rng.uniform(-FINAL_INIT, FINAL_INIT, stack + (fan_in, fan_out)))
            biases.append(rng.uniform(-FINAL_INIT, FINAL_INIT, stack + (fan_out,)))
        else:
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, stack + (fan_in, fan_out)))
            biases.append(np.zeros(stack + (fan_out,)))
    return MlpParams(sizes, weights, biases, output_activation)


def forward(params: MlpParams, x):
    """Returns ``(output, cache)``; ``x`` is ``(..., batch, in)`` or a single vector."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != {params.layer_sizes[0]}")
    vector = x.ndim == 1
    a = x[None, :] if vector else x
    inputs, outputs = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + np.expand_dims(b, -2)
        a = _act(params.output_activation if i == last else params.hidden_activation, z)
        outputs.append(a)
    cache = (inputs, outputs, vector, z)
    return (a[..., 0, :] if vector else a), cache


def output_preactivation(cache) -> np.ndarray:
    """Final-layer pre-activation saved by ``forward``."""
    return cache[3][..., 0, :] if cache[2] else cache[3]


def _act_grad(name, y, g):
    if name == "relu":
        return g * (y > 0)
    if name == "tanh":
        return g * (1.0 - y * y)
    return g


def backward(params: MlpParams, cache, output_gradient, param_grads: bool = True,
             input_grad: bool = True, preact_gradient=None):
    """Reverse-mode gradients of ``sum(output_gradient * output)``.

    Returns ``(grads, input_gradient)`` with ``grads`` aligned to
    ``params.arrays()``. Batch axes are summed; stack axes are kept. Either
    part can be skipped (returned as None) to save work. ``preact_gradient``
    adds a gradient directly on the final pre-activation.
    """
    inputs, outputs, vector, _ = cache
    g = np.asarray(output_gradient, dtype=float)
    if vector:
        g = g[None, :]
    if g.shape[-1] != params.layer_sizes[-1] or g.shape[-2] != outputs[-1].shape[-2]:
        raise ValueError(f"output gradient shape {g.shape} does not match output")
    last = len(params.weights) - 1
    grads = [None] * (2 * len(params.weights)) if param_grads else None
    for i in range(last, -1, -1):
        name = params.output_activation if i == last else params.hidden_activation
        delta = _act_grad(name, outputs[i], g)
        if i == last and preact_gradient is not None:
            pg = np.asarray(preact_gradient, dtype=float)
            delta = delta + (pg[None, :] if vector else pg)
        if param_grads:
            dw = np.swapaxes(inputs[i], -1, -2) @ delta
            db = delta.sum(axis=-2)
            # extra leading input axes (unstacked weights, stacked inputs) are summed out
            while dw.ndim > params.weights[i].ndim:
                dw, db = dw.sum(axis=0), db.sum(axis=0)
            grads[2 * i] = dw
            grads[2 * i + 1] = db
        if i == 0 and not input_grad:
            return grads, None
        g = delta @ np.swapaxes(params.weights[i], -1, -2)
    return grads, (g[..., 0, :] if vector else g)


@dataclass
class AdamState:
    learning_rate: float
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float) -> "AdamState":
        arrays = params.arrays()
        return cls(learning_rate, [np.zeros_like(a) for a in arrays],
                   [np.zeros_like(a) for a in arrays])

    def copy(self) -> "AdamState":
        return AdamState(self.learning_rate, [m.copy() for m in self.first_moment],
                         [v.copy() for v in self.second_moment], self.step_count,
                         self.beta1, self.beta2, self.epsilon)


def adam_step(params: MlpParams, grads: list[np.ndarray], state: AdamState):
    """In-place bias-corrected Adam descent step; returns ``(params, state)``."""
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ValueError("gradient list does not match parameters")
    for i, (p, g) in enumerate(zip(arrays, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in array {i} (shape {g.shape}) at step {state.step_count + 1}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = state.learning_rate / (1.0 - b1 ** t)
    inv_bc2 = 1.0 / (1.0 - b2 ** t)
    for p, g, m, v in zip(arrays, grads, state.first_moment, state.second_moment):
        buf = np.multiply(g, 1.0 - b1)
        m *= b1
        m += buf
        np.multiply(g, g, out=buf)
        buf *= 1.0 - b2
        v *= b2
        v += buf
        np.multiply(v, inv_bc2, out=buf)
        np.sqrt(buf, out=buf)
        buf += state.epsilon
        np.divide(m, buf, out=buf)
        buf *= step
        p -= buf
    return params, state


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Polyak blend ``target <- tau * online + (1 - tau) * target`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    for t, o in zip(target.arrays(), online.arrays()):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {o.shape}")
    if tau == 0.0:
        return target
    for t, o in zip(target.arrays(), online.arrays()):
        if tau == 1.0:
            t[...] = o
        else:
            t *= 1.0 - tau
            t += tau * o
    return target


def save_params(path, params: MlpParams) -> None:
    """Little-endian binary checkpoint: header, then W0, b0, W1, b1, ... as float64."""
    if params.stack_shape:
        raise ValueError("save one network at a time; use MlpParams.member(j)")
    sizes = params.layer_sizes
    header = _MAGIC + struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes)
    header += struct.pack("<BB", ACTIVATIONS.index(params.hidden_activation),
                          ACTIVATIONS.index(params.output_activation))
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    Path(path).write_bytes(header + body)


def load_params(path) -> MlpParams:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    (n,) = struct.unpack_from("<I", raw, 4)
    sizes = struct.unpack_from(f"<{n}I", raw, 8)
    off = 8 + 4 * n
    hidden, output = struct.unpack_from("<BB", raw, off)
    off += 2
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(raw, "<f8", fan_in * fan_out, off).reshape(fan_in, fan_out)
        off += 8 * w.size
        b = np.frombuffer(raw, "<f8", fan_out, off)
        off += 8 * b.size
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return MlpParams(sizes, weights, biases, ACTIVATIONS[output], ACTIVATIONS[hidden])
