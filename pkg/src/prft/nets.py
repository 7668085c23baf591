"""Dense feed-forward networks with exact reverse-mode gradients.

Parameters are plain numpy arrays held in `NetworkParams`; every operation
returns new values instead of mutating its inputs, so snapshots are free
and training trajectories are reproducible. `forward` accepts a single
input vector or a batch matrix (rows are samples); gradients returned by
`backward` are summed over the batch.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolationError, DivergenceError

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ContractViolationError("need at least input and output sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ContractViolationError("all layer sizes must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ContractViolationError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkParams:
    weights: tuple[np.ndarray, ...]  # each (fan_in, fan_out)
    biases: tuple[np.ndarray, ...]

    @property
    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass(frozen=True)
class Tape:
    """Activation record from one forward pass; consumed by `backward`."""
    layer_inputs: tuple[np.ndarray, ...]  # input to each affine layer
    preactivations: tuple[np.ndarray, ...]  # hidden-layer pre-activations
    single: bool  # True when the forward input was a 1-D vector


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """He-style uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights=tuple(weights), biases=tuple(biases))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, activated: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - activated**2


def forward(params: NetworkParams, x: np.ndarray,
            activation: str = "relu") -> tuple[np.ndarray, Tape]:
    """Affine/activation composition; hidden layers activated, output linear."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.weights[0].shape[0]:
        raise ContractViolationError(
            f"input width {h.shape[1]} != first layer fan-in {params.weights[0].shape[0]}")
    layer_inputs, preacts = [], []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(h)
        z = h @ w + b
        if i < n_layers - 1:
            preacts.append(z)
            h = _activate(z, activation)
        else:
            h = z
    tape = Tape(layer_inputs=tuple(layer_inputs), preactivations=tuple(preacts), single=single)
    return (h[0] if single else h), tape


def backward(params: NetworkParams, tape: Tape, output_gradient: np.ndarray,
             activation: str = "relu") -> tuple[NetworkParams, np.ndarray]:
    """Exact gradients of <output_gradient, output> w.r.t. parameters and input.

    Returns (parameter gradients shaped like `params`, gradient w.r.t. the
    forward input). Batch gradients are summed over rows.
    """
    g = np.asarray(output_gradient, dtype=float)
    if tape.single:
        g = g[None, :]
    if g.shape != (tape.layer_inputs[-1].shape[0], params.weights[-1].shape[1]):
        raise ContractViolationError("output_gradient shape mismatch")
    n_layers = len(params.weights)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        x_in = tape.layer_inputs[i]
        w_grads[i] = x_in.T @ g
        b_grads[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            z = tape.preactivations[i - 1]
            activated = _activate(z, activation)
            g = g * _activate_grad(z, activated, activation)
    grads = NetworkParams(weights=tuple(w_grads), biases=tuple(b_grads))
    input_grad = g[0] if tape.single else g
    return grads, input_grad


@dataclass(frozen=True)
class OptimizerState:
    m_weights: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_optimizer(params: NetworkParams, learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> OptimizerState:
    zeros = lambda arrs: tuple(np.zeros_like(a) for a in arrs)
    return OptimizerState(m_weights=zeros(params.weights), v_weights=zeros(params.weights),
                          m_biases=zeros(params.biases), v_biases=zeros(params.biases),
                          step=0, learning_rate=learning_rate,
                          beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(params: NetworkParams, grads: NetworkParams,
              opt: OptimizerState) -> tuple[NetworkParams, OptimizerState]:
    """One bias-corrected adaptive-moment update."""
    for g in (*grads.weights, *grads.biases):
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient component")
    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    def update(p, g, m, v):
        m2 = b1 * m + (1 - b1) * g
        v2 = b2 * v + (1 - b2) * g * g
        m_hat = m2 / correction1
        v_hat = v2 / correction2
        p2 = p - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)
        return p2, m2, v2

    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, opt.m_weights, opt.v_weights):
        p2, m2, v2 = update(p, g, m, v)
        new_w.append(p2); new_mw.append(m2); new_vw.append(v2)
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(params.biases, grads.biases, opt.m_biases, opt.v_biases):
        p2, m2, v2 = update(p, g, m, v)
        new_b.append(p2); new_mb.append(m2); new_vb.append(v2)
    params2 = NetworkParams(weights=tuple(new_w), biases=tuple(new_b))
    opt2 = replace(opt, m_weights=tuple(new_mw), v_weights=tuple(new_vw),
                   m_biases=tuple(new_mb), v_biases=tuple(new_vb), step=t)
    return params2, opt2


def soft_sync(target: NetworkParams, online: NetworkParams, tau: float) -> NetworkParams:
    if len(target.weights) != len(online.weights):
        raise ContractViolationError("network shapes differ")
    weights = tuple((1 - tau) * t + tau * o for t, o in zip(target.weights, online.weights))
    biases = tuple((1 - tau) * t + tau * o for t, o in zip(target.biases, online.biases))
    return NetworkParams(weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# Checkpoint serialization: magic "PRFT", u32 version, u32 layer-size count,
# u32 sizes..., u32 activation id, then little-endian float64 values per
# layer (weights row-major, then bias).

_MAGIC = b"PRFT"
_FORMAT_VERSION = 1
_ACTIVATION_IDS = {"relu": 0, "tanh": 1}
_ID_ACTIVATIONS = {v: k for k, v in _ACTIVATION_IDS.items()}


def params_to_bytes(spec: NetworkSpec, params: NetworkParams) -> bytes:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _FORMAT_VERSION))
    buf.write(struct.pack("<I", len(spec.layer_sizes)))
    for s in spec.layer_sizes:
        buf.write(struct.pack("<I", s))
    buf.write(struct.pack("<I", _ACTIVATION_IDS[spec.activation]))
    for w, b in zip(params.weights, params.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def params_from_bytes(data: bytes) -> tuple[NetworkSpec, NetworkParams]:
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise ContractViolationError("bad checkpoint magic")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _FORMAT_VERSION:
        raise ContractViolationError(f"unsupported checkpoint version {version}")
    (n_sizes,) = struct.unpack("<I", buf.read(4))
    sizes = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(n_sizes))
    (act_id,) = struct.unpack("<I", buf.read(4))
    spec = NetworkSpec(layer_sizes=sizes, activation=_ID_ACTIVATIONS[act_id])
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(buf.read(8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
        b = np.frombuffer(buf.read(8 * fan_out), dtype="<f8")
        weights.append(w.copy())
        biases.append(b.copy())
    return spec, NetworkParams(weights=tuple(weights), biases=tuple(biases))


def save_params(path: str, spec: NetworkSpec, params: NetworkParams) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(spec, params))


def load_params(path: str) -> tuple[NetworkSpec, NetworkParams]:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
