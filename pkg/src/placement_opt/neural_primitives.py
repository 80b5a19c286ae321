"""Small differentiable building blocks: dense nets, softmax sampling, Adam.

Everything is float64 numpy with hand-written backward passes; gradients are
checked against central finite differences in the test suite. Forward passes
accept a single vector or a batch of row vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

RELU = "relu"
IDENTITY = "identity"


class ShapeError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class DenseNet:
    """Stack of affine layers with relu or identity activations.

    weights[i] has shape (out_i, in_i); biases[i] shape (out_i,).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("layer lists must have equal length")
        for i, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight rows {w.shape[0]} != bias size {b.shape[0]}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: input dim {w.shape[1]} mismatches previous output")
            if a not in (RELU, IDENTITY):
                raise ShapeError(f"unknown activation {a!r}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ShapeError(f"layer {i}: non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def make_dense(rng: np.random.Generator, dims: list[int], activations: list[str]) -> DenseNet:
    """dims = [in, h1, ..., out]; scaled-uniform weights, zero biases."""
    ws, bs = [], []
    for i in range(len(dims) - 1):
        ws.append(glorot_uniform(rng, dims[i + 1], dims[i]))
        bs.append(np.zeros(dims[i + 1]))
    return DenseNet(weights=ws, biases=bs, activations=list(activations))


def dense_forward(net: DenseNet, x: np.ndarray):
    """Returns (output, tape). x is (in,) or (batch, in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise ShapeError(f"input dim {x.shape[-1]} != {net.in_dim}")
    tape = [x]
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        tape.append(z)
        h = np.maximum(z, 0.0) if act == RELU else z
        tape.append(h)
    return h, tape


def dense_backward(net: DenseNet, tape: list, grad_out: np.ndarray):
    """Exact reverse pass. Returns ([(dW, db), ...], grad_input).

    grad_out must match the forward output's shape; batched inputs sum their
    parameter gradients over the batch. relu' (0) is taken as 0.
    """
    grad = np.asarray(grad_out, dtype=np.float64)
    if grad.shape != tape[-1].shape:
        raise ShapeError(f"grad shape {grad.shape} != output shape {tape[-1].shape}")
    param_grads = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        z = tape[1 + 2 * i]
        h_in = tape[2 * i]
        if net.activations[i] == RELU:
            grad = grad * (z > 0.0)
        if grad.ndim == 1:
            dw = np.outer(grad, h_in)
            db = grad.copy()
        else:
            dw = grad.T @ h_in
            db = grad.sum(axis=0)
        param_grads[i] = (dw, db)
        grad = grad @ net.weights[i]
    return param_grads, grad


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0.0]
    return float(-(p * np.log(p)).sum())


def softmax_logprob_sample(logits: np.ndarray, rng: np.random.Generator):
    """Sample from softmax(logits) via inverse CDF on one uniform draw.

    Returns (action, log prob of action, probabilities).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any():
        raise ValueError("NaN logits")
    probs = softmax(logits)
    u = rng.random()
    action = int(np.searchsorted(np.cumsum(probs), u))
    action = min(action, len(probs) - 1)  # guard u == 1.0 edge
    return action, float(np.log(probs[action])), probs


@dataclass
class AdamState:
    """Bias-corrected Adam over a flat list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    timestep: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: list[np.ndarray], lr: float = 1e-3) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr_scale: float = 1.0):
    """In-place Adam update; lr_scale carries a decay schedule multiplier."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ShapeError("params/grads/state length mismatch")
    state.timestep += 1
    t = state.timestep
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= (state.lr * lr_scale) * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_difference_check(loss_fn, params, grads, h=1e-5, max_coords=None, rng=None, exclude=None):
    """Max relative error between central differences and analytic grads.

    loss_fn takes the params list and returns a scalar. When max_coords is
    given, a seeded random subset of coordinates is probed. exclude is an
    optional list of boolean masks (True = skip); coordinates sitting exactly
    on a relu kink should be excluded by the caller.
    """
    coords = []
    for i, p in enumerate(params):
        for j in range(p.size):
            if exclude is not None and exclude[i].ravel()[j]:
                continue
            coords.append((i, j))
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(k)] for k in pick]
    worst = 0.0
    for i, j in coords:
        flat = params[i].ravel()
        orig = flat[j]
        flat[j] = orig + h
        up = loss_fn(params)
        flat[j] = orig - h
        down = loss_fn(params)
        flat[j] = orig
        numeric = (up - down) / (2.0 * h)
        analytic = grads[i].ravel()[j]
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, err)
    return worst


def params_to_doc(params: list[np.ndarray]):
    return [{"shape": list(p.shape), "data": p.ravel().tolist()} for p in params]


def params_from_doc(doc) -> list[np.ndarray]:
    return [np.array(e["data"], dtype=np.float64).reshape(e["shape"]) for e in doc]


CHECKPOINT_FORMAT = "placement-opt-checkpoint-v1"


def save_checkpoint(path, params, adam: AdamState | None, rng: np.random.Generator | None, extra=None):
    """Write parameters, optimizer state, and RNG state as versioned JSON."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "params": params_to_doc(params),
        "adam": None
        if adam is None
        else {
            "m": params_to_doc(adam.m),
            "v": params_to_doc(adam.v),
            "timestep": adam.timestep,
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
        },
        "rng_state": None if rng is None else rng.bit_generator.state,
        "extra": extra or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    """Returns (params, AdamState | None, restored rng | None, extra dict)."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {doc.get('format')!r}")
    params = params_from_doc(doc["params"])
    adam = None
    if doc["adam"] is not None:
        a = doc["adam"]
        adam = AdamState(
            m=params_from_doc(a["m"]),
            v=params_from_doc(a["v"]),
            timestep=a["timestep"],
            lr=a["lr"],
            beta1=a["beta1"],
            beta2=a["beta2"],
            eps=a["eps"],
        )
    rng = None
    if doc["rng_state"] is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = doc["rng_state"]
    return params, adam, rng, doc.get("extra", {})
