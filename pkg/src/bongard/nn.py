"""Sequential dense networks in float64 numpy with hand-written backprop.

Only what the agents need: dense layers, tanh/relu/identity/softmax,
Adam and SGD, finite-difference gradient checks and JSON checkpoints.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch, StaleCache

ACTIVATIONS = ("tanh", "relu", "identity", "softmax")
FORMAT_VERSION = 1

_net_ids = itertools.count()


class DenseLayer:
    def __init__(self, weights, biases, activation: str = "identity"):
        weights = np.array(weights, dtype=np.float64)
        biases = np.array(biases, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] < 1 or weights.shape[1] < 1:
            raise DimensionMismatch(f"bad weight shape {weights.shape}")
        if biases.shape != (weights.shape[1],):
            raise DimensionMismatch(f"bias shape {biases.shape} != ({weights.shape[1]},)")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = weights
        self.biases = biases
        self.activation = activation

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng) -> "DenseLayer":
        limit = 1.0 / np.sqrt(in_dim)
        return cls(rng.uniform(-limit, limit, size=(in_dim, out_dim)), np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


class Network:
    """A chain of dense layers. ``version`` changes whenever parameters are updated."""

    def __init__(self, layers: Sequence[DenseLayer]):
        layers = list(layers)
        if not layers:
            raise DimensionMismatch("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        if any(l.activation == "softmax" for l in layers[:-1]):
            raise ValueError("softmax is only allowed on the final layer")
        self.layers = layers
        self.uid = next(_net_ids)
        self.version = 0

    @classmethod
    def build(cls, dims: Sequence[int], activations: Sequence[str], rng) -> "Network":
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        return cls([DenseLayer.init(i, o, a, rng) for i, o, a in zip(dims, dims[1:], activations)])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def touch(self) -> None:
        self.version += 1

    def __call__(self, x):
        return forward(self, x)[0]

    def to_dict(self) -> dict:
        return {"layers": [{"in_dim": l.in_dim, "out_dim": l.out_dim, "activation": l.activation,
                            "weights": l.weights.ravel().tolist(), "biases": l.biases.tolist()}
                           for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls([DenseLayer(np.asarray(l["weights"]).reshape(l["in_dim"], l["out_dim"]),
                               l["biases"], l["activation"]) for l in d["layers"]])


@dataclass
class Cache:
    net_uid: int
    version: int
    squeeze: bool
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


@dataclass
class Gradients:
    params: list
    input: np.ndarray


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    return z


def _activation_backward(y: np.ndarray, g: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return g * (1.0 - y * y)
    if kind == "relu":
        return g * (y > 0)
    if kind == "softmax":
        return y * (g - (g * y).sum(axis=-1, keepdims=True))
    return g


def forward(net: Network, x):
    """Run ``x`` of shape (in_dim,) or (batch, in_dim) through the network."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise DimensionMismatch(f"expected input width {net.in_dim}, got shape {x.shape}")
    cache = Cache(net.uid, net.version, squeeze)
    h = x
    for layer in net.layers:
        cache.inputs.append(h)
        h = _activate(h @ layer.weights + layer.biases, layer.activation)
        cache.outputs.append(h)
    return (h[0] if squeeze else h), cache


def backward(net: Network, cache: Cache, output_gradient) -> Gradients:
    """Exact gradients given dLoss/dOutput; parameter order matches ``net.params()``."""
    if cache.net_uid != net.uid or cache.version != net.version:
        raise StaleCache("cache does not belong to the current parameters")
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise DimensionMismatch(f"output gradient shape {g.shape} != {cache.outputs[-1].shape}")
    grads: list[np.ndarray] = []
    for layer, x, y in zip(reversed(net.layers), reversed(cache.inputs), reversed(cache.outputs)):
        dz = _activation_backward(y, g, layer.activation)
        grads += [dz.sum(axis=0), x.T @ dz]  # reversed below
        g = dz @ layer.weights.T
    grads.reverse()
    return Gradients(grads, g[0] if cache.squeeze else g)


# ---------------------------------------------------------------------------
# optimisers

@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Optional[list] = None
    v: Optional[list] = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("kind", "lr", "beta1", "beta2", "eps", "step")}
        d["m"] = None if self.m is None else [a.ravel().tolist() for a in self.m]
        d["v"] = None if self.v is None else [a.ravel().tolist() for a in self.v]
        return d

    @classmethod
    def from_dict(cls, d: dict, shapes: Sequence[tuple]) -> "OptimizerState":
        state = cls(d["kind"], d["lr"], d["beta1"], d["beta2"], d["eps"], d["step"])
        if d.get("m") is not None:
            state.m = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["m"], shapes)]
            state.v = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["v"], shapes)]
        return state


def optimize_step(state: OptimizerState, params, grads):
    """Update ``params`` in place (Adam or SGD) and return them.

    ``params`` may be a list of arrays or a Network, whose version is bumped.
    """
    net = params if isinstance(params, Network) else None
    arrays = net.params() if net is not None else list(params)
    if len(arrays) != len(grads) or any(p.shape != np.shape(g) for p, g in zip(arrays, grads)):
        raise ShapeMismatch("gradients do not match parameter shapes")
    state.step += 1
    if state.kind == "sgd":
        for p, g in zip(arrays, grads):
            p -= state.lr * g
    elif state.kind == "adam":
        if state.m is None:
            state.m = [np.zeros_like(p) for p in arrays]
            state.v = [np.zeros_like(p) for p in arrays]
        b1, b2 = state.beta1, state.beta2
        c1 = 1.0 - b1 ** state.step
        c2 = 1.0 - b2 ** state.step
        for p, g, m, v in zip(arrays, grads, state.m, state.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    else:
        raise ValueError(f"unknown optimizer {state.kind!r}")
    if net is not None:
        net.touch()
    return params


# ---------------------------------------------------------------------------
# losses and gradient checking

def squared_loss(target) -> Callable:
    target = np.asarray(target, dtype=np.float64)

    def loss(out):
        d = out - target
        return 0.5 * float((d * d).sum()), d
    return loss


def linear_loss(weights) -> Callable:
    weights = np.asarray(weights, dtype=np.float64)

    def loss(out):
        return float((out * weights).sum()), np.broadcast_to(weights, out.shape).copy()
    return loss


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple  # (parameter index, flat coordinate)
    checked: int


def relative_error(a: float, b: float, floor: float = 1e-4) -> float:
    return abs(a - b) / max(abs(a) + abs(b), floor)


def check_gradients(f: Callable[[], float], params: Sequence[np.ndarray], analytic: Sequence[np.ndarray],
                    h: float = 1e-5, max_coords: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Central differences of scalar ``f`` over coordinates of ``params`` (perturbed in place)."""
    coords = [(k, c) for k, p in enumerate(params) for c in range(p.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[n] for n in pick]
    worst, worst_at = 0.0, (-1, -1)
    for k, c in coords:
        flat = params[k].reshape(-1)
        old = flat[c]
        flat[c] = old + h
        up = f()
        flat[c] = old - h
        down = f()
        flat[c] = old
        numeric = (up - down) / (2 * h)
        err = relative_error(float(analytic[k].reshape(-1)[c]), numeric)
        if err > worst:
            worst, worst_at = err, (k, c)
    return GradCheckReport(worst, worst_at, len(coords))


def grad_check(net: Network, x, loss: Callable, h: float = 1e-5,
               max_coords: Optional[int] = 400, seed: int = 0) -> GradCheckReport:
    """Compare :func:`backward` with central differences on every (or a seeded sample of) parameter."""
    out, cache = forward(net, x)
    _, g = loss(out)
    analytic = backward(net, cache, g).params

    def f():
        return loss(forward(net, x)[0])[0]
    return check_gradients(f, net.params(), analytic, h=h, max_coords=max_coords, seed=seed)
