"""Dense feedforward Q-network with hand-written backpropagation.

Row-vector convention: a batch ``X`` of shape ``(n, d_in)`` maps through
``a = act(a @ W + b)`` for each hidden layer and a linear output layer, so
``W[k]`` has shape ``(d_k, d_{k+1})``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QNetwork", "Gradients", "SGD", "Adam", "make_optimizer", "sync"]

_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0.0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


def _n_params(dims):
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def _views(flat, dims):
    weights, biases = [], []
    pos = 0
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos:pos + a * b].reshape(a, b))
        pos += a * b
        biases.append(flat[pos:pos + b])
        pos += b
    return weights, biases


@dataclass
class Gradients:
    """Gradient of a scalar loss, laid out like :attr:`QNetwork.params`.

    ``weights`` and ``biases`` are per-layer views into ``flat``.
    """

    flat: np.ndarray
    weights: list
    biases: list
    loss: float = 0.0

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.flat)))


class QNetwork:
    """Fully connected network emitting one value per decision index."""

    def __init__(self, layer_dims, activation="relu", seed=None, *, weights=None, biases=None):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"invalid layer dims {layer_dims}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = layer_dims
        self.activation = activation
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, biases = [], []
            for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
                bound = 1.0 / np.sqrt(d_in)
                weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
                biases.append(rng.uniform(-bound, bound, size=d_out))
        # all parameters live in one buffer; weights/biases are views into it
        self.params = np.zeros(_n_params(layer_dims))
        self.weights, self.biases = _views(self.params, layer_dims)
        for k, (w, b) in enumerate(zip(weights, biases)):
            w, b = np.asarray(w, dtype=float), np.asarray(b, dtype=float)
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ValueError(f"layer {k}: got W{w.shape} b{b.shape}, "
                                 f"expected W{self.weights[k].shape}")
            self.weights[k][...] = w
            self.biases[k][...] = b

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x) -> np.ndarray:
        """Q-values for one input vector ``(d_in,)`` or a batch ``(n, d_in)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_inputs or x.ndim > 2:
            raise ValueError(f"expected input with last dim {self.n_inputs}, got shape {x.shape}")
        return self._forward(x)[0][-1]

    def _forward(self, x):
        act = _ACTIVATIONS[self.activation][0]
        acts, pre = [x], []
        a = x
        last = self.n_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = z if k == last else act(z)
            acts.append(a)
        return acts, pre

    def backward(self, x, action_index: int, target: float) -> Gradients:
        """Gradient of ``0.5 * (target - Q(x)[action_index])**2`` for one input."""
        if not np.isfinite(target):
            raise FloatingPointError(f"non-finite target {target}")
        if not 0 <= action_index < self.n_outputs:
            raise IndexError(f"action index {action_index} out of range")
        x = np.asarray(x, dtype=float).reshape(1, -1)
        grads = self.batch_gradients(x, np.array([action_index]), np.array([float(target)]))
        return grads

    def batch_gradients(self, X, actions, targets) -> Gradients:
        """Gradient of the batch-mean loss ``mean(0.5 * (y - Q(X)[a])**2)``.

        Only the selected output head of each row receives error signal.
        """
        X = np.asarray(X, dtype=float)
        acts, pre = self._forward(X)
        n = X.shape[0]
        rows = np.arange(n)
        err = acts[-1][rows, actions] - targets
        delta = np.zeros_like(acts[-1])
        delta[rows, actions] = err / n
        dact = _ACTIVATIONS[self.activation][1]
        flat = np.empty_like(self.params)
        gw, gb = _views(flat, self.layer_dims)
        for k in range(self.n_layers - 1, -1, -1):
            np.matmul(acts[k].T, delta, out=gw[k])
            delta.sum(axis=0, out=gb[k])
            if k:
                delta = (delta @ self.weights[k].T) * dact(pre[k - 1], acts[k])
        return Gradients(flat, gw, gb, float(0.5 * np.dot(err, err) / n))

    # parameter plumbing

    def flat_parameters(self) -> np.ndarray:
        return self.params.copy()

    def set_flat_parameters(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.size} parameters, got {flat.size}")
        self.params[...] = flat

    def copy(self) -> "QNetwork":
        return QNetwork(self.layer_dims, self.activation, weights=self.weights, biases=self.biases)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.params)))

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "parameters": self.flat_parameters().tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "QNetwork":
        net = cls(data["layer_dims"], data["activation"], seed=0)
        net.set_flat_parameters(data["parameters"])
        return net


def sync(target: QNetwork, online: QNetwork) -> QNetwork:
    """Overwrite ``target`` with a deep copy of ``online``'s parameters."""
    if target.layer_dims != online.layer_dims:
        raise ValueError("target and online networks differ in shape")
    target.activation = online.activation
    target.params[...] = online.params
    return target


class SGD:
    """Plain gradient descent, ``w <- w - lr * g``."""

    def __init__(self, learning_rate=1e-3):
        self.learning_rate = learning_rate

    def step(self, net: QNetwork, grads: Gradients) -> None:
        net.params -= self.learning_rate * grads.flat


class Adam:
    """Adaptive-moment optimizer (Kingma & Ba) with bias correction."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = None
        self._v = None

    def step(self, net: QNetwork, grads: Gradients) -> None:
        g = grads.flat
        if self._m is None:
            self._m = np.zeros_like(g)
            self._v = np.zeros_like(g)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.learning_rate * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        m, v = self._m, self._v
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        net.params -= scale * m / (np.sqrt(v) + self.eps)


def make_optimizer(name: str, learning_rate: float):
    if name == "sgd":
        return SGD(learning_rate)
    if name == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")
