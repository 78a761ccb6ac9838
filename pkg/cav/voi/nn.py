"""Multilayer perceptrons with manual backpropagation, Adam, and a replay buffer."""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from cav.voi.data.enums import Activation
from cav.voi.exceptions import ContractViolationError, ValidationError
from cav.voi.utils import make_rng

logger = logging.getLogger(__name__)

MODULE = "neural-rl"

CHECKPOINT_FORMAT = "cav-voi-mlp"
CHECKPOINT_VERSION = 1


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return np.tanh(z)
    if kind == Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_grad(kind: Activation, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return 1.0 - y ** 2
    if kind == Activation.RELU:
        return (z > 0).astype(float)
    return np.ones_like(z)


@dataclass
class MlpGradients:
    """Gradients of sum(output * upstream) over a batch."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    # Gradient with respect to the input, same shape as the input
    inputs: np.ndarray

    def flat(self) -> np.ndarray:
        """Parameter gradients in Mlp.get_flat order."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.extend([W.ravel(), b.ravel()])
        return np.concatenate(parts)


class Mlp:
    """Fully connected network; weights[l] has shape (n_out, n_in).

    Example:
        net = Mlp([3, 64, 64, 1], seed=0)
        y = net.forward(np.zeros(3))
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        activation: str = "tanh",
        output_activation: str = "identity",
        seed: Optional[int] = 0,
        weights: Optional[List[np.ndarray]] = None,
        biases: Optional[List[np.ndarray]] = None,
    ):
        if len(layer_sizes) < 2 or any(int(n) < 1 for n in layer_sizes):
            raise ContractViolationError(f"invalid layer sizes {list(layer_sizes)}", module=MODULE)
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.activation = Activation(activation)
        self.output_activation = Activation(output_activation)
        self.metadata: Dict[str, Any] = {}
        if weights is not None and biases is not None:
            self.weights = [np.asarray(W, dtype=float).copy() for W in weights]
            self.biases = [np.asarray(b, dtype=float).copy() for b in biases]
            for l, (n_in, n_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
                if self.weights[l].shape != (n_out, n_in) or self.biases[l].shape != (n_out,):
                    raise ContractViolationError(f"layer {l} parameter shapes do not match",
                                                 module=MODULE)
        else:
            rng = make_rng(seed)
            self.weights, self.biases = [], []
            for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
                limit = np.sqrt(6.0 / (n_in + n_out))
                self.weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
                self.biases.append(np.zeros(n_out))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum((n_in + 1) * n_out
                   for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def _layer_kind(self, l: int) -> Activation:
        return self.output_activation if l == len(self.weights) - 1 else self.activation

    def _as_batch(self, x: Any) -> Tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        if arr.shape[1] != self.n_inputs:
            raise ContractViolationError(
                f"input has dimension {arr.shape[1]}, network expects {self.n_inputs}",
                module=MODULE,
            )
        return arr, single

    def forward_cache(self, x: Any) -> Tuple[np.ndarray, Dict[str, Any]]:
        """Forward pass keeping the intermediates needed by mlp_backward."""
        h, single = self._as_batch(x)
        pre, post = [], [h]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            h = _activate(self._layer_kind(l), z)
            pre.append(z)
            post.append(h)
        return (h[0] if single else h), {"pre": pre, "post": post, "single": single}

    def forward(self, x: Any) -> np.ndarray:
        """Evaluate the network on one input vector or a batch of rows."""
        out, _ = self.forward_cache(x)
        return out

    __call__ = forward

    def get_flat(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.extend([W.ravel(), b.ravel()])
        return np.concatenate(parts)

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.param_count:
            raise ContractViolationError(
                f"expected {self.param_count} parameters, got {theta.size}", module=MODULE
            )
        pos = 0
        for l, W in enumerate(self.weights):
            n = W.size
            self.weights[l] = theta[pos:pos + n].reshape(W.shape).copy()
            pos += n
            m = self.biases[l].size
            self.biases[l] = theta[pos:pos + m].copy()
            pos += m

    def copy(self) -> "Mlp":
        net = Mlp(self.layer_sizes, self.activation.value, self.output_activation.value,
                  weights=self.weights, biases=self.biases)
        net.metadata = dict(self.metadata)
        return net

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layer_sizes": self.layer_sizes,
            "activation": self.activation.value,
            "output_activation": self.output_activation.value,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Mlp":
        """Rebuild a network from to_dict output.

        Raises:
            ValidationError: On an unknown format or version
        """
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"unsupported checkpoint {data.get('format')!r} v{data.get('version')!r}"
            )
        return cls(
            data["layer_sizes"],
            data["activation"],
            data["output_activation"],
            weights=[np.asarray(W, dtype=float) for W in data["weights"]],
            biases=[np.asarray(b, dtype=float) for b in data["biases"]],
        )

    def save(self, path: str) -> str:
        """Write a JSON checkpoint."""
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)
        return path

    @classmethod
    def load(cls, path: str) -> "Mlp":
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"Cannot read checkpoint {path}: {e}") from e
        return cls.from_dict(data)


def mlp_forward(net: Mlp, x: Any) -> np.ndarray:
    """Deterministic forward pass."""
    return net.forward(x)


def mlp_backward(net: Mlp, x: Any, upstream_grad: Any) -> MlpGradients:
    """Reverse-mode gradients of sum(output * upstream_grad).

    Args:
        net: Network
        x: Input vector or batch
        upstream_grad: Gradient with respect to the output, same leading shape as the
            output of net.forward(x)

    Returns:
        MlpGradients summed over the batch

    Raises:
        ContractViolationError: On dimension mismatch
    """
    out, cache = net.forward_cache(x)
    g = np.atleast_2d(np.asarray(upstream_grad, dtype=float))
    if g.shape != np.atleast_2d(out).shape:
        raise ContractViolationError(
            f"upstream gradient shape {g.shape} does not match output {np.atleast_2d(out).shape}",
            module=MODULE,
        )
    pre, post = cache["pre"], cache["post"]
    dW: List[np.ndarray] = [np.empty(0)] * len(net.weights)
    db: List[np.ndarray] = [np.empty(0)] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        dz = g * _activation_grad(net._layer_kind(l), pre[l], post[l + 1])
        dW[l] = dz.T @ post[l]
        db[l] = dz.sum(axis=0)
        g = dz @ net.weights[l]
    inputs = g[0] if cache["single"] else g
    return MlpGradients(weights=dW, biases=db, inputs=inputs)


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """target <- (1 - tau) target + tau source, in place."""
    target.set_flat((1.0 - tau) * target.get_flat() + tau * source.get_flat())


class Adam:
    """Adam optimizer bound to one network."""

    def __init__(self, net: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = np.zeros(net.param_count)
        self._v = np.zeros(net.param_count)

    def step(self, grads: MlpGradients) -> None:
        """Descend along grads."""
        g = grads.flat()
        self.t += 1
        self._m = self.beta1 * self._m + (1 - self.beta1) * g
        self._v = self.beta2 * self._v + (1 - self.beta2) * g ** 2
        m_hat = self._m / (1 - self.beta1 ** self.t)
        v_hat = self._v / (1 - self.beta2 ** self.t)
        self.net.set_flat(self.net.get_flat() - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


@dataclass
class ReplayBuffer:
    """Ring buffer of (s, a, r, s_next, done) records."""

    capacity: int
    obs_dim: int
    action_dim: int
    seed: Optional[int] = 0
    size: int = 0
    _pos: int = 0
    _arrays: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValidationError(f"buffer capacity must be >= 1, got {self.capacity}")
        self._rng = make_rng(self.seed)
        self._arrays = {
            "s": np.zeros((self.capacity, self.obs_dim)),
            "a": np.zeros((self.capacity, self.action_dim)),
            "r": np.zeros(self.capacity),
            "s_next": np.zeros((self.capacity, self.obs_dim)),
            "done": np.zeros(self.capacity),
        }

    def __len__(self) -> int:
        return self.size

    def add(self, s: Any, a: Any, r: float, s_next: Any, done: bool) -> None:
        i = self._pos
        self._arrays["s"][i] = np.asarray(s, dtype=float).ravel()
        self._arrays["a"][i] = np.asarray(a, dtype=float).ravel()
        self._arrays["r"][i] = float(r)
        self._arrays["s_next"][i] = np.asarray(s_next, dtype=float).ravel()
        self._arrays["done"][i] = float(done)
        self._pos = (self._pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Tuple[np.ndarray, ...]:
        """Uniform batch (s, a, r, s_next, done) drawn with the buffer's generator."""
        if self.size == 0:
            raise ValidationError("cannot sample from an empty buffer")
        idx = self._rng.integers(0, self.size, size=batch_size)
        a = self._arrays
        return a["s"][idx], a["a"][idx], a["r"][idx], a["s_next"][idx], a["done"][idx]
