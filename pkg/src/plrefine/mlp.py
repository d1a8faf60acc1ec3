"""Small dense multi-layer perceptron with hand-rolled reverse-mode gradients.

numpy only, no framework: the offset heads are tiny (tens of thousands of
parameters), training must be bit-reproducible given a seed, and the analytic
gradients are verified against central finite differences in the test suite.

Hidden layers use a leaky rectifier (negative slope 0.01); the output layer
is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAK = 0.01


@dataclass
class Mlp:
    """weights[l] has shape (fan_out, fan_in); layer l maps x -> W x + b."""

    weights: list
    biases: list
    leak: float = LEAK

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        if not self.weights:
            raise ValueError("at least one layer is required")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.asarray(W, dtype=float)
            b = np.asarray(b, dtype=float)
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {l}: bias shape {b.shape} vs weight {W.shape}")
            if l > 0 and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(
                    f"layer {l} expects {W.shape[1]} inputs but layer {l - 1} "
                    f"produces {self.weights[l - 1].shape[0]}"
                )
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")
            self.weights[l] = W
            self.biases[l] = b

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[0]

    @staticmethod
    def initialized(sizes, rng: np.random.Generator, scale: float = 0.1) -> "Mlp":
        """Uniform +-sqrt(6/(fan_in+fan_out)) init, damped by ``scale``.

        The damping keeps initial outputs near zero so an untrained model is
        close to the identity refinement.
        """
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out)) * scale
            weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return Mlp(weights=weights, biases=biases)

    @staticmethod
    def zeros(sizes) -> "Mlp":
        """All-zero parameters: the forward pass returns exactly 0."""
        weights = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(o) for o in sizes[1:]]
        return Mlp(weights=weights, biases=biases)

    def parameters(self):
        """Flat list of parameter arrays (weights then bias per layer)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def _check_input(self, x: np.ndarray):
        if x.shape[-1] != self.n_inputs:
            raise ValueError(f"input width {x.shape[-1]} != expected {self.n_inputs}")

    def forward(self, x):
        """Evaluate the network on a (in,) vector or (n, in) batch."""
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x):
        """Forward pass keeping per-layer activations for backward()."""
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        a = arr.reshape(1, -1) if single else arr
        self._check_input(a)
        acts = [a]  # input to each layer
        pre = []  # pre-activation of each layer
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            pre.append(z)
            a = z if l == last else np.where(z >= 0, z, self.leak * z)
            if l != last:
                acts.append(a)
        y = a[0] if single else a
        return y, (acts, pre, single)

    def backward(self, cache, d_out):
        """Reverse-mode gradients for a cached forward pass.

        ``d_out`` is dLoss/dOutput matching the forward output shape. Returns
        (weight_grads, bias_grads, d_input).
        """
        acts, pre, single = cache
        g = np.asarray(d_out, dtype=float)
        if single:
            g = g.reshape(1, -1)
        if g.shape != pre[-1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output {pre[-1].shape}")
        dws = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        dz = g
        for l in range(len(self.weights) - 1, -1, -1):
            dws[l] = dz.T @ acts[l]
            dbs[l] = dz.sum(axis=0)
            dx = dz @ self.weights[l]
            if l > 0:
                slope = np.where(pre[l - 1] >= 0, 1.0, self.leak)
                dz = dx * slope
            else:
                dz = dx
        d_input = dz[0] if single else dz
        return dws, dbs, d_input


@dataclass
class Adam:
    """Adaptive-moment optimizer over a fixed list of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _m: list = field(default_factory=list)
    _v: list = field(default_factory=list)
    _t: int = 0

    def step(self, params, grads):
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        b1t = 1.0 - self.beta1**self._t
        b2t = 1.0 - self.beta2**self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class Sgd:
    """Plain constant-rate gradient descent."""

    lr: float = 1e-3

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def clip_gradients(grads, max_norm: float):
    """Scale the whole gradient list so its global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads
