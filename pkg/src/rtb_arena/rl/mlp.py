"""Plain-numpy multilayer perceptron with rectifier hidden units, exact
backpropagation, and an adaptive-moment optimizer.

Forward passes are deterministic; `backward` returns both parameter
gradients and the input gradient (the latter feeds the actor update in the
twin-critic rule).
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError, NumericalError


class Mlp:
    """Fully connected net: rectifier hidden layers, linear or tanh output."""

    def __init__(self, layer_sizes: tuple[int, ...], rng: np.random.Generator,
                 output: str = "linear", final_scale: float | None = None):
        """`final_scale` shrinks the last layer's init to a uniform band,
        so the net starts near zero output (neutral policy / value)."""
        if len(layer_sizes) < 2:
            raise DataError("need at least input and output sizes")
        if output not in ("linear", "tanh"):
            raise DataError(f"unknown output activation {output!r}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.output = output
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(layer_sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            if i == last and final_scale is not None:
                self.weights.append(rng.uniform(-final_scale, final_scale,
                                                size=(fan_in, fan_out)))
            else:
                scale = np.sqrt(2.0 / fan_in)
                self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass returning (output, cache-for-backward)."""
        arr = np.asarray(x, dtype=np.float64)
        squeeze = arr.ndim == 1
        if squeeze:
            arr = arr[None, :]
        if arr.shape[1] != self.in_dim:
            raise DataError(f"input width {arr.shape[1]} != expected {self.in_dim}")
        activations = [arr]
        pre: list[np.ndarray] = []
        h = arr
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output == "tanh":
                h = np.tanh(z)
            else:
                h = z
            activations.append(h)
        out = h[0] if squeeze else h
        return out, (activations, pre, squeeze)

    def backward(self, cache, grad_out: np.ndarray):
        """Backpropagate an upstream gradient.

        Returns (param_grads, input_grad) where param_grads is a list of
        (dW, db) matching the layer order.
        """
        activations, pre, squeeze = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if squeeze and g.ndim == 1:
            g = g[None, :]
        last = len(self.weights) - 1
        if self.output == "tanh":
            g = g * (1.0 - activations[-1] ** 2)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)  # type: ignore
        for i in range(last, -1, -1):
            if i < last:
                g = g * (pre[i] > 0.0)
            grads[i] = (activations[i].T @ g, g.sum(axis=0))
            g = g @ self.weights[i].T
        return grads, (g[0] if squeeze else g)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_sizes = self.layer_sizes
        clone.output = self.output
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def load_from(self, other: "Mlp") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine[...] = theirs

    def params_dict(self, prefix: str) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}_w{i}"] = w
            out[f"{prefix}_b{i}"] = b
        return out

    def load_params_dict(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i][...] = arrays[f"{prefix}_w{i}"]
            self.biases[i][...] = arrays[f"{prefix}_b{i}"]


class Adam:
    """Adaptive-moment optimizer over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if not np.isfinite(g).all():
                raise NumericalError("non-finite gradient in optimizer step")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    out = []
    for dw, db in grads:
        out.append(dw)
        out.append(db)
    return out


def mlp_gradient_check(net: Mlp, x: np.ndarray, target: np.ndarray,
                       epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    of the squared-error loss 0.5 * ||net(x) - target||^2."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))

    def loss() -> float:
        y = net.forward(x)
        return 0.5 * float(((y - target) ** 2).sum())

    y, cache = net.forward_cached(x)
    grads, _ = net.backward(cache, y - target)
    worst = 0.0
    for layer, (dw, db) in enumerate(grads):
        for kind, param, grad in (("w", net.weights[layer], dw),
                                  ("b", net.biases[layer], db)):
            flat_p = param.reshape(-1)
            flat_g = grad.reshape(-1)
            for j in range(flat_p.size):
                orig = flat_p[j]
                flat_p[j] = orig + epsilon
                up = loss()
                flat_p[j] = orig - epsilon
                down = loss()
                flat_p[j] = orig
                numeric = (up - down) / (2.0 * epsilon)
                # 1e-6 floor: below it, central differences are dominated by
                # cancellation noise rather than the analytic gradient.
                denom = max(abs(numeric), abs(flat_g[j]), 1e-6)
                worst = max(worst, abs(flat_g[j] - numeric) / denom)
    return worst
