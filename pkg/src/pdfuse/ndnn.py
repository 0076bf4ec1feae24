"""Minimal float64 neural-network primitives with hand-written gradients.

Layers keep their parameters in ``self.params`` and accumulate gradients into
``self.grads``. ``forward`` returns ``(output, cache)`` and ``backward`` takes
``(grad_output, cache)`` and returns the gradient with respect to the input,
so a model is just an explicit chain of calls. Everything runs in float64;
analytic gradients are expected to agree with central finite differences to
high precision, and ``finite_difference_gradient`` below is the checker the
test-suite uses for that.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ShapeError


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0


class Dense(Layer):
    """Affine map on the last axis: ``y = x @ weight + bias``."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        scale = np.sqrt(2.0 / in_dim)
        self.add_param("weight", rng.normal(0.0, scale, size=(in_dim, out_dim)))
        self.add_param("bias", np.zeros(out_dim))

    def forward(self, x):
        return x @ self.params["weight"] + self.params["bias"], x

    def backward(self, grad_out, cache):
        x = cache
        self.grads["weight"] += x.T @ grad_out
        self.grads["bias"] += grad_out.sum(axis=0)
        return grad_out @ self.params["weight"].T


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad_out, cache):
        return grad_out * cache


class Conv2d(Layer):
    """3x3-style same-padding convolution on (B, C, H, W), stride 1."""

    def __init__(self, in_channels, out_channels, kernel_size, rng):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ShapeError(f"kernel_size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.pad = kernel_size // 2
        fan_in = in_channels * kernel_size * kernel_size
        scale = np.sqrt(2.0 / fan_in)
        self.add_param(
            "weight",
            rng.normal(0.0, scale, size=(out_channels, in_channels, kernel_size, kernel_size)),
        )
        self.add_param("bias", np.zeros(out_channels))

    def forward(self, x):
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = np.lib.stride_tricks.sliding_window_view(
            xp, (self.kernel_size, self.kernel_size), axis=(2, 3)
        )
        y = np.einsum("bchwij,ocij->bohw", windows, self.params["weight"], optimize=True)
        y += self.params["bias"][None, :, None, None]
        return y, xp

    def backward(self, grad_out, cache):
        xp = cache
        k, p = self.kernel_size, self.pad
        H, W = grad_out.shape[2], grad_out.shape[3]
        windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        self.grads["weight"] += np.einsum("bchwij,bohw->ocij", windows, grad_out, optimize=True)
        self.grads["bias"] += grad_out.sum(axis=(0, 2, 3))
        gxp = np.zeros_like(xp)
        weight = self.params["weight"]
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + H, j : j + W] += np.einsum(
                    "bohw,oc->bchw", grad_out, weight[:, :, i, j], optimize=True
                )
        return gxp[:, :, p : p + H, p : p + W]


class AvgPool2d(Layer):
    """Non-overlapping average pooling on (B, C, H, W)."""

    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    def forward(self, x):
        f = self.factor
        B, C, H, W = x.shape
        if H % f or W % f:
            raise ShapeError(f"spatial dims {(H, W)} not divisible by pool factor {f}")
        y = x.reshape(B, C, H // f, f, W // f, f).mean(axis=(3, 5))
        return y, x.shape

    def backward(self, grad_out, cache):
        f = self.factor
        g = np.repeat(np.repeat(grad_out, f, axis=2), f, axis=3)
        return g / (f * f)


class GlobalAvgPool(Layer):
    """Mean over all axes after the channel axis: (B, C, ...) -> (B, C)."""

    def forward(self, x):
        axes = tuple(range(2, x.ndim))
        return x.mean(axis=axes), x.shape

    def backward(self, grad_out, cache):
        shape = cache
        count = int(np.prod(shape[2:]))
        expanded = grad_out.reshape(shape[:2] + (1,) * (len(shape) - 2))
        return np.broadcast_to(expanded, shape) / count


class SpatialGraphConv(Layer):
    """Graph convolution over joint partitions on (B, C, T, V).

    ``out[v] = sum_p sum_w A_p[v, w] x[w] @ W_p`` with one channel-mixing
    matrix per partition, matching the partitioned-adjacency formulation.
    """

    def __init__(self, partitions: np.ndarray, in_channels, out_channels, rng):
        super().__init__()
        self.partitions = np.asarray(partitions, dtype=np.float64)
        if self.partitions.ndim != 3 or self.partitions.shape[1] != self.partitions.shape[2]:
            raise ShapeError(f"partitions must be (P, V, V), got {self.partitions.shape}")
        P = self.partitions.shape[0]
        scale = np.sqrt(2.0 / (in_channels * P))
        self.add_param("weight", rng.normal(0.0, scale, size=(P, in_channels, out_channels)))
        self.add_param("bias", np.zeros(out_channels))

    def forward(self, x):
        agg = np.einsum("pvw,bctw->pbctv", self.partitions, x, optimize=True)
        y = np.einsum("pbctv,pco->botv", agg, self.params["weight"], optimize=True)
        y += self.params["bias"][None, :, None, None]
        return y, agg

    def backward(self, grad_out, cache):
        agg = cache
        self.grads["weight"] += np.einsum("pbctv,botv->pco", agg, grad_out, optimize=True)
        self.grads["bias"] += grad_out.sum(axis=(0, 2, 3))
        gz = np.einsum("botv,pco->pbctv", grad_out, self.params["weight"], optimize=True)
        return np.einsum("pvw,pbctv->bctw", self.partitions, gz, optimize=True)


class TemporalConv(Layer):
    """1-D convolution along the time axis of (B, C, T, V), same padding."""

    def __init__(self, in_channels, out_channels, kernel_size, dilation, rng):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ShapeError(f"kernel_size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.pad = (kernel_size // 2) * dilation
        fan_in = in_channels * kernel_size
        scale = np.sqrt(2.0 / fan_in)
        self.add_param("weight", rng.normal(0.0, scale, size=(kernel_size, in_channels, out_channels)))
        self.add_param("bias", np.zeros(out_channels))

    def forward(self, x):
        T = x.shape[2]
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (0, 0))) if p else x
        weight = self.params["weight"]
        y = None
        for i in range(self.kernel_size):
            off = i * self.dilation
            term = np.einsum("bctv,co->botv", xp[:, :, off : off + T, :], weight[i], optimize=True)
            y = term if y is None else y + term
        y += self.params["bias"][None, :, None, None]
        return y, (xp, T)

    def backward(self, grad_out, cache):
        xp, T = cache
        p = self.pad
        weight = self.params["weight"]
        gxp = np.zeros_like(xp)
        for i in range(self.kernel_size):
            off = i * self.dilation
            sl = xp[:, :, off : off + T, :]
            self.grads["weight"][i] += np.einsum("bctv,botv->co", sl, grad_out, optimize=True)
            gxp[:, :, off : off + T, :] += np.einsum(
                "botv,co->bctv", grad_out, weight[i], optimize=True
            )
        self.grads["bias"] += grad_out.sum(axis=(0, 2, 3))
        return gxp[:, :, p : p + T, :] if p else gxp


class TemporalMaxPool(Layer):
    """Sliding max along time on (B, C, T, V), stride 1, same padding.

    Ties route the gradient to the earliest maximal position, which keeps the
    backward pass deterministic.
    """

    def __init__(self, window: int):
        super().__init__()
        if window % 2 != 1:
            raise ShapeError(f"window must be odd, got {window}")
        self.window = window
        self.pad = window // 2

    def forward(self, x):
        T = x.shape[2]
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (0, 0)), constant_values=-np.inf)
        stacked = np.stack([xp[:, :, i : i + T, :] for i in range(self.window)])
        argmax = np.argmax(stacked, axis=0)
        y = np.take_along_axis(stacked, argmax[None], axis=0)[0]
        return y, (argmax, x.shape)

    def backward(self, grad_out, cache):
        argmax, shape = cache
        p = self.pad
        T = shape[2]
        gxp = np.zeros((shape[0], shape[1], T + 2 * p, shape[3]))
        for i in range(self.window):
            mask = argmax == i
            target = gxp[:, :, i : i + T, :]
            target[mask] += grad_out[mask]
        return gxp[:, :, p : p + T, :]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, grad_logits)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    loss = -log_probs[np.arange(n), labels].mean()
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class Adam:
    """Standard Adam over a list of (layer, param_name) entries."""

    def __init__(self, entries, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.entries = list(entries)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(layer.params[name]) for layer, name in self.entries]
        self.v = [np.zeros_like(layer.params[name]) for layer, name in self.entries]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (layer, name) in enumerate(self.entries):
            g = layer.grads[name]
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            layer.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def param_entries(layers) -> list:
    entries = []
    for layer in layers:
        for name in layer.params:
            entries.append((layer, name))
    return entries


def zero_all_grads(layers) -> None:
    for layer in layers:
        layer.zero_grads()


def params_checksum(state: dict[str, np.ndarray]) -> str:
    """SHA-256 over parameter names and exact bytes, for frozen-weights checks."""
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        arr = np.ascontiguousarray(state[name], dtype=np.float64)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def finite_difference_gradient(loss_fn, array: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` with respect to ``array``.

    ``array`` is perturbed in place entry by entry and restored, so
    ``loss_fn`` must read it afresh on every call.
    """
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lo_plus = loss_fn()
        flat[i] = orig - h
        lo_minus = loss_fn()
        flat[i] = orig
        gflat[i] = (lo_plus - lo_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm of the difference over the sum of norms, guarded near zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b) + 1e-8
    return float(np.linalg.norm(a - b) / denom)
