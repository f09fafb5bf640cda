"""Dense numpy layers with hand-written backward passes.

Tensors are plain ``np.ndarray`` in (batch, channel, height, width) layout.
Every layer keeps what its backward pass needs from the latest forward call,
so a layer instance serves one forward/backward pair at a time.
"""
from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    pass


# --- functional kernels ------------------------------------------------------

def conv2d_output_shape(h: int, w: int, k: int, padding: int) -> tuple[int, int]:
    return h + 2 * padding - k + 1, w + 2 * padding - k + 1


def _im2col(x: np.ndarray, k: int, out: np.ndarray | None = None) -> np.ndarray:
    """Patches of an already padded batch as (B, C*k*k, Ho*Wo).

    Built from k*k shifted slices, which keeps contiguous rows and is much
    cheaper than transposing a sliding-window view. The per-sample layout lets
    a batched matmul produce NCHW output directly.
    """
    B, C, H, W = x.shape
    Ho, Wo = H - k + 1, W - k + 1
    if out is None:
        out = np.empty((B, C * k * k, Ho * Wo), dtype=x.dtype)
    view = out.reshape(B, C, k, k, Ho, Wo)
    for i in range(k):
        for j in range(k):
            view[:, :, i, j] = x[:, :, i:i + Ho, j:j + Wo]
    return out


# patches for about this many bytes are built at a time so they stay in cache
_CHUNK_BYTES = 1 << 20


def _chunk_size(x: np.ndarray, k: int, padding: int) -> int:
    B, C, H, W = x.shape
    Ho, Wo = conv2d_output_shape(H, W, k, padding)
    return int(min(B, max(1, _CHUNK_BYTES // (C * k * k * Ho * Wo * x.itemsize))))


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, padding: int) -> np.ndarray:
    """Stride-1 cross-correlation of a (B, C, H, W) batch."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    k = weight.shape[2]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise ShapeError(f"conv2d: input {x.shape[2:]} smaller than kernel {k} with padding {padding}")
    B, C = x.shape[:2]
    O = weight.shape[0]
    Ho, Wo = conv2d_output_shape(x.shape[2], x.shape[3], k, padding)
    dtype = np.result_type(x, weight)
    w2 = weight.reshape(O, -1).astype(dtype, copy=False)
    xp = _pad(x.astype(dtype, copy=False), padding)
    step = _chunk_size(xp, k, 0)
    cols = np.empty((step, C * k * k, Ho * Wo), dtype=dtype)
    out = np.empty((B, O, Ho * Wo), dtype=dtype)
    for a in range(0, B, step):
        b = min(B, a + step)
        c = _im2col(xp[a:b], k, cols[:b - a])
        np.matmul(w2, c, out=out[a:b])
    out += bias[:, None]
    return out.reshape(B, O, Ho, Wo)


def conv2d_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray, padding: int):
    """Gradients w.r.t. input, weight and bias."""
    B, C, H, W = x.shape
    O, _, k, _ = weight.shape
    Ho, Wo = conv2d_output_shape(H, W, k, padding)
    dtype = np.result_type(dout, x, weight)
    w2 = weight.reshape(O, -1).astype(dtype, copy=False)
    dflat = np.ascontiguousarray(dout, dtype=dtype).reshape(B, O, Ho * Wo)
    xp = _pad(x.astype(dtype, copy=False), padding)
    step = _chunk_size(xp, k, 0)
    cols = np.empty((step, C * k * k, Ho * Wo), dtype=dtype)
    dcols = np.empty_like(cols)
    dw = np.empty((step, O, C * k * k), dtype=dtype)
    dweight = np.zeros((O, C * k * k), dtype=dtype)
    dxp = np.zeros(xp.shape, dtype=dtype)
    for a in range(0, B, step):
        b = min(B, a + step)
        n = b - a
        c = _im2col(xp[a:b], k, cols[:n])
        np.matmul(dflat[a:b], c.transpose(0, 2, 1), out=dw[:n])
        dweight += dw[:n].sum(axis=0)
        np.matmul(w2.T, dflat[a:b], out=dcols[:n])
        grad = dcols[:n].reshape(n, C, k, k, Ho, Wo)
        for i in range(k):
            for j in range(k):
                dxp[a:b, :, i:i + Ho, j:j + Wo] += grad[:, :, i, j]
    dx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
    return dx, dweight.reshape(weight.shape), dflat.sum(axis=(0, 2))


def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, training: bool,
                        eps: float = 1e-5, momentum: float = 0.1):
    """Per-channel batch normalisation; updates running stats in place when training.

    Returns the output and a cache for :func:`batchnorm2d_backward`.
    """
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if x.shape[0] < 2:
            raise ShapeError("batchnorm2d needs a batch of at least 2 in training mode")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, training)


def batchnorm2d_backward(dout, gamma, cache):
    xhat, inv_std, training = cache
    dgamma = np.sum(dout * xhat, axis=(0, 2, 3))
    dbeta = np.sum(dout, axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not training:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    dx = (dxhat - mean_d - xhat * mean_dx) * inv_std[None, :, None, None]
    return dx, dgamma, dbeta


def pool_regions(size: int, out: int) -> list[tuple[int, int]]:
    """Adaptive pooling bins [floor(i*size/out), ceil((i+1)*size/out))."""
    return [(i * size // out, -(-(i + 1) * size // out)) for i in range(out)]


def adaptive_avg_pool2d(x: np.ndarray, out: tuple[int, int] = (4, 4)) -> np.ndarray:
    H, W = x.shape[-2:]
    oh, ow = out
    if H < oh or W < ow:
        raise ShapeError(f"adaptive pool: input {H}x{W} smaller than output {oh}x{ow}")
    rows, cols = pool_regions(H, oh), pool_regions(W, ow)
    y = np.empty(x.shape[:-2] + (oh, ow), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            y[..., i, j] = x[..., r0:r1, c0:c1].mean(axis=(-2, -1))
    return y


def adaptive_avg_pool2d_backward(dout: np.ndarray, in_shape) -> np.ndarray:
    H, W = in_shape[-2:]
    oh, ow = dout.shape[-2:]
    dx = np.zeros(in_shape, dtype=dout.dtype)
    for i, (r0, r1) in enumerate(pool_regions(H, oh)):
        for j, (c0, c1) in enumerate(pool_regions(W, ow)):
            dx[..., r0:r1, c0:c1] += dout[..., i, j][..., None, None] / ((r1 - r0) * (c1 - c0))
    return dx


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    return x @ weight.T + bias


def dropout_forward(x: np.ndarray, p: float, training: bool, rng: np.random.Generator):
    """Inverted dropout. Returns the output and the scaled keep-mask (None in eval)."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x, None
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype)
    return x * mask, mask


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred)
    if not np.issubdtype(pred.dtype, np.floating):
        pred = pred.astype(np.float64)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


# --- layer objects -----------------------------------------------------------

class Layer:
    kind = "layer"
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params, self.grads = {}, {}

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, c_in: int, c_out: int, kernel: int, padding: int = 0,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        rng = rng or np.random.default_rng()
        bound = 1.0 / math.sqrt(c_in * kernel * kernel)
        self.padding = padding
        self.params["weight"] = _uniform(rng, bound, (c_out, c_in, kernel, kernel), dtype)
        self.params["bias"] = _uniform(rng, bound, (c_out,), dtype)

    def forward(self, x, training):
        self.x = x
        return conv2d_forward(x, self.params["weight"], self.params["bias"], self.padding)

    def backward(self, dout):
        dx, self.grads["weight"], self.grads["bias"] = conv2d_backward(
            dout, self.x, self.params["weight"], self.padding)
        return dx

    def output_shape(self, in_shape):
        c, h, w = in_shape
        k = self.params["weight"].shape[2]
        return (self.params["weight"].shape[0], *conv2d_output_shape(h, w, k, self.padding))


class BatchNorm2d(Layer):
    kind = "batchnorm2d"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, training):
        out, self.cache = batchnorm2d_forward(x, self.params["gamma"], self.params["beta"],
                                              self.running_mean, self.running_var, training,
                                              self.eps, self.momentum)
        return out

    def backward(self, dout):
        dx, self.grads["gamma"], self.grads["beta"] = batchnorm2d_backward(
            dout, self.params["gamma"], self.cache)
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training):
        self.x = x
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * (self.x > 0)


class AdaptiveAvgPool2d(Layer):
    kind = "adaptive_avg_pool2d"

    def __init__(self, out: tuple[int, int] = (4, 4)):
        super().__init__()
        self.out = out

    def forward(self, x, training):
        self.in_shape = x.shape
        return adaptive_avg_pool2d(x, self.out)

    def backward(self, dout):
        return adaptive_avg_pool2d_backward(dout, self.in_shape)

    def output_shape(self, in_shape):
        if in_shape[-2] < self.out[0] or in_shape[-1] < self.out[1]:
            raise ShapeError("adaptive pool input smaller than output")
        return (in_shape[0], *self.out)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training):
        self.in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.in_shape)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Linear(Layer):
    kind = "linear"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        super().__init__()
        rng = rng or np.random.default_rng()
        bound = 1.0 / math.sqrt(n_in)
        self.params["weight"] = _uniform(rng, bound, (n_out, n_in), dtype)
        self.params["bias"] = _uniform(rng, bound, (n_out,), dtype)

    def forward(self, x, training):
        self.x = x
        return linear_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout):
        self.grads["weight"] = dout.T @ self.x
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"]

    def output_shape(self, in_shape):
        if in_shape != (self.params["weight"].shape[1],):
            raise ShapeError(f"linear expects ({self.params['weight'].shape[1]},), got {in_shape}")
        return (self.params["weight"].shape[0],)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p: float = 0.3, rng: np.random.Generator | None = None):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = rng or np.random.default_rng()
        self.enabled = True

    def forward(self, x, training):
        out, self.mask = dropout_forward(x, self.p, training and self.enabled, self.rng)
        return out

    def backward(self, dout):
        return dout if self.mask is None else dout * self.mask


class Sequential:
    """Fixed layer stack with a single backward pass."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{layer.kind}.{name}", layer, name

    def parameter_count(self) -> int:
        return sum(layer.params[name].size for _, layer, name in self.named_parameters())

    def shapes(self, in_shape: tuple[int, ...]) -> list[tuple[str, tuple[int, ...]]]:
        """Per-layer output shapes from the shape algebra alone (no data)."""
        out = []
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
            out.append((layer.kind, in_shape))
        return out
