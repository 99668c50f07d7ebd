"""Differentiable layers with hand-written backward passes.

Everything runs in float64 on numpy arrays shaped (N, C, H, W) for
spatial layers and (N, D) for linear layers.  ``forward`` returns
``(output, cache)`` and ``backward(cache, grad_out)`` returns
``(grad_in, grad_params)`` where ``grad_params`` mirrors ``params``.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Input shape does not match a layer's declared signature."""


def _require(cond: bool, layer: str, expected: str, got) -> None:
    if not cond:
        raise ShapeError(f"layer '{layer}': expected {expected}, got shape {tuple(got)}")


def he_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """He-uniform init: U(-limit, limit) with limit = sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


class Layer:
    """Base layer: named, with a dict of parameters.

    ``no_decay`` lists parameter names exempt from weight decay (biases).
    ``frozen`` marks the layer's parameters as not trainable; it is
    consulted by the gradient checker and by parameter-group builders.
    """

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.no_decay: frozenset = frozenset()
        self.frozen = False

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        raise NotImplementedError

    def trainable_param_names(self):
        return [] if self.frozen else list(self.params)


class Conv2d(Layer):
    """k x k convolution, stride 1, zero padding, on (N, C, H, W) input.

    Runs as im2col + one GEMM per call; the column matrix is cached for
    the weight gradient.
    """

    def __init__(self, name, in_channels, out_channels, ksize, padding, rng):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.ksize = ksize
        self.padding = padding
        fan_in = in_channels * ksize * ksize
        self.params = {
            "W": he_uniform(rng, fan_in, (out_channels, in_channels, ksize, ksize)),
            "b": np.zeros(out_channels),
        }
        self.no_decay = frozenset({"b"})

    def _weight_matrix(self) -> np.ndarray:
        # (O, C, k, k) -> (O, k*k*C) matching the im2col row layout
        w = self.params["W"]
        return w.transpose(0, 2, 3, 1).reshape(self.out_channels, -1)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        _require(x.ndim == 4 and x.shape[1] == self.in_channels,
                 self.name, f"(N, {self.in_channels}, H, W)", x.shape)
        k, p, c = self.ksize, self.padding, self.in_channels
        n, _, h, w = x.shape
        ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
        _require(ho >= 1 and wo >= 1, self.name, "input bigger than kernel", x.shape)
        if k == 1:
            cols = np.ascontiguousarray(x).reshape(n, c, ho * wo)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
            cols = np.empty((n, k * k, c, ho, wo))
            for ki in range(k):
                for kj in range(k):
                    cols[:, ki * k + kj] = xp[:, :, ki:ki + ho, kj:kj + wo]
            cols = cols.reshape(n, k * k * c, ho * wo)
        out = np.matmul(self._weight_matrix()[None], cols).reshape(
            n, self.out_channels, ho, wo)
        out += self.params["b"][None, :, None, None]
        return out, (cols, x.shape)

    def backward(self, cache, grad_out):
        cols, x_shape = cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        k, p, c = self.ksize, self.padding, self.in_channels
        n, _, h, w = x_shape
        ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
        _require(grad_out.shape == (n, self.out_channels, ho, wo),
                 self.name, f"grad of shape {(n, self.out_channels, ho, wo)}", grad_out.shape)
        go = np.ascontiguousarray(grad_out).reshape(n, self.out_channels, ho * wo)
        # batched (O, HW) @ (HW, kkC), summed over the batch
        grad_wmat = np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0)
        grad_w = grad_wmat.reshape(self.out_channels, k, k, c).transpose(0, 3, 1, 2).copy()
        grad_b = grad_out.sum(axis=(0, 2, 3))

        grad_cols = np.matmul(self._weight_matrix().T[None], go)
        if k == 1:
            return grad_cols.reshape(n, c, h, w), {"W": grad_w, "b": grad_b}
        grad_cols = grad_cols.reshape(n, k * k, c, ho, wo)
        grad_xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for ki in range(k):
            for kj in range(k):
                grad_xp[:, :, ki:ki + ho, kj:kj + wo] += grad_cols[:, ki * k + kj]
        grad_x = grad_xp[:, :, p:p + h, p:p + w] if p else grad_xp
        return grad_x, {"W": grad_w, "b": grad_b}


class ReLU(Layer):
    def __init__(self, name="relu"):
        super().__init__(name)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        y = np.maximum(x, 0.0)
        return y, y  # backward only needs the activation sign

    def backward(self, cache, grad_out):
        y = cache
        _require(y.shape == np.shape(grad_out), self.name, f"grad of shape {y.shape}",
                 np.shape(grad_out))
        return np.where(y > 0.0, grad_out, 0.0), {}


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; ties route gradient to the first cell
    in window order (0,0), (0,1), (1,0), (1,1)."""

    def __init__(self, name="pool"):
        super().__init__(name)

    @staticmethod
    def _views(x):
        return (x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2],
                x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2])

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        _require(x.ndim == 4, self.name, "(N, C, H, W)", x.shape)
        n, c, h, w = x.shape
        _require(h % 2 == 0 and w % 2 == 0, self.name, "even H and W", x.shape)
        a, b, cc, d = self._views(x)
        out = np.maximum(np.maximum(a, b), np.maximum(cc, d))
        return out, (x, out)

    def backward(self, cache, grad_out):
        x, out = cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        _require(grad_out.shape == out.shape, self.name, f"grad of shape {out.shape}",
                 grad_out.shape)
        grad_x = np.zeros_like(x)
        claimed = np.zeros(out.shape, dtype=bool)
        for view, slot in zip(self._views(x), self._views(grad_x)):
            hit = (view == out) & ~claimed
            slot[hit] = grad_out[hit]
            claimed |= hit
        return grad_x, {}


class Linear(Layer):
    """Affine layer on (N, D) input: y = x W + b with W of shape (D, O)."""

    def __init__(self, name, in_features, out_features, rng):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "W": he_uniform(rng, in_features, (in_features, out_features)),
            "b": np.zeros(out_features),
        }
        self.no_decay = frozenset({"b"})

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        _require(x.ndim == 2 and x.shape[1] == self.in_features,
                 self.name, f"(N, {self.in_features})", x.shape)
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, grad_out):
        x = cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        _require(grad_out.shape == (x.shape[0], self.out_features),
                 self.name, f"({x.shape[0]}, {self.out_features})", grad_out.shape)
        grad_w = x.T @ grad_out
        grad_b = grad_out.sum(axis=0)
        grad_x = grad_out @ self.params["W"].T
        return grad_x, {"W": grad_w, "b": grad_b}


class Sequential(Layer):
    """Chain of layers; parameters stay owned by the children."""

    def __init__(self, name, layers):
        super().__init__(name)
        self.layers = list(layers)

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, grad_out):
        grads: dict[str, dict] = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad_out, layer_grads = layer.backward(cache, grad_out)
            if layer_grads:
                grads[layer.name] = layer_grads
        return grad_out, grads

    def named_params(self):
        out = {}
        for layer in self.layers:
            for pname, arr in layer.params.items():
                out[f"{layer.name}/{pname}"] = arr
        return out
