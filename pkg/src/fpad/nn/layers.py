"""Layer kinds with explicit paired forward/backward.

Shape algebra (NCHW throughout): Conv2d out = (H + 2p - kh)/s + 1 per axis;
AvgPool2d requires exact divisibility by the window. Every backward consumes
the cache left by the matching forward and raises LayerStateError without
one. All math runs in the layer's dtype (float32 by default, float64 for
finite-difference verification).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import LayerStateError, ShapeError
from .tensor import Tensor


class Layer:
    """Base layer: parameter/buffer registry plus the cache-pairing guard."""

    def __init__(self, name: str = "", dtype=np.float32):
        self.name = name or type(self).__name__
        self.dtype = np.dtype(dtype)
        self.training = True
        self._cache: Optional[dict] = None

    def params(self) -> list[Tensor]:
        return []

    def buffers(self) -> list[Tensor]:
        return []

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self) -> dict:
        if self._cache is None:
            raise LayerStateError(f"{self.name}: backward called without a preceding forward")
        cache = self._cache
        self._cache = None
        return cache

    def _require_4d(self, x: np.ndarray) -> None:
        if x.ndim != 4:
            raise ShapeError(self.name, f"expected NCHW input, got shape {x.shape}")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


def _kaiming_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Layer):
    """2-D convolution (cross-correlation), bias-free, odd square kernels.

    Lowers to a single GEMM per batch via im2col; backward reuses the cached
    column matrix and scatters the column gradient back with the reverse
    slicing (col2im).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        rng: Optional[np.random.Generator] = None,
        name: str = "",
        dtype=np.float32,
    ):
        super().__init__(name or f"conv{kernel_size}x{kernel_size}", dtype)
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ShapeError(self.name, f"kernel size must be odd and positive, got {kernel_size}")
        if stride < 1:
            raise ShapeError(self.name, f"stride must be >= 1, got {stride}")
        if padding < 0:
            raise ShapeError(self.name, f"padding must be >= 0, got {padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Tensor(
            _kaiming_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, self.dtype),
            name=f"{self.name}.weight",
        )

    def params(self) -> list[Tensor]:
        return [self.weight]

    def _out_dim(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel_size) // self.stride + 1

    def _im2col(self, xp: np.ndarray, oh: int, ow: int) -> np.ndarray:
        n, c = xp.shape[:2]
        k, s = self.kernel_size, self.stride
        cols = np.empty((n, c, k, k, oh, ow), dtype=self.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
        return cols.reshape(n, c * k * k, oh * ow)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._require_4d(x)
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(self.name, f"expected {self.in_channels} input channels, got {c}")
        oh, ow = self._out_dim(h), self._out_dim(w)
        if oh < 1 or ow < 1:
            raise ShapeError(self.name, f"input {h}x{w} too small for kernel {self.kernel_size}")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = self._im2col(xp, oh, ow)
        w2 = self.weight.data.reshape(self.out_channels, -1)
        out = np.matmul(w2, cols)
        self._cache = {"cols": cols, "in_shape": x.shape, "out_hw": (oh, ow)}
        return out.reshape(n, self.out_channels, oh, ow)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cache = self._take_cache()
        n, c, h, w = cache["in_shape"]
        oh, ow = cache["out_hw"]
        if grad_out.shape != (n, self.out_channels, oh, ow):
            raise ShapeError(
                self.name,
                f"upstream grad {grad_out.shape} does not match output {(n, self.out_channels, oh, ow)}",
            )
        cols = cache["cols"]
        g2 = grad_out.reshape(n, self.out_channels, oh * ow).astype(self.dtype, copy=False)
        grad_w = np.einsum("nol,nkl->ok", g2, cols, optimize=True)
        self.weight.add_grad(grad_w.reshape(self.weight.data.shape))
        w2 = self.weight.data.reshape(self.out_channels, -1)
        grad_cols = np.matmul(w2.T, g2)
        k, s, p = self.kernel_size, self.stride, self.padding
        gcols6 = grad_cols.reshape(n, c, k, k, oh, ow)
        gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=self.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += gcols6[:, :, i, j]
        return gxp[:, :, p : p + h, p : p + w] if p else gxp


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics (population variance) and
    folds them into the running estimates; eval mode applies the running
    statistics, making output independent of batch composition.
    """

    def __init__(
        self,
        num_features: int,
        eps: float = 1e-5,
        momentum: float = 0.1,
        name: str = "",
        dtype=np.float32,
    ):
        super().__init__(name or "bn", dtype)
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(num_features, dtype=self.dtype), name=f"{self.name}.gamma")
        self.beta = Tensor(np.zeros(num_features, dtype=self.dtype), name=f"{self.name}.beta")
        self.running_mean = Tensor(
            np.zeros(num_features, dtype=self.dtype), name=f"{self.name}.running_mean"
        )
        self.running_var = Tensor(
            np.ones(num_features, dtype=self.dtype), name=f"{self.name}.running_var"
        )

    def params(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[Tensor]:
        return [self.running_mean, self.running_var]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._require_4d(x)
        if x.shape[1] != self.num_features:
            raise ShapeError(self.name, f"expected {self.num_features} channels, got {x.shape[1]}")
        if self.training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean.data *= 1.0 - self.momentum
            self.running_mean.data += self.momentum * mean.astype(self.dtype)
            self.running_var.data *= 1.0 - self.momentum
            self.running_var.data += self.momentum * var.astype(self.dtype)
        else:
            mean = self.running_mean.data
            var = self.running_var.data
        ivar = 1.0 / np.sqrt(var + self.eps)
        xc = x - mean[None, :, None, None]
        xhat = xc * ivar[None, :, None, None]
        self._cache = {"xhat": xhat, "ivar": ivar, "xc": xc, "train_stats": self.training}
        return self.gamma.data[None, :, None, None] * xhat + self.beta.data[None, :, None, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cache = self._take_cache()
        xhat, ivar = cache["xhat"], cache["ivar"]
        if grad_out.shape != xhat.shape:
            raise ShapeError(self.name, f"upstream grad {grad_out.shape} != output {xhat.shape}")
        g = grad_out.astype(self.dtype, copy=False)
        self.gamma.add_grad((g * xhat).sum(axis=(0, 2, 3)))
        self.beta.add_grad(g.sum(axis=(0, 2, 3)))
        dxhat = g * self.gamma.data[None, :, None, None]
        if not cache["train_stats"]:
            return dxhat * ivar[None, :, None, None]
        n, _, h, w = xhat.shape
        m = n * h * w
        # dx = (ivar/m) * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
        sum_dxhat = dxhat.sum(axis=(0, 2, 3))
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
        dx = (
            dxhat * m
            - sum_dxhat[None, :, None, None]
            - xhat * sum_dxhat_xhat[None, :, None, None]
        ) * (ivar[None, :, None, None] / m)
        return dx


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        mask = x > 0
        self._cache = {"mask": mask}
        return np.where(mask, x, 0).astype(self.dtype, copy=False)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cache = self._take_cache()
        mask = cache["mask"]
        if grad_out.shape != mask.shape:
            raise ShapeError(self.name, f"upstream grad {grad_out.shape} != input {mask.shape}")
        return np.where(mask, grad_out, 0).astype(self.dtype, copy=False)


class Sigmoid(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x, dtype=self.dtype)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._cache = {"out": out}
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cache = self._take_cache()
        out = cache["out"]
        if grad_out.shape != out.shape:
            raise ShapeError(self.name, f"upstream grad {grad_out.shape} != output {out.shape}")
        return grad_out * out * (1.0 - out)


class AvgPool2d(Layer):
    """Non-overlapping k x k average pooling (stride = k)."""

    def __init__(self, k: int, name: str = "", dtype=np.float32):
        super().__init__(name or f"avgpool{k}", dtype)
        if k < 1:
            raise ShapeError(self.name, f"pool size must be >= 1, got {k}")
        self.k = k

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._require_4d(x)
        n, c, h, w = x.shape
        k = self.k
        if h % k or w % k:
            raise ShapeError(self.name, f"input {h}x{w} not divisible by pool size {k}")
        out = x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
        self._cache = {"in_shape": x.shape}
        return out.astype(self.dtype, copy=False)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cache = self._take_cache()
        n, c, h, w = cache["in_shape"]
        k = self.k
        if grad_out.shape != (n, c, h // k, w // k):
            raise ShapeError(
                self.name, f"upstream grad {grad_out.shape} != output {(n, c, h // k, w // k)}"
            )
        g = grad_out / (k * k)
        return np.repeat(np.repeat(g, k, axis=2), k, axis=3).astype(self.dtype, copy=False)


class GlobalAvgPool(Layer):
    """Spatial mean: (N, C, H, W) -> (N, C)."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._require_4d(x)
        self._cache = {"in_shape": x.shape}
        return x.mean(axis=(2, 3)).astype(self.dtype, copy=False)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cache = self._take_cache()
        n, c, h, w = cache["in_shape"]
        if grad_out.shape != (n, c):
            raise ShapeError(self.name, f"upstream grad {grad_out.shape} != output {(n, c)}")
        g = grad_out / (h * w)
        return np.broadcast_to(g[:, :, None, None], (n, c, h, w)).astype(self.dtype, copy=True)


class ChannelConcat(Layer):
    """Concatenate along the channel axis; backward splits the upstream
    gradient back into the addend shapes."""

    def forward(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        if not xs:
            raise ShapeError(self.name, "needs at least one input")
        first = xs[0]
        for x in xs:
            if x.ndim != 4:
                raise ShapeError(self.name, f"expected NCHW inputs, got shape {x.shape}")
            if x.shape[0] != first.shape[0] or x.shape[2:] != first.shape[2:]:
                raise ShapeError(
                    self.name,
                    f"inputs disagree outside the channel axis: {first.shape} vs {x.shape}",
                )
        self._cache = {"channels": [x.shape[1] for x in xs]}
        return np.concatenate(xs, axis=1)

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        cache = self._take_cache()
        channels = cache["channels"]
        total = sum(channels)
        if grad_out.ndim != 4 or grad_out.shape[1] != total:
            raise ShapeError(self.name, f"upstream grad {grad_out.shape} != {total} channels")
        splits = np.cumsum(channels[:-1])
        return [np.ascontiguousarray(g) for g in np.split(grad_out, splits, axis=1)]


class Linear(Layer):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
        name: str = "",
        dtype=np.float32,
    ):
        super().__init__(name or "linear", dtype)
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(
            _kaiming_normal(rng, (out_features, in_features), in_features, self.dtype),
            name=f"{self.name}.weight",
        )
        self.bias = (
            Tensor(np.zeros(out_features, dtype=self.dtype), name=f"{self.name}.bias")
            if bias
            else None
        )

    def params(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                self.name, f"expected (N, {self.in_features}) input, got shape {x.shape}"
            )
        self._cache = {"x": x}
        # One GEMM per sample, always the same shape: output for a given row
        # must not depend on how many other rows share the batch.
        out = np.matmul(x[:, None, :], self.weight.data.T)[:, 0, :]
        if self.bias is not None:
            out = out + self.bias.data
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cache = self._take_cache()
        x = cache["x"]
        if grad_out.shape != (x.shape[0], self.out_features):
            raise ShapeError(
                self.name,
                f"upstream grad {grad_out.shape} != output {(x.shape[0], self.out_features)}",
            )
        g = grad_out.astype(self.dtype, copy=False)
        self.weight.add_grad(g.T @ x)
        if self.bias is not None:
            self.bias.add_grad(g.sum(axis=0))
        return g @ self.weight.data
