"""Differentiable layers: attention, norms, convolutions, FFN, resizing.

Conventions: image tensors are (B, C, H, W); token tensors are (B, N, C)
with tokens flattened row-major from the spatial grid. LayerNorm epsilon is
1e-6, BatchNorm epsilon 1e-5 with momentum 0.1.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .module import Module
from .rng import RandomSource
from .tensor import Tensor, bilinear_resize, concat, conv2d, matmul, softmax

LN_EPS = 1e-6
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Linear(Module):
    """Affine map on the last axis; truncated-normal init, std 0.02."""

    def __init__(self, d_in: int, d_out: int, rng: RandomSource, bias: bool = True):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Tensor(rng.truncated_normal((d_in, d_out), std=0.02),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = LN_EPS):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.channels:
            raise ShapeError(
                f"LayerNorm over {self.channels} channels got {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        d = x - mu
        var = (d * d).mean(axis=-1, keepdims=True)
        xhat = d * ((var + self.eps) ** -0.5)
        return xhat * self.gamma + self.beta


class BatchNorm2d(Module):
    """Single-device batch norm over (B, H, W) per channel."""

    def __init__(self, channels: int, eps: float = BN_EPS,
                 momentum: float = BN_MOMENTUM):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels))
        self.running_var = Tensor(np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(
                f"BatchNorm2d({self.channels}) got input shape {x.shape}")
        B, C, H, W = x.shape
        if self.training:
            n = B * H * W
            if n <= 1:
                raise NumericalError(
                    "batch norm in training mode needs more than one value "
                    f"per channel (got batch {B}, spatial {H}x{W})")
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            d = x - mu
            var = (d * d).mean(axis=(0, 2, 3), keepdims=True)
            xhat = d * ((var + self.eps) ** -0.5)
            # running stats track the unbiased batch variance, outside the graph
            m = self.momentum
            self.running_mean.data[...] = (
                (1 - m) * self.running_mean.data + m * mu.data.reshape(C))
            self.running_var.data[...] = (
                (1 - m) * self.running_var.data
                + m * var.data.reshape(C) * n / (n - 1))
        else:
            mu = self.running_mean.data.reshape(1, C, 1, 1)
            inv = 1.0 / np.sqrt(self.running_var.data + self.eps)
            xhat = (x - mu) * inv.reshape(1, C, 1, 1)
        g = self.gamma.reshape(1, C, 1, 1)
        b = self.beta.reshape(1, C, 1, 1)
        return xhat * g + b


class Conv2d(Module):
    """Conv layer with Kaiming fan-out init."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: RandomSource,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 bias: bool = True, init_std: float | None = None):
        super().__init__()
        if c_in % groups or c_out % groups:
            raise ConfigError(
                f"groups={groups} must divide channels {c_in}->{c_out}")
        self.c_in = c_in
        self.c_out = c_out
        self.k = k
        self.stride = stride
        self.padding = padding
        self.groups = groups
        if init_std is None:
            fan_out = c_out * k * k // groups
            init_std = np.sqrt(2.0 / fan_out)
        self.weight = Tensor(
            rng.normal((c_out, c_in // groups, k, k), std=init_std),
            requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias,
                      stride=self.stride, padding=self.padding,
                      groups=self.groups)


class ConvBN(Module):
    """1x1 (or kxk) convolution followed by batch normalization."""

    def __init__(self, c_in: int, c_out: int, rng: RandomSource, k: int = 1,
                 stride: int = 1, padding: int = 0, relu: bool = False):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, k, rng, stride=stride, padding=padding)
        self.bn = BatchNorm2d(c_out)
        self.relu = relu

    def __call__(self, x: Tensor) -> Tensor:
        out = self.bn(self.conv(x))
        return out.relu() if self.relu else out


class MultiHeadAttention(Module):
    """Scaled dot-product attention over token tensors.

    The first forward argument supplies keys and values, the second the
    queries; output channel count always equals the query channel count so
    the caller's residual connection type-checks. ``embed_dim`` defaults to
    the query width and may be lowered independently.
    """

    def __init__(self, kv_dim: int, q_dim: int, rng: RandomSource,
                 heads: int = 1, embed_dim: int | None = None,
                 bias: bool = True):
        super().__init__()
        d = q_dim if embed_dim is None else embed_dim
        if d % heads != 0:
            raise ConfigError(f"embed dim {d} not divisible by {heads} heads")
        self.kv_dim = kv_dim
        self.q_dim = q_dim
        self.embed_dim = d
        self.heads = heads
        self.d_k = d // heads
        self.w_q = Linear(q_dim, d, rng.spawn(1), bias=bias)
        self.w_k = Linear(kv_dim, d, rng.spawn(2), bias=bias)
        self.w_v = Linear(kv_dim, d, rng.spawn(3), bias=bias)
        self.w_o = Linear(d, q_dim, rng.spawn(4), bias=bias)
        self.last_attention = None  # numpy copy of the latest attention weights

    def __call__(self, kv_src: Tensor, q_src: Tensor) -> Tensor:
        squeeze = q_src.ndim == 2
        if squeeze:
            kv_src = kv_src.reshape(1, *kv_src.shape)
            q_src = q_src.reshape(1, *q_src.shape)
        if kv_src.shape[-1] != self.kv_dim or q_src.shape[-1] != self.q_dim:
            raise ShapeError(
                f"attention configured for kv={self.kv_dim}, q={self.q_dim}; "
                f"got {kv_src.shape} and {q_src.shape}")
        B, n_q = q_src.shape[0], q_src.shape[1]
        n_kv = kv_src.shape[1]
        h, dk = self.heads, self.d_k

        q = self.w_q(q_src).reshape(B, n_q, h, dk).permute(0, 2, 1, 3)
        k = self.w_k(kv_src).reshape(B, n_kv, h, dk).permute(0, 2, 1, 3)
        v = self.w_v(kv_src).reshape(B, n_kv, h, dk).permute(0, 2, 1, 3)

        scores = matmul(q, k.permute(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
        attn = softmax(scores, axis=-1)
        self.last_attention = attn.data.copy()
        out = matmul(attn, v)  # (B, h, n_q, dk)
        out = out.permute(0, 2, 1, 3).reshape(B, n_q, h * dk)
        out = self.w_o(out)
        return out.reshape(n_q, self.q_dim) if squeeze else out


class MixFFN(Module):
    """Channel MLP with a depthwise 3x3 conv between the two 1x1 convs."""

    EXPANSION = 4

    def __init__(self, channels: int, rng: RandomSource, expansion: int = EXPANSION):
        super().__init__()
        if expansion != self.EXPANSION:
            raise ConfigError(f"FFN expansion ratio is fixed at {self.EXPANSION}")
        hidden = expansion * channels
        self.channels = channels
        self.hidden = hidden
        self.fc1 = Conv2d(channels, hidden, 1, rng.spawn(1))
        self.dw = Conv2d(hidden, hidden, 3, rng.spawn(2), padding=1, groups=hidden)
        self.fc2 = Conv2d(hidden, channels, 1, rng.spawn(3))

    def __call__(self, x: Tensor, spatial) -> Tensor:
        h, w = int(spatial[0]), int(spatial[1])
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        B, n, c = x.shape
        if n != h * w:
            raise ShapeError(f"{n} tokens cannot form a {h}x{w} grid")
        if c != self.channels:
            raise ShapeError(f"MixFFN({self.channels}) got {c} channels")
        grid = x.reshape(B, h, w, c).permute(0, 3, 1, 2)
        out = self.fc2(self.dw(self.fc1(grid)).gelu())
        out = out.permute(0, 2, 3, 1).reshape(B, n, c)
        return out.reshape(n, c) if squeeze else out


def resize(x: Tensor, target, method: str = "bilinear") -> Tensor:
    """Resize dispatcher; the average-pool path exists for downsample ablation."""
    if method == "bilinear":
        return bilinear_resize(x, target)
    if method == "avgpool":
        from .tensor import avg_pool_resize
        if target[0] <= x.shape[2] and target[1] <= x.shape[3]:
            return avg_pool_resize(x, target)
        return bilinear_resize(x, target)
    raise ConfigError(f"unknown resize method {method!r}")


def tokens_from_map(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C), row-major tokens."""
    B, C, H, W = x.shape
    return x.permute(0, 2, 3, 1).reshape(B, H * W, C)


def map_from_tokens(x: Tensor, spatial) -> Tensor:
    """(B, N, C) -> (B, C, h, w)."""
    h, w = int(spatial[0]), int(spatial[1])
    B, n, c = x.shape
    if n != h * w:
        raise ShapeError(f"{n} tokens cannot form a {h}x{w} grid")
    return x.reshape(B, h, w, c).permute(0, 3, 1, 2)


__all__ = [
    "Linear", "LayerNorm", "BatchNorm2d", "Conv2d", "ConvBN",
    "MultiHeadAttention", "MixFFN", "resize", "tokens_from_map",
    "map_from_tokens", "concat", "LN_EPS", "BN_EPS", "BN_MOMENTUM",
]
