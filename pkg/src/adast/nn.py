"""Layers: 1-D convolution, batch norm, max pooling, linear, and the
position-attention block used for the domain-specific attention."""

from __future__ import annotations

from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import GeometryError, ShapeError, StatisticsError
from .tensor import Tensor, _node


class Module:
    """Parameter container. Parameters are Tensor attributes with requires_grad;
    buffers are plain ndarrays named in ``_buffers``."""

    _buffers: tuple[str, ...] = ()
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


# -- functional kernels --------------------------------------------------
# Kernels are written around 2-D GEMMs and strided slices: numpy's batched
# matmul and reductions over tiny trailing axes are far slower at these sizes.
def _channel_sum(a: np.ndarray) -> np.ndarray:
    return np.einsum("bcl->c", a)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[B, C_in, L]`` with ``weight[C_out, C_in, k]``."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d: expected [B x C x L] input, got {x.shape}")
    c_out, c_in, k = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d: input has {x.shape[1]} channels, weight expects {c_in}")
    b = x.shape[0]
    length = x.shape[2] + 2 * padding
    l_out = (length - k) // stride + 1
    if length < k or l_out < 1:
        raise GeometryError(
            f"conv1d: input length {x.shape[2]} (padding {padding}) too short for kernel {k}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    span = stride * (l_out - 1) + 1
    # im2col: [B, C_in, L_out, k] -> [B * L_out, C_in * k]
    windows = sliding_window_view(xp, k, axis=2)[:, :, :span:stride]
    cols = windows.transpose(0, 2, 1, 3).reshape(b * l_out, c_in * k)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(b, l_out, c_out).transpose(0, 2, 1))

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(b * l_out, c_out)
        gw = (g2.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(b, l_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros(xp.shape)
            for kk in range(k):
                gxp[:, :, kk : kk + span : stride] += gcols[:, :, :, kk]
            gx = gxp[:, :, padding : padding + x.shape[2]] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward, "conv1d")


def maxpool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Window maxima; gradient routes to the first (lowest-index) maximum."""
    stride = kernel if stride is None else stride
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d: expected [B x C x L] input, got {x.shape}")
    length = x.shape[2]
    if kernel > length or kernel < 1 or stride < 1:
        raise GeometryError(f"maxpool1d: kernel {kernel} / stride {stride} invalid for length {length}")
    l_out = (length - kernel) // stride + 1
    span = stride * (l_out - 1) + 1
    out = x.data[:, :, 0:span:stride].copy()
    idx = np.zeros(out.shape, dtype=np.int64)
    for kk in range(1, kernel):
        cand = x.data[:, :, kk : kk + span : stride]
        better = cand > out  # strict: earlier index wins ties
        out[better] = cand[better]
        idx[better] = kk

    def backward(g):
        gx = np.zeros(x.shape)
        for kk in range(kernel):
            gx[:, :, kk : kk + span : stride] += np.where(idx == kk, g, 0.0)
        return (gx,)

    return _node(out, (x,), backward, "maxpool1d")


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of ``x[B, C, L]``.

    In training mode uses the biased batch variance and updates the running
    buffers in place (the running variance uses the unbiased estimate).
    """
    if x.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm1d: input {x.shape} does not match {gamma.shape[0]} channels")
    n = x.shape[0] * x.shape[2]
    if training:
        if n < 2:
            raise StatisticsError(f"batchnorm1d: need at least 2 values per channel, got {n}")
        mu = _channel_sum(x.data) / n
        centered = x.data - mu[None, :, None]
        var = _channel_sum(centered * centered) / n
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()
        centered = x.data - mu[None, :, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g):
        ggamma = _channel_sum(g * xhat)
        gbeta = _channel_sum(g)
        gxhat = g * gamma.data[None, :, None]
        if training:
            gx = (inv_std / n)[None, :, None] * (
                n * gxhat
                - _channel_sum(gxhat)[None, :, None]
                - xhat * _channel_sum(gxhat * xhat)[None, :, None]
            )
        else:
            gx = gxhat * inv_std[None, :, None]
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), backward, "batchnorm1d")


# -- layers --------------------------------------------------------------
class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0, rng=None):
        if stride < 1 or padding < 0:
            raise GeometryError(f"conv1d: stride {stride} / padding {padding} invalid")
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * kernel
        self.weight = _uniform(rng, (c_out, c_in, kernel), fan_in)
        self.bias = _uniform(rng, (c_out,), fan_in)
        self.stride = stride
        self.padding = padding

    def output_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.weight.shape[2]) // self.stride + 1

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm1d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm1d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class MaxPool1d(Module):
    def __init__(self, kernel: int, stride: int | None = None):
        self.kernel = kernel
        self.stride = kernel if stride is None else stride

    def output_length(self, length: int) -> int:
        return (length - self.kernel) // self.stride + 1

    def forward(self, x: Tensor) -> Tensor:
        return maxpool1d(x, self.kernel, self.stride)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.weight = _uniform(rng, (n_out, n_in), n_in)
        self.bias = _uniform(rng, (n_out,), n_in)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"linear: input {x.shape} does not match weight {self.weight.shape}")
        return T.matmul(x, T.transpose(self.weight)) + self.bias


class Attention(Module):
    """Re-weights positions of a ``[B, d, l]`` feature map.

    Two pointwise convolutions project every position; the score of position
    ``i`` as seen from position ``j`` is ``h1(f_i) . h2(f_j)``, normalised with
    a softmax over ``i``. Output position ``j`` is the score-weighted sum of the
    input features. No residual path, no score scaling.
    """

    def __init__(self, d: int, d_attn: int | None = None, rng=None):
        rng = rng or np.random.default_rng(0)
        d_attn = d_attn or max(1, d // 2)
        self.h1 = Conv1d(d, d_attn, 1, rng=rng)
        self.h2 = Conv1d(d, d_attn, 1, rng=rng)

    def scores(self, feat: Tensor) -> Tensor:
        """``V[b, j, i]``; each row over ``i`` sums to one."""
        z1 = self.h1(feat)  # [B, a, l]
        z2 = self.h2(feat)
        logits = T.matmul(T.swapaxes(z2, 1, 2), z1)  # [B, l_j, l_i]
        return T.softmax(logits, axis=-1)

    def forward(self, feat: Tensor) -> Tensor:
        v = self.scores(feat)
        # o[:, :, j] = sum_i V[j, i] f[:, :, i]
        return T.matmul(feat, T.swapaxes(v, 1, 2))


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x
