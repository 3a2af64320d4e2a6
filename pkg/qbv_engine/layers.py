"""
Tensor layers with analytic gradients for the convolutional auto-encoder.

Tensors are (batch, channels, bands, frames). Every forward function returns
its output together with a cache consumed by the matching backward function.
"""

import math
from typing import Dict, Tuple
import numpy as np


Stride = Tuple[int, int]


class LayerError(Exception):
    """Custom exception for tensor layer errors."""
    pass


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """Output size and (before, after) padding of a "same" convolution along one axis."""
    if stride < 1:
        raise LayerError(f"stride must be at least 1, got {stride}")
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: Stride):
    """Strided "same" cross-correlation.

    kernels is (out_channels, in_channels, kh, kw). The kernel taps are
    accumulated one offset at a time so memory stays proportional to the
    output tensor.
    """
    if x.ndim != 4:
        raise LayerError(f"conv2d expects a 4-D tensor, got shape {x.shape}")
    n_out, n_in, kh, kw = kernels.shape
    if x.shape[1] != n_in:
        raise LayerError(f"kernels expect {n_in} input channels, tensor has {x.shape[1]}")
    if bias.shape != (n_out,):
        raise LayerError(f"bias shape {bias.shape} does not match {n_out} kernels")
    sh, sw = stride
    h_out, top, bottom = same_padding(x.shape[2], kh, sh)
    w_out, left, right = same_padding(x.shape[3], kw, sw)
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))

    out = np.zeros((x.shape[0], h_out, w_out, n_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + (h_out - 1) * sh + 1:sh, j:j + (w_out - 1) * sw + 1:sw]
            out += np.tensordot(patch, kernels[:, :, i, j], axes=([1], [1]))
    out += bias
    cache = (xp, kernels, stride, x.shape, (top, left))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cache


def conv2d_backward(dout: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, kernels and bias."""
    xp, kernels, (sh, sw), in_shape, (top, left) = cache
    _, _, kh, kw = kernels.shape
    h_out, w_out = dout.shape[2], dout.shape[3]
    g = dout.transpose(0, 2, 3, 1)

    dxp = np.zeros_like(xp)
    dkernels = np.zeros_like(kernels)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + (h_out - 1) * sh + 1, sh)
            cols = slice(j, j + (w_out - 1) * sw + 1, sw)
            dkernels[:, :, i, j] = np.tensordot(g, xp[:, :, rows, cols], axes=([0, 1, 2], [0, 2, 3]))
            dxp[:, :, rows, cols] += np.tensordot(g, kernels[:, :, i, j], axes=([3], [0])).transpose(0, 3, 1, 2)
    dbias = dout.sum(axis=(0, 2, 3))
    dx = dxp[:, :, top:top + in_shape[2], left:left + in_shape[3]]
    return np.ascontiguousarray(dx), dkernels, dbias


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = 0.99,
    eps: float = 1e-3,
):
    """Per-channel normalisation over (batch, bands, frames).

    Returns (output, cache, (new_running_mean, new_running_var)); the running
    statistics are only moved in train mode.
    """
    shape = (1, -1, 1, 1)
    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise LayerError("degenerate batch: train-mode batch norm needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = momentum * running_mean + (1.0 - momentum) * mean
        new_var = momentum * running_var + (1.0 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise LayerError(f"unknown batch-norm mode: {mode}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    cache = (xhat, gamma, inv_std, mode)
    return out.astype(x.dtype, copy=False), cache, (new_mean.astype(x.dtype), new_var.astype(x.dtype))


def batchnorm_backward(dout: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, gain and shift."""
    xhat, gamma, inv_std, mode = cache
    shape = (1, -1, 1, 1)
    dgamma = np.sum(dout * xhat, axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(shape)
    if mode == "infer":
        return dxhat * inv_std.reshape(shape), dgamma, dbeta

    count = dout.shape[0] * dout.shape[2] * dout.shape[3]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3)).reshape(shape)
    sum_dxhat_xhat = np.sum(dxhat * xhat, axis=(0, 2, 3)).reshape(shape)
    dx = (inv_std.reshape(shape) / count) * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


def upsample_forward(x: np.ndarray, factor: Stride):
    """Nearest-neighbour repetition along bands and frames."""
    ff, ft = factor
    if ff < 1 or ft < 1:
        raise LayerError(f"upsampling factors must be at least 1, got {factor}")
    out = np.repeat(np.repeat(x, ff, axis=2), ft, axis=3)
    return out, (x.shape, factor)


def upsample_backward(dout: np.ndarray, cache) -> np.ndarray:
    (b, c, h, w), (ff, ft) = cache
    return dout.reshape(b, c, h, ff, w, ft).sum(axis=(3, 5))


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x


def relu_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout * (cache > 0)


def mse_loss(reconstruction: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error and its gradient w.r.t. the reconstruction."""
    if reconstruction.shape != target.shape:
        raise LayerError(f"reconstruction {reconstruction.shape} and target {target.shape} differ in shape")
    diff = reconstruction - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    return loss, (2.0 / diff.size) * diff


def glorot_uniform(shape: Tuple[int, int, int, int], rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)) for a (out, in, kh, kw) kernel."""
    n_out, n_in, kh, kw = shape
    limit = math.sqrt(6.0 / (n_in * kh * kw + n_out * kh * kw))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def parameter_count(params: Dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))
