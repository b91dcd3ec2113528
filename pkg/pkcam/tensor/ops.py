"""Forward ops with their reverse-mode adjoints.

Every op validates shapes, computes its result with numpy in float64 and, when a
`GradTape` is active and an input requires a gradient, records a closure mapping the
output gradient onto input gradients.
"""

from __future__ import annotations

import builtins
from collections.abc import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pkcam.errors import ContractError
from pkcam.errors import DimensionError
from pkcam.errors import NumericError
from pkcam.numpy_ext import output_size
from pkcam.numpy_ext import scatter_windows
from pkcam.numpy_ext import spatial_windows
from pkcam.numpy_ext import unbroadcast
from pkcam.tensor.tensor import BackwardFn
from pkcam.tensor.tensor import Tensor
from pkcam.tensor.tensor import active_tape
from pkcam.tensor.tensor import as_tensor

STD_EPS = 1e-8


def _result(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    requires_grad = builtins.any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad)
    if __debug__ and not np.isfinite(out.data).all():
        if builtins.all(np.isfinite(t.data).all() for t in inputs):
            raise NumericError(f"{name} produced non-finite values from finite inputs")
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _expect_rank(name: str, tensor: Tensor, rank: int, layout: str) -> None:
    if tensor.ndim != rank:
        raise DimensionError(
            f"{name}: expected a rank-{rank} {layout} tensor, got shape {list(tensor.shape)}"
        )


# -- elementwise arithmetic --


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return _result("neg", -x.data, (x,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul: both operands need rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: axis -1 of left ({a.shape[-1]}) != axis -2 of right ({b.shape[-2]})"
        )

    def backward(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return _result("matmul", a.data @ b.data, (a, b), backward)


# -- shape plumbing --


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {list(x.shape)} as {list(shape)}") from exc
    return _result("reshape", data, (x,), lambda g: (g.reshape(x.shape),))


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _result("sum", x.data.sum(axis=axes, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape),)

    return _result("mean", x.data.mean(axis=axes, keepdims=keepdims), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    axis %= tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat along axis {axis}: {exc}") from exc

    def backward(g):
        return np.split(g, np.cumsum(sizes)[:-1], axis=axis)

    return _result("concat", data, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack along axis {axis}: {exc}") from exc
    axis %= data.ndim

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _result("stack", data, tuple(tensors), backward)


def take(x: Tensor, indices: Sequence[int] | np.ndarray, axis: int) -> Tensor:
    """Gathers entries of `x` along `axis`; repeated indices accumulate their gradients."""
    index = np.asarray(indices, dtype=np.int64)
    axis %= x.ndim
    if index.size and (index.min() < 0 or index.max() >= x.shape[axis]):
        raise DimensionError(f"take: index out of range for axis {axis} of size {x.shape[axis]}")

    def backward(g):
        grad = np.zeros(np.moveaxis(x.data, axis, 0).shape)
        np.add.at(grad, index, np.moveaxis(g, axis, 0))
        return (np.moveaxis(grad, 0, axis),)

    return _result("take", np.take(x.data, index, axis=axis), (x,), backward)


# -- convolutions and pooling --


def conv2d(
    x: Tensor,
    w: Tensor,
    stride: int = 1,
    pad: int = 0,
    bias: Tensor | None = None,
) -> Tensor:
    """2-D cross-correlation of an N×C×H×W input with a C_out×C_in×kh×kw kernel."""
    _expect_rank("conv2d", x, 4, "N×C×H×W")
    _expect_rank("conv2d", w, 4, "C_out×C_in×kh×kw")
    n, c, h, wd = x.shape
    c_out, c_in, kh, kw = w.shape
    if c != c_in:
        raise DimensionError(f"conv2d: axis 1 (channels) of input is {c}, kernel expects {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel axes 2,3 must be odd, got {kh}×{kw}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d: stride must be >= 1 and pad >= 0, got {stride}, {pad}")
    out_h, out_w = output_size(h, kh, stride, pad), output_size(wd, kw, stride, pad)
    if out_h < 1:
        raise DimensionError(f"conv2d: axis 2 (height) {h} too small for kernel {kh}")
    if out_w < 1:
        raise DimensionError(f"conv2d: axis 3 (width) {wd} too small for kernel {kw}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias axis 0 must be {c_out}, got {list(bias.shape)}")

    windows = spatial_windows(x.data, (kh, kw), stride, pad)
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_windows = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        grad_x = scatter_windows(grad_windows, (n, c, h + 2 * pad, wd + 2 * pad), stride, pad)
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, w) if bias is None else (x, w, bias)
    return _result("conv2d", out, inputs, backward)


def conv1d(x: Tensor, w: Tensor, pad: int = 0) -> Tensor:
    """Slides one shared kernel along axis 1 of an N×C tensor, zero-padded by `pad`."""
    _expect_rank("conv1d", x, 2, "N×C")
    _expect_rank("conv1d", w, 1, "kernel")
    n, c = x.shape
    (k,) = w.shape
    if pad < 0:
        raise ContractError(f"conv1d: pad must be >= 0, got {pad}")
    if k > c + 2 * pad:
        raise DimensionError(f"conv1d: kernel length {k} exceeds padded axis 1 ({c} + 2·{pad})")
    padded = np.pad(x.data, ((0, 0), (pad, pad)))
    windows = sliding_window_view(padded, k, axis=1)
    length = windows.shape[1]

    def backward(g):
        grad_w = np.tensordot(g, windows, axes=([0, 1], [0, 1]))
        grad_padded = np.zeros((n, c + 2 * pad))
        for j in range(k):
            grad_padded[:, j : j + length] += g * w.data[j]
        return grad_padded[:, pad : pad + c], grad_w

    return _result("conv1d", windows @ w.data, (x, w), backward)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, pad: int = 1) -> Tensor:
    _expect_rank("max_pool2d", x, 4, "N×C×H×W")
    n, c, h, wd = x.shape
    if pad >= kernel:
        raise ContractError("max_pool2d: pad must be smaller than the kernel")
    windows = spatial_windows(x.data, (kernel, kernel), stride, pad, fill=-np.inf)
    flat = windows.reshape(*windows.shape[:4], kernel * kernel)
    winner = flat.argmax(axis=-1)[..., None]
    out = np.take_along_axis(flat, winner, axis=-1)[..., 0]

    def backward(g):
        grad_flat = np.zeros(flat.shape)
        np.put_along_axis(grad_flat, winner, g[..., None], axis=-1)
        grad_windows = grad_flat.reshape(windows.shape)
        return (scatter_windows(grad_windows, (n, c, h + 2 * pad, wd + 2 * pad), stride, pad),)

    return _result("max_pool2d", out, (x,), backward)


def gap2d(x: Tensor) -> Tensor:
    """Per-channel spatial mean: N×C×H×W → N×C."""
    _expect_rank("gap2d", x, 4, "N×C×H×W")
    area = x.shape[2] * x.shape[3]

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, x.shape),)

    return _result("gap2d", x.data.mean(axis=(2, 3)), (x,), backward)


def std2d(x: Tensor, eps: float = STD_EPS) -> Tensor:
    """Per-channel population standard deviation, sqrt(var + eps): N×C×H×W → N×C."""
    _expect_rank("std2d", x, 4, "N×C×H×W")
    area = x.shape[2] * x.shape[3]
    centred = x.data - x.data.mean(axis=(2, 3), keepdims=True)
    std = np.sqrt((centred**2).mean(axis=(2, 3)) + eps)

    def backward(g):
        return ((g / std)[:, :, None, None] * centred / area,)

    return _result("std2d", std, (x,), backward)


# -- dense layers and activations --


def fc(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map x·wᵀ + b for x: N×D_in, w: D_out×D_in, b: D_out."""
    _expect_rank("fc", x, 2, "N×D_in")
    _expect_rank("fc", w, 2, "D_out×D_in")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"fc: axis 1 of input is {x.shape[1]}, weight expects {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"fc: bias axis 0 must be {w.shape[0]}, got {list(b.shape)}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _result("fc", out, (x, w) if b is None else (x, w, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result("softmax", y, (x,), backward)


def cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of N×K logits against integer class labels."""
    _expect_rank("cross_entropy", logits, 2, "N×K")
    target = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if target.shape != (n,):
        raise DimensionError(f"cross_entropy: expected {n} labels, got shape {list(target.shape)}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ContractError(f"cross_entropy: labels must lie in [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(n), target].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[np.arange(n), target] -= 1.0
        return (grad * (g / n),)

    return _result("cross_entropy", np.asarray(loss), (logits,), backward)
