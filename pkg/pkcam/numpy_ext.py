import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pkcam.errors import FormatError


def output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def spatial_windows(
    x: np.ndarray,
    kernel: tuple[int, int],
    stride: int,
    pad: int,
    fill: float = 0.0,
) -> np.ndarray:
    """Returns a read-only view of shape (N, C, H', W', kh, kw) over a padded NCHW array.

    Args:
        :param x: Input array in N×C×H×W layout.
        :param kernel: Window height and width.
        :param stride: Step between windows along both spatial axes.
        :param pad: Zero (or `fill`) padding added on every spatial border.
        :param fill: Padding value.
    """
    kh, kw = kernel
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill)
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    out_h = (x.shape[2] - kh) // stride + 1
    out_w = (x.shape[3] - kw) // stride + 1
    return windows[:, :, : out_h * stride : stride, : out_w * stride : stride]


def scatter_windows(
    grad_windows: np.ndarray,
    padded_shape: tuple[int, ...],
    stride: int,
    pad: int,
) -> np.ndarray:
    """Adds (N, C, H', W', kh, kw) window gradients back onto the unpadded input grid."""
    _, _, out_h, out_w, kh, kw = grad_windows.shape
    grad = np.zeros(padded_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            grad[
                :, :, i : i + out_h * stride : stride, j : j + out_w * stride : stride
            ] += grad_windows[:, :, :, :, i, j]
    if pad:
        grad = grad[:, :, pad:-pad, pad:-pad]
    return grad


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sums `grad` over the axes numpy broadcasting added or stretched to reach its shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class BinaryReader:
    """Sequential little-endian reader that reports failures with the byte offset."""

    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def read(self, dtype: str, count: int = 1, what: str = "field") -> np.ndarray:
        dt = np.dtype(dtype)
        end = self.offset + dt.itemsize * count
        if end > len(self.payload):
            raise FormatError(f"truncated {what}: need {end - self.offset} bytes", self.offset)
        values = np.frombuffer(self.payload, dtype=dt, count=count, offset=self.offset)
        self.offset = end
        return values

    def read_scalar(self, dtype: str, what: str = "field") -> int:
        return int(self.read(dtype, 1, what)[0])

    def read_bytes(self, size: int, what: str = "field") -> bytes:
        return self.read("u1", size, what).tobytes()

    def expect(self, magic: bytes) -> None:
        start = self.offset
        if self.payload[start : start + len(magic)] != magic:
            raise FormatError(f"bad magic, expected {magic!r}", start)
        self.offset += len(magic)

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.payload)


class BinaryWriter:
    def __init__(self) -> None:
        self._chunks: list[bytes] = []

    def write(self, values, dtype: str) -> None:
        self._chunks.append(np.asarray(values, dtype=np.dtype(dtype)).tobytes())

    def write_bytes(self, payload: bytes) -> None:
        self._chunks.append(payload)

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)
