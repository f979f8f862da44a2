"""Dense [C, H, W] tensors and the differentiable primitives of the engine.

All operations are pure functions over numpy arrays in channel-first layout.
They run in the dtype of their inputs: float32 for production synthesis,
float64 for gradient verification. Convolutions are same-size (3x3 kernel,
zero padding 1, stride 1) and are evaluated as a single GEMM over an im2col
patch matrix, so results are bit-reproducible for a fixed BLAS thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class ConvWeights:
    """3x3 convolution kernel bank with per-output-channel bias.

    kernel has shape (C_out, C_in, 3, 3); bias has shape (C_out,).
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (3, 3):
            raise ConfigurationError(
                f"kernel must have shape (C_out, C_in, 3, 3), got {self.kernel.shape}"
            )
        if self.bias.shape != (self.kernel.shape[0],):
            raise ConfigurationError(
                f"bias shape {self.bias.shape} does not match C_out={self.kernel.shape[0]}"
            )

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1]

    def astype(self, dtype) -> "ConvWeights":
        return ConvWeights(
            kernel=np.ascontiguousarray(self.kernel, dtype=dtype),
            bias=np.ascontiguousarray(self.bias, dtype=dtype),
        )


def _check_chw(x: np.ndarray, what: str) -> None:
    if x.ndim != 3:
        raise ConfigurationError(f"{what} must be rank-3 [C, H, W], got shape {x.shape}")


def _im2col3(x: np.ndarray) -> np.ndarray:
    """Patch matrix of all 3x3 zero-padded neighbourhoods, shape (C*9, H*W).

    Row order is (channel, dy, dx) lexicographic, matching a row-major
    reshape of a (C_out, C_in, 3, 3) kernel.
    """
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 3, 3, h, w), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, dy : dy + h, dx : dx + w]
    return cols.reshape(c * 9, h * w)


def conv2d_forward(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Same-size 3x3 convolution with zero padding 1 and stride 1."""
    _check_chw(x, "conv input")
    if x.shape[0] != w.c_in:
        raise ConfigurationError(
            f"conv input has {x.shape[0]} channels, weights expect {w.c_in}"
        )
    _, h, width = x.shape
    kernel = np.ascontiguousarray(w.kernel, dtype=x.dtype)
    bias = w.bias.astype(x.dtype, copy=False)
    out = kernel.reshape(w.c_out, -1) @ _im2col3(x)
    out += bias[:, None]
    return out.reshape(w.c_out, h, width)


def conv2d_backward_data(grad_out: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Gradient of a scalar loss wrt the convolution input.

    Transposed convolution with the same zero-padding geometry: the kernel
    is flipped in both spatial axes and transposed in (out, in). The bias
    contributes nothing.
    """
    _check_chw(grad_out, "conv output gradient")
    if grad_out.shape[0] != w.c_out:
        raise ConfigurationError(
            f"gradient has {grad_out.shape[0]} channels, weights produce {w.c_out}"
        )
    _, h, width = grad_out.shape
    flipped = np.ascontiguousarray(
        w.kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3), dtype=grad_out.dtype
    )
    out = flipped.reshape(w.c_in, -1) @ _im2col3(grad_out)
    return out.reshape(w.c_in, h, width)


def relu_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x_pre: np.ndarray) -> np.ndarray:
    """Masked gradient: passes where the pre-activation was strictly positive.

    Subgradient at exactly 0 is taken as 0.
    """
    if grad_out.shape != x_pre.shape:
        raise ConfigurationError(
            f"gradient shape {grad_out.shape} != pre-activation shape {x_pre.shape}"
        )
    return np.where(x_pre > 0, grad_out, np.zeros((), dtype=grad_out.dtype))


def avgpool_forward(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 average pooling; a trailing odd row/column is dropped."""
    _check_chw(x, "pool input")
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ConfigurationError(f"pooling needs H, W >= 2, got {h}x{w}")
    hh, ww = h // 2, w // 2
    blocks = x[:, : 2 * hh, : 2 * ww].reshape(c, hh, 2, ww, 2)
    quarter = np.asarray(0.25, dtype=x.dtype)
    return (blocks[:, :, 0, :, 0] + blocks[:, :, 0, :, 1]
            + blocks[:, :, 1, :, 0] + blocks[:, :, 1, :, 1]) * quarter


def avgpool_backward(grad_out: np.ndarray, input_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Spread each pooled gradient equally over its 2x2 input block.

    input_hw restores the pre-pool spatial dims when they were odd; the
    dropped trailing row/column receives zero. Defaults to (2H, 2W).
    """
    _check_chw(grad_out, "pool gradient")
    c, h, w = grad_out.shape
    if input_hw is None:
        input_hw = (2 * h, 2 * w)
    ih, iw = input_hw
    if not (2 * h <= ih <= 2 * h + 1 and 2 * w <= iw <= 2 * w + 1):
        raise ConfigurationError(
            f"input dims {input_hw} inconsistent with pooled dims {(h, w)}"
        )
    out = np.zeros((c, ih, iw), dtype=grad_out.dtype)
    quarter = grad_out * np.asarray(0.25, dtype=grad_out.dtype)
    out[:, 0 : 2 * h : 2, 0 : 2 * w : 2] = quarter
    out[:, 0 : 2 * h : 2, 1 : 2 * w : 2] = quarter
    out[:, 1 : 2 * h : 2, 0 : 2 * w : 2] = quarter
    out[:, 1 : 2 * h : 2, 1 : 2 * w : 2] = quarter
    return out


def require_finite(x: np.ndarray, what: str) -> np.ndarray:
    """Raise ConfigurationError if x contains NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise ConfigurationError(f"{what} contains non-finite values")
    return x
