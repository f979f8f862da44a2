"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from spectex.network import LayerSpec, make_network, vgg19_layer_plan
from spectex.tensor_ops import ConvWeights
from spectex.weights_io import ConvRecord, WeightSet


def central_difference(fn, x: np.ndarray, coords, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function at selected flat coords."""
    flat = x.ravel()
    out = np.empty(len(coords))
    for j, idx in enumerate(coords):
        bumped = flat.copy()
        bumped[idx] += step
        f_plus = fn(bumped.reshape(x.shape))
        bumped[idx] -= 2 * step
        f_minus = fn(bumped.reshape(x.shape))
        out[j] = (f_plus - f_minus) / (2 * step)
    return out


def conv_forward_reference(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Direct-summation convolution oracle (zero padding 1, stride 1)."""
    c_in, h, width = x.shape
    out = np.zeros((w.c_out, h, width), dtype=np.float64)
    for o in range(w.c_out):
        for y in range(h):
            for xx in range(width):
                acc = float(w.bias[o])
                for c in range(c_in):
                    for dy in range(3):
                        for dx in range(3):
                            yy = y + dy - 1
                            xc = xx + dx - 1
                            if 0 <= yy < h and 0 <= xc < width:
                                acc += float(w.kernel[o, c, dy, dx]) * float(x[c, yy, xc])
                out[o, y, xx] = acc
    return out


def random_conv_weights(rng: np.random.Generator, c_out: int, c_in: int, scale: float = 0.5) -> ConvWeights:
    return ConvWeights(
        kernel=(rng.standard_normal((c_out, c_in, 3, 3)) * scale),
        bias=rng.standard_normal(c_out) * 0.1,
    )


def tiny_network(rng: np.random.Generator, capture=("conv_a", "conv_b")):
    """2-conv / 1-pool chain (3 -> 4 -> 4 channels) with two capture layers."""
    layers = [
        LayerSpec("conv", "conv_a", random_conv_weights(rng, 4, 3)),
        LayerSpec("relu", "relu_a"),
        LayerSpec("avgpool", "pool_a"),
        LayerSpec("conv", "conv_b", random_conv_weights(rng, 4, 4)),
        LayerSpec("relu", "relu_b"),
    ]
    return make_network(layers, capture)


def random_vgg_weight_set(rng: np.random.Generator, scale: float = 0.05) -> WeightSet:
    """Full random weight set for the truncated chain through conv4_4."""
    records = []
    for kind, name, c_in, c_out in vgg19_layer_plan():
        if kind != "conv":
            continue
        if name.startswith("conv5"):
            break
        records.append(
            ConvRecord(
                name=name,
                kernel=(rng.standard_normal((c_out, c_in, 3, 3)) * scale).astype(np.float32),
                bias=(rng.standard_normal(c_out) * 0.01).astype(np.float32),
            )
        )
    means = np.array([123.675, 116.28, 103.53])
    return WeightSet(records=tuple(records), means=means)


def checkerboard(size: int = 64, period: int = 8, low: int = 40, high: int = 215) -> np.ndarray:
    """(size, size, 3) uint8 checkerboard with the given spatial period."""
    half = period // 2
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cells = ((yy // half) + (xx // half)) % 2
    img = np.where(cells == 0, low, high).astype(np.uint8)
    return np.stack([img, img, img], axis=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
