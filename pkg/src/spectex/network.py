"""Truncated VGG-19 chain: forward passes with feature capture and
back-propagation of per-layer feature gradients to an image gradient.

The canonical topology follows VGG-19's convolutional prefix with average
pooling in place of max pooling: blocks of 2, 2, 4, 4, 4 rectified 3x3
convolutions separated by 2x2 average pools. Networks are truncated after
the deepest capture point, so layers past it are never built or evaluated.

A capture name refers to where the feature map is read:
  - a conv layer name captures the post-ReLU output of that convolution
    (rectified feature maps are what the losses consume);
  - a pool layer name captures the pooled output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, WeightValidationError
from .tensor_ops import (
    ConvWeights,
    avgpool_backward,
    avgpool_forward,
    conv2d_backward_data,
    conv2d_forward,
    relu_backward,
    relu_forward,
)

# (block width, convs per block) for VGG-19's five convolutional blocks.
VGG19_BLOCKS: tuple[tuple[int, int], ...] = ((64, 2), (128, 2), (256, 4), (512, 4), (512, 4))

DEFAULT_CAPTURE: tuple[str, ...] = ("conv1_1", "pool1", "pool2", "pool3", "pool4")


@dataclass(frozen=True)
class LayerSpec:
    """One link of the chain: kind is 'conv', 'relu' or 'avgpool'."""

    kind: str
    name: str
    weights: ConvWeights | None = None

    def __post_init__(self):
        if self.kind not in ("conv", "relu", "avgpool"):
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and self.weights is None:
            raise ConfigurationError(f"conv layer {self.name!r} has no weights")


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable layer chain plus the resolved capture points.

    capture_points maps each capture name to the index of the layer whose
    output is read for it.
    """

    layers: tuple[LayerSpec, ...]
    capture_set: tuple[str, ...]
    capture_points: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ConfigurationError("layer names must be unique within a network")


def make_network(layers: Sequence[LayerSpec], capture: Sequence[str]) -> NetworkSpec:
    """Assemble a NetworkSpec, resolving capture names to layer indices."""
    layers = tuple(layers)
    index_by_name = {layer.name: i for i, layer in enumerate(layers)}
    if len(index_by_name) != len(layers):
        raise ConfigurationError("layer names must be unique within a network")

    points: dict[str, int] = {}
    for name in capture:
        if name not in index_by_name:
            raise ConfigurationError(f"capture layer {name!r} is not in the network")
        idx = index_by_name[name]
        # A conv capture reads the rectified output: advance to the relu
        # that immediately follows, when present.
        if layers[idx].kind == "conv" and idx + 1 < len(layers) and layers[idx + 1].kind == "relu":
            idx += 1
        points[name] = idx
    return NetworkSpec(layers=layers, capture_set=tuple(capture), capture_points=points)


def vgg19_layer_plan() -> list[tuple[str, str, int, int]]:
    """Full canonical plan as (kind, name, c_in, c_out) rows; pools carry 0s."""
    plan: list[tuple[str, str, int, int]] = []
    c_in = 3
    for b, (width, n_convs) in enumerate(VGG19_BLOCKS, start=1):
        for k in range(1, n_convs + 1):
            plan.append(("conv", f"conv{b}_{k}", c_in, width))
            plan.append(("relu", f"relu{b}_{k}", 0, 0))
            c_in = width
        plan.append(("avgpool", f"pool{b}", 0, 0))
    return plan


def expected_conv_plan(capture: Sequence[str] = DEFAULT_CAPTURE) -> list[tuple[str, int, int]]:
    """(name, c_out, c_in) for every conv layer the truncated network needs."""
    plan = vgg19_layer_plan()
    cut = _truncation_index(plan, capture)
    return [
        (name, c_out, c_in)
        for kind, name, c_in, c_out in plan[: cut + 1]
        if kind == "conv"
    ]


def _truncation_index(plan: list[tuple[str, str, int, int]], capture: Sequence[str]) -> int:
    """Index of the last layer needed: the deepest capture's read point."""
    if not capture:
        raise ConfigurationError("capture set is empty")
    index_by_name = {name: i for i, (_, name, _, _) in enumerate(plan)}
    deepest = -1
    for name in capture:
        if name not in index_by_name:
            raise ConfigurationError(f"unknown capture layer {name!r}")
        idx = index_by_name[name]
        if plan[idx][0] == "conv":
            idx += 1  # include the rectification the capture reads
        deepest = max(deepest, idx)
    return deepest


def build_truncated_vgg19(weights, capture: Sequence[str] = DEFAULT_CAPTURE) -> NetworkSpec:
    """Build the VGG-19 prefix needed to serve every capture layer.

    weights is a loaded WeightSet (see weights_io); each required conv
    record is checked for presence and shape before the chain is built.
    """
    plan = vgg19_layer_plan()
    cut = _truncation_index(plan, capture)

    layers: list[LayerSpec] = []
    for kind, name, c_in, c_out in plan[: cut + 1]:
        if kind == "conv":
            record = weights.find(name)
            if record is None:
                raise WeightValidationError(f"weight set has no record for {name}")
            if record.kernel.shape != (c_out, c_in, 3, 3):
                raise WeightValidationError(
                    f"record {name} has kernel shape {record.kernel.shape}, "
                    f"expected {(c_out, c_in, 3, 3)}"
                )
            layers.append(LayerSpec("conv", name, ConvWeights(record.kernel, record.bias)))
        elif kind == "relu":
            layers.append(LayerSpec("relu", name))
        else:
            layers.append(LayerSpec("avgpool", name))
    return make_network(layers, capture)


def cast_network(net: NetworkSpec, dtype) -> NetworkSpec:
    """Copy of the network with conv weights in the given dtype."""
    layers = tuple(
        LayerSpec(l.kind, l.name, l.weights.astype(dtype)) if l.kind == "conv" else l
        for l in net.layers
    )
    return NetworkSpec(layers=layers, capture_set=net.capture_set, capture_points=dict(net.capture_points))


@dataclass
class ForwardTrace:
    """All per-layer outputs of one forward pass, plus the captured maps."""

    image: np.ndarray
    outputs: list[np.ndarray]
    captured: dict[str, np.ndarray]

    def feature_matrix(self, name: str) -> np.ndarray:
        """Captured map flattened to (m_l, N_l): channels x spatial stimuli."""
        t = self.captured[name]
        return t.reshape(t.shape[0], -1)


def forward_capture(net: NetworkSpec, image: np.ndarray) -> ForwardTrace:
    """Run the chain on a preprocessed [C, H, W] image, retaining every
    intermediate output so the backward pass is a pure replay."""
    if image.ndim != 3:
        raise ConfigurationError(f"image must be [C, H, W], got shape {image.shape}")
    first_conv = next((l for l in net.layers if l.kind == "conv"), None)
    if first_conv is not None and image.shape[0] != first_conv.weights.c_in:
        raise ConfigurationError(
            f"image has {image.shape[0]} channels, network expects {first_conv.weights.c_in}"
        )

    outputs: list[np.ndarray] = []
    current = image
    for layer in net.layers:
        if layer.kind == "conv":
            current = conv2d_forward(current, layer.weights)
        elif layer.kind == "relu":
            current = relu_forward(current)
        else:
            current = avgpool_forward(current)
        outputs.append(current)

    captured = {name: outputs[idx] for name, idx in net.capture_points.items()}
    return ForwardTrace(image=image, outputs=outputs, captured=captured)


def backward_to_image(
    net: NetworkSpec,
    trace: ForwardTrace,
    capture_grads: Mapping[str, np.ndarray],
) -> np.ndarray:
    """Back-propagate capture-layer gradients to the image domain.

    Traverses the chain deepest-first; each capture gradient is injected
    additively at its read point, so the result is the gradient of
    sum_l <g_l, f_l(image)> wrt the image.
    """
    inject: dict[int, list[np.ndarray]] = {}
    for name, grad in capture_grads.items():
        if name not in net.capture_points:
            raise ConfigurationError(f"{name!r} is not a capture layer of this network")
        idx = net.capture_points[name]
        if grad.shape != trace.outputs[idx].shape:
            raise ConfigurationError(
                f"gradient for {name!r} has shape {grad.shape}, "
                f"feature map has {trace.outputs[idx].shape}"
            )
        inject.setdefault(idx, []).append(grad)

    grad = np.zeros_like(trace.outputs[-1])
    for i in range(len(net.layers) - 1, -1, -1):
        for extra in inject.get(i, ()):
            grad = grad + extra
        layer = net.layers[i]
        layer_input = trace.outputs[i - 1] if i > 0 else trace.image
        if layer.kind == "conv":
            grad = conv2d_backward_data(grad, layer.weights)
        elif layer.kind == "relu":
            grad = relu_backward(grad, layer_input)
        else:
            grad = avgpool_backward(grad, layer_input.shape[1:])
    return grad
