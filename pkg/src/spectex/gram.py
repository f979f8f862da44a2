"""Gram correlation statistics: per-layer matrices, losses, gradients and
the weighted total CNN loss.

For a feature matrix f of shape (m, N) — m filter responses over N spatial
stimuli — the Gram matrix is G[p, q] = sum_i f_p(i) * f_q(i), unnormalized.
The layer loss between generated and reference statistics is

    E = 1 / (4 N^2 m^2) * sum_pq (G[p, q] - Ghat[p, q])^2

and its gradient wrt the generated maps fhat is

    dE/dfhat_p(i) = 1 / (N^2 m^2) * sum_q fhat_q(i) * (Ghat[p, q] - G[p, q]).

Accumulation is always float64, whatever the compute dtype, to keep the
N-length contractions well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigurationError
from .network import ForwardTrace


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric m x m correlation matrix with its layer dims (m, n)."""

    values: np.ndarray
    m: int
    n: int

    def __post_init__(self):
        if self.values.shape != (self.m, self.m):
            raise ConfigurationError(
                f"Gram values shape {self.values.shape} != ({self.m}, {self.m})"
            )


@dataclass(frozen=True)
class GramTarget:
    """Reference Gram matrices of the exemplar keyed by capture layer,
    with the per-layer loss weights."""

    matrices: dict[str, GramMatrix]
    weights: dict[str, float]

    def __post_init__(self):
        if set(self.matrices) != set(self.weights):
            raise ConfigurationError("Gram target layers and weights disagree")


def gram_matrix(f: np.ndarray) -> GramMatrix:
    """Unnormalized correlation matrix of the rows of f (shape (m, N))."""
    if f.ndim != 2:
        raise ConfigurationError(f"feature matrix must be 2-D, got shape {f.shape}")
    f64 = f.astype(np.float64, copy=False)
    g = f64 @ f64.T
    # mirror the lower triangle so G[p, q] == G[q, p] bit-exactly
    g = np.tril(g) + np.tril(g, -1).T
    return GramMatrix(values=g, m=f.shape[0], n=f.shape[1])


def layer_loss(g: GramMatrix, g_hat: GramMatrix) -> float:
    """Normalized squared Frobenius gap between two Gram matrices."""
    if (g.m, g.n) != (g_hat.m, g_hat.n):
        raise ConfigurationError(
            f"Gram dims ({g.m}, {g.n}) != ({g_hat.m}, {g_hat.n})"
        )
    diff = g.values - g_hat.values
    scale = 1.0 / (4.0 * g.n ** 2 * g.m ** 2)
    return float(scale * np.sum(diff * diff))


def layer_loss_grad(f_hat: np.ndarray, g: GramMatrix, g_hat: GramMatrix) -> np.ndarray:
    """Gradient of layer_loss wrt the generated feature matrix f_hat.

    g is the reference statistic, g_hat the generated one (== gram_matrix(f_hat)).
    No ReLU mask is applied here; rectification is handled where the maps
    were produced.
    """
    if f_hat.shape != (g_hat.m, g_hat.n):
        raise ConfigurationError(
            f"feature matrix shape {f_hat.shape} != ({g_hat.m}, {g_hat.n})"
        )
    if (g.m, g.n) != (g_hat.m, g_hat.n):
        raise ConfigurationError(
            f"Gram dims ({g.m}, {g.n}) != ({g_hat.m}, {g_hat.n})"
        )
    scale = 1.0 / (float(g.n) ** 2 * float(g.m) ** 2)
    diff = g_hat.values - g.values
    grad = scale * (diff @ f_hat.astype(np.float64, copy=False))
    return grad.astype(f_hat.dtype, copy=False)


def total_cnn_loss(
    targets: GramTarget, trace: ForwardTrace
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted sum of layer losses plus the per-capture-layer gradients.

    Returns (loss, grads) where each gradient is already scaled by its
    layer weight and shaped like the captured feature tensor, ready for
    backward_to_image.
    """
    loss = 0.0
    grads: dict[str, np.ndarray] = {}
    for name, target in targets.matrices.items():
        if name not in trace.captured:
            raise ConfigurationError(f"trace has no captured layer {name!r}")
        w = targets.weights[name]
        tensor = trace.captured[name]
        f_hat = tensor.reshape(tensor.shape[0], -1)
        g_hat = gram_matrix(f_hat)
        loss += w * layer_loss(target, g_hat)
        grad = layer_loss_grad(f_hat, target, g_hat)
        if w != 1.0:
            grad = grad * np.asarray(w, dtype=grad.dtype)
        grads[name] = grad.reshape(tensor.shape)
    return loss, grads
