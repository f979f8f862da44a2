"""End-to-end synthesis orchestration.

The objective minimized is

    L(img) = L_cnn(img) + beta * L_spe(img)

where L_cnn is the weighted Gram-matrix loss over the capture layers and
L_spe is half the squared distance to the exemplar's spectrum set. Its
gradient combines the back-propagated CNN gradient with beta times the
spectrum projection residual. Optimization starts from seeded Gaussian
noise and runs under L-BFGS; pixel values stay unconstrained until export,
where channel means are added back and values clamp to [0, 255].

Every objective evaluation can be recorded to a CSV loss log with header
``iter,eval,total,cnn,spectrum,accepted`` (one row per evaluation; probe
evaluations from the line search carry accepted=0).
"""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .gram import GramTarget, gram_matrix, total_cnn_loss
from .lbfgs import OptimizerOptions, OptimizerReport, minimize
from .network import (
    DEFAULT_CAPTURE,
    NetworkSpec,
    backward_to_image,
    build_truncated_vgg19,
    forward_capture,
)
from .spectrum import SpectrumTarget, build_spectrum_target, dft2, spectrum_loss_and_grad, to_gray
from .weights_io import WeightSet

DEFAULT_LAYER_WEIGHT = 1e9
DEFAULT_BETA = 1e5


@dataclass(frozen=True)
class SynthesisConfig:
    capture_layers: tuple[str, ...] = DEFAULT_CAPTURE
    layer_weights: tuple[float, ...] = (DEFAULT_LAYER_WEIGHT,) * len(DEFAULT_CAPTURE)
    beta: float = DEFAULT_BETA
    spectrum: bool = True
    iterations: int = 1000
    seed: int = 0
    rescale: int = 256
    match_noise_std: bool = True
    use_float64: bool = False

    def __post_init__(self):
        if len(self.layer_weights) != len(self.capture_layers):
            raise ConfigurationError(
                f"{len(self.layer_weights)} layer weights for "
                f"{len(self.capture_layers)} capture layers"
            )
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")
        if any(w < 0 for w in self.layer_weights):
            raise ConfigurationError("layer weights must be >= 0")
        if self.effective_beta == 0 and all(w == 0 for w in self.layer_weights):
            raise ConfigurationError("at least one constraint must be active")
        if self.rescale < 2:
            raise ConfigurationError("rescale target must be >= 2")

    @property
    def effective_beta(self) -> float:
        return self.beta if self.spectrum else 0.0

    @property
    def dtype(self):
        return np.float64 if self.use_float64 else np.float32


@dataclass(frozen=True)
class ExemplarTargets:
    gram: GramTarget
    spectrum: SpectrumTarget
    shape: tuple[int, int]
    channel_means: np.ndarray


@dataclass
class SynthesisResult:
    output: np.ndarray          # (H, W, 3) uint8, displayable
    history: list[tuple[float, float, float]]  # (total, cnn, beta*spe) per accepted iterate
    report: OptimizerReport


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as (H, W, 3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    """Write a PNG atomically (temp file + rename)."""
    if pixels.ndim == 2:
        image = Image.fromarray(pixels, mode="L")
    else:
        image = Image.fromarray(pixels, mode="RGB")
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    _atomic_write_bytes(Path(path), buffer.getvalue())


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def preprocess(raw: np.ndarray, config: SynthesisConfig, means: np.ndarray) -> np.ndarray:
    """Raw (H, W, 3) uint8 image -> mean-subtracted [3, H', W'] tensor.

    Bilinear resize makes the longest side equal config.rescale; odd dims
    are then evened by dropping the trailing row/column, and the stored
    per-channel means are subtracted.
    """
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ConfigurationError(f"expected (H, W, 3) input, got shape {raw.shape}")
    if raw.dtype != np.uint8:
        raise ConfigurationError(f"expected 8-bit input, got dtype {raw.dtype}")
    h, w = raw.shape[:2]
    scale = config.rescale / max(h, w)
    new_h = int(np.floor(h * scale + 0.5))
    new_w = int(np.floor(w * scale + 0.5))
    if (new_h, new_w) != (h, w):
        resized = Image.fromarray(raw).resize((new_w, new_h), Image.BILINEAR)
        raw = np.asarray(resized, dtype=np.uint8)
    raw = raw[: new_h - (new_h % 2), : new_w - (new_w % 2), :]
    tensor = raw.astype(config.dtype).transpose(2, 0, 1)
    tensor -= np.asarray(means, dtype=config.dtype)[:, None, None]
    return tensor


def postprocess(tensor: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Add channel means back, clamp to [0, 255] and return (H, W, 3) uint8."""
    img = tensor.astype(np.float64) + np.asarray(means, dtype=np.float64)[:, None, None]
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img.transpose(1, 2, 0)


def analyze_exemplar(
    exemplar: np.ndarray, net: NetworkSpec, config: SynthesisConfig, means: np.ndarray
) -> ExemplarTargets:
    """Extract the Gram and spectrum targets from a preprocessed exemplar."""
    trace = forward_capture(net, exemplar)
    matrices = {}
    weights = {}
    for name, w in zip(config.capture_layers, config.layer_weights):
        matrices[name] = gram_matrix(trace.feature_matrix(name))
        weights[name] = float(w)
    return ExemplarTargets(
        gram=GramTarget(matrices=matrices, weights=weights),
        spectrum=build_spectrum_target(exemplar),
        shape=exemplar.shape[1:],
        channel_means=np.asarray(means, dtype=np.float64),
    )


def init_noise(
    shape: tuple[int, int, int], seed: int, channel_stds: Sequence[float]
) -> np.ndarray:
    """Seeded i.i.d. Gaussian image, zero mean, given per-channel stds (float64)."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(shape)
    noise *= np.asarray(channel_stds, dtype=np.float64)[:, None, None]
    return noise


class _LossRecorder:
    """Per-evaluation component log; the accepted flag marks the evaluation
    each iteration ends on (the point the optimizer moved to)."""

    def __init__(self):
        self.rows: list[list[float]] = []  # iter, eval, total, cnn, spectrum, accepted
        self.iterations_done = 0

    def record(self, total: float, cnn: float, spectrum: float) -> None:
        if not self.rows:
            # the starting point is itself the first accepted iterate
            self.rows.append([0, 1, total, cnn, spectrum, 1])
        else:
            self.rows.append(
                [self.iterations_done + 1, len(self.rows) + 1, total, cnn, spectrum, 0]
            )

    def mark_accepted(self, iteration: int) -> None:
        self.rows[-1][5] = 1
        self.iterations_done = iteration

    @property
    def history(self) -> list[tuple[float, float, float]]:
        return [(row[2], row[3], row[4]) for row in self.rows if row[5] == 1]

    def to_csv(self) -> str:
        lines = ["iter,eval,total,cnn,spectrum,accepted"]
        for it, ev, total, cnn, spe, accepted in self.rows:
            lines.append(f"{int(it)},{int(ev)},{total!r},{cnn!r},{spe!r},{int(accepted)}")
        return "\n".join(lines) + "\n"


def combined_objective(
    net: NetworkSpec,
    targets: ExemplarTargets,
    beta: float,
    dtype,
    recorder: _LossRecorder | None = None,
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Flat-vector (loss, gradient) callback for the optimizer.

    When beta == 0 the spectrum term is skipped entirely, so the run is
    identical to one with the spectrum machinery absent.
    """
    shape = (3, *targets.shape)

    def objective(flat: np.ndarray) -> tuple[float, np.ndarray]:
        img = flat.reshape(shape).astype(dtype, copy=False)
        trace = forward_capture(net, img)
        cnn_loss, capture_grads = total_cnn_loss(targets.gram, trace)
        grad = backward_to_image(net, trace, capture_grads).astype(np.float64)
        if beta != 0.0:
            spe_loss, spe_grad = spectrum_loss_and_grad(img, targets.spectrum)
            weighted_spe = beta * spe_loss
            grad += beta * spe_grad.astype(np.float64)
        else:
            weighted_spe = 0.0
        total = cnn_loss + weighted_spe
        if recorder is not None:
            recorder.record(total, cnn_loss, weighted_spe)
        return total, grad.ravel()

    return objective


SnapshotFn = Callable[[int, np.ndarray], None]


def synthesize_with_network(
    exemplar: np.ndarray,
    config: SynthesisConfig,
    net: NetworkSpec,
    means: np.ndarray | None = None,
    opt: OptimizerOptions | None = None,
    loss_log_path: str | Path | None = None,
    snapshot_every: int | None = None,
    snapshot_fn: SnapshotFn | None = None,
) -> SynthesisResult:
    """Synthesis loop over a prebuilt network and a preprocessed exemplar."""
    if means is None:
        means = np.zeros(3)
    if opt is None:
        opt = OptimizerOptions(max_iterations=config.iterations)

    targets = analyze_exemplar(exemplar, net, config, means)
    stds = exemplar.std(axis=(1, 2)) if config.match_noise_std else np.ones(3)
    stds = np.maximum(np.asarray(stds, dtype=np.float64), 1e-12)
    x0 = init_noise((3, *targets.shape), config.seed, stds)

    recorder = _LossRecorder()
    objective = combined_objective(net, targets, config.effective_beta, config.dtype, recorder)

    def on_iteration(k: int, x: np.ndarray, loss: float, grad_norm: float) -> None:
        recorder.mark_accepted(k)
        if snapshot_fn is not None and snapshot_every and k % snapshot_every == 0:
            snapshot_fn(k, postprocess(x.reshape(3, *targets.shape), means))

    x_star, report = minimize(objective, x0.ravel(), opt, iteration_hook=on_iteration)

    if loss_log_path is not None:
        _atomic_write_bytes(Path(loss_log_path), recorder.to_csv().encode("utf-8"))

    output = postprocess(x_star.reshape(3, *targets.shape), means)
    return SynthesisResult(output=output, history=recorder.history, report=report)


def synthesize(
    exemplar_raw: np.ndarray,
    config: SynthesisConfig,
    weights: WeightSet,
    opt: OptimizerOptions | None = None,
    loss_log_path: str | Path | None = None,
    snapshot_every: int | None = None,
    snapshot_fn: SnapshotFn | None = None,
) -> SynthesisResult:
    """Full pipeline: preprocess, build the truncated VGG-19, analyze the
    exemplar and run the combined-loss synthesis."""
    casted = weights.astype(config.dtype)
    net = build_truncated_vgg19(casted, config.capture_layers)
    exemplar = preprocess(exemplar_raw, config, weights.means)
    return synthesize_with_network(
        exemplar,
        config,
        net,
        means=weights.means,
        opt=opt,
        loss_log_path=loss_log_path,
        snapshot_every=snapshot_every,
        snapshot_fn=snapshot_fn,
    )


def radial_spectrum_profile(img: np.ndarray) -> np.ndarray:
    """Radially averaged power spectrum of the gray channel.

    Returns rows (radius, mean power) for every integer radius >= 1 that
    owns at least one frequency bin; the DC bin is excluded.
    """
    gray = to_gray(img) if img.ndim == 3 else img
    power = np.abs(dft2(gray)) ** 2
    h, w = power.shape
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    radius = np.rint(np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)).astype(int)
    radius_flat = radius.ravel()
    power_flat = power.ravel()
    sums = np.bincount(radius_flat, weights=power_flat)
    counts = np.bincount(radius_flat)
    rows = [
        (float(r), float(sums[r] / counts[r]))
        for r in range(1, len(counts))
        if counts[r] > 0
    ]
    return np.asarray(rows)


def dominant_peak_radius(profile: np.ndarray) -> float:
    """Radius of the maximal mean-power annulus of a radial profile."""
    if len(profile) == 0:
        raise ConfigurationError("empty radial profile")
    return float(profile[np.argmax(profile[:, 1]), 0])


def dft_magnitude_image(img: np.ndarray) -> np.ndarray:
    """Centered log-magnitude DFT visualization: log(1 + |F(gray)|),
    DC at the center, normalized to [0, 255] uint8."""
    gray = to_gray(img) if img.ndim == 3 else img
    mag = np.log1p(np.abs(np.fft.fftshift(dft2(gray))))
    peak = mag.max()
    if peak > 0:
        mag = mag / peak * 255.0
    return np.rint(mag).astype(np.uint8)
