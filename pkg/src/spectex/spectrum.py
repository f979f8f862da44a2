"""Fourier-domain machinery: 2D DFT helpers, projection onto the set of
images sharing the exemplar's spectrum, and the spectrum loss/gradient.

The projection keeps each channel's own target modulus and applies one
common phase-correction factor to all three channels, which preserves
inter-channel correlation. The factor is the unit-modulus maximizer of the
summed cross-spectrum alignment

    phi(xi) = S(xi) / |S(xi)|,   S = sum_c F(img_c) * conj(F(target_c)),

which makes the projection the exact nearest point of the common-phase
orbit of the target. That exactness is what makes the loss gradient equal
img - projection (an envelope argument), a property the gradient checks
rely on. For an image with identical channels it reduces to aligning the
gray-level phases. FFTs run in float64 regardless of the compute dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SpectexError, SpectrumSizeError

# Bins where the cross-spectrum magnitude falls below this fraction of the
# peak keep the target phase unchanged (phase factor 1) instead of dividing.
ZERO_BIN_RELATIVE_EPS = 1e-12

# The inverse transform of a conjugate-symmetric spectrum must be real up
# to rounding; a larger imaginary residue indicates a broken invariant.
IMAG_RESIDUE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SpectrumTarget:
    """Complex DFTs of the preprocessed exemplar: one per color channel,
    plus the DFT of its gray (channel-mean) image."""

    channel_dfts: np.ndarray  # (3, H, W) complex128
    gray_dft: np.ndarray      # (H, W) complex128
    shape: tuple[int, int]

    def __post_init__(self):
        if self.channel_dfts.shape != (3, *self.shape):
            raise ConfigurationError(
                f"channel DFTs shape {self.channel_dfts.shape} != (3, {self.shape})"
            )
        if self.gray_dft.shape != self.shape:
            raise ConfigurationError(
                f"gray DFT shape {self.gray_dft.shape} != {self.shape}"
            )


def to_gray(img: np.ndarray) -> np.ndarray:
    """Unweighted channel mean of a [3, H, W] image."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ConfigurationError(f"expected a [3, H, W] image, got shape {img.shape}")
    return img.mean(axis=0)


def dft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT (complex128)."""
    return np.fft.fft2(x.astype(np.float64, copy=False))


def idft2(x: np.ndarray) -> np.ndarray:
    """Inverse 2D DFT with 1/(H*W) normalization; idft2(dft2(a)) == a."""
    return np.fft.ifft2(x)


def build_spectrum_target(exemplar: np.ndarray) -> SpectrumTarget:
    """Record the exemplar's per-channel and gray spectra."""
    if exemplar.ndim != 3 or exemplar.shape[0] != 3:
        raise ConfigurationError(
            f"expected a [3, H, W] exemplar, got shape {exemplar.shape}"
        )
    channel_dfts = np.stack([dft2(exemplar[c]) for c in range(3)])
    return SpectrumTarget(
        channel_dfts=channel_dfts,
        gray_dft=dft2(to_gray(exemplar)),
        shape=exemplar.shape[1:],
    )


def _common_phase_factor(img: np.ndarray, target: SpectrumTarget) -> np.ndarray:
    cross = np.zeros(target.shape, dtype=np.complex128)
    for c in range(3):
        cross += dft2(img[c]) * np.conj(target.channel_dfts[c])
    mag = np.abs(cross)
    eps = ZERO_BIN_RELATIVE_EPS * mag.max()
    live = mag > eps
    phi = np.ones_like(cross)
    np.divide(cross, mag, out=phi, where=live)
    return phi


def project_spectrum(img: np.ndarray, target: SpectrumTarget) -> np.ndarray:
    """Nearest image with the target's per-channel Fourier moduli, keeping
    one common phase factor across channels."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ConfigurationError(f"expected a [3, H, W] image, got shape {img.shape}")
    if img.shape[1:] != target.shape:
        raise SpectrumSizeError(
            f"image dims {img.shape[1:]} do not match spectrum target {target.shape}"
        )
    phi = _common_phase_factor(img, target)
    out = np.empty((3, *target.shape), dtype=np.float64)
    for c in range(3):
        complex_channel = idft2(phi * target.channel_dfts[c])
        real = complex_channel.real
        residue = np.linalg.norm(complex_channel.imag)
        signal = np.linalg.norm(real)
        if residue > IMAG_RESIDUE_TOLERANCE * max(signal, 1.0):
            raise SpectexError(
                f"spectrum projection lost realness: imaginary residue {residue:.3e}"
            )
        out[c] = real
    return out.astype(img.dtype, copy=False)


def spectrum_loss_and_grad(
    img: np.ndarray, target: SpectrumTarget
) -> tuple[float, np.ndarray]:
    """Half squared distance to the projection, and its gradient img - proj."""
    projected = project_spectrum(img, target)
    diff = img - projected
    loss = 0.5 * float(np.sum(diff.astype(np.float64, copy=False) ** 2))
    return loss, diff
