"""Extraction of VGG-19 convolution weights and reference activations.

Sources are either a torch state-dict file saved on disk or the literal id
``torchvision`` (downloads the published ImageNet-trained checkpoint).
Only the convolutional prefix through conv4_4 is exported: 12 records in
blocks of 2, 2, 4, 4. The reference forward pass rectifies conv outputs
and replaces max pooling with 2x2 average pooling, matching what the
consuming engine computes; activations are recorded as sums and L2 norms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .vggw import pack_vggw, record_checksum, write_atomic

# torchvision vgg19.features indices for the conv prefix through conv4_4
CONV_LAYOUT: tuple[tuple[str, int, int, int], ...] = (
    ("conv1_1", 0, 64, 3),
    ("conv1_2", 2, 64, 64),
    ("conv2_1", 5, 128, 64),
    ("conv2_2", 7, 128, 128),
    ("conv3_1", 10, 256, 128),
    ("conv3_2", 12, 256, 256),
    ("conv3_3", 14, 256, 256),
    ("conv3_4", 16, 256, 256),
    ("conv4_1", 19, 512, 256),
    ("conv4_2", 21, 512, 512),
    ("conv4_3", 23, 512, 512),
    ("conv4_4", 25, 512, 512),
)

# positions (0-based, within the exported records) after which a 2x2
# average pool runs in the truncated chain
_POOL_AFTER = {1, 3, 7, 11}

# ImageNet RGB means on the 0..255 pixel scale
CHANNEL_MEANS = (123.675, 116.28, 103.53)

REFERENCE_CAPTURES = ("conv1_1", "pool4")


class ExportError(Exception):
    """Source checkpoint missing, incomplete, or mis-shaped."""


@dataclass
class ExportManifest:
    source: str
    output: str
    layers: list[str]
    means: tuple[float, float, float]
    checksums: dict[str, int]
    reference: dict[str, float] = field(default_factory=dict)
    reference_image: str = ""
    reference_image_sha256: str = ""

    def to_text(self) -> str:
        lines = [
            "format=VGGW",
            "format_version=1",
            f"source={self.source}",
            f"output={self.output}",
            f"record_count={len(self.layers)}",
            f"layers={','.join(self.layers)}",
            f"mean_r={self.means[0]!r}",
            f"mean_g={self.means[1]!r}",
            f"mean_b={self.means[2]!r}",
        ]
        lines += [f"checksum_{name}={self.checksums[name]:#010x}" for name in self.layers]
        if self.reference_image:
            lines.append(f"reference_image={self.reference_image}")
            lines.append(f"reference_image_sha256={self.reference_image_sha256}")
            lines += [f"{key}={value!r}" for key, value in self.reference.items()]
        return "\n".join(lines) + "\n"


def load_source_state(source: str) -> dict[str, torch.Tensor]:
    """State dict from 'torchvision' or a torch-saved file path."""
    if source == "torchvision":
        from torchvision.models import VGG19_Weights, vgg19

        model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
        return model.state_dict()
    path = Path(source)
    if not path.exists():
        raise ExportError(f"source checkpoint {source} does not exist")
    state = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(state, dict):
        raise ExportError(f"source {source} did not contain a state dict")
    return state


def extract_records(state: dict[str, torch.Tensor]) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Pull the truncated conv chain out of a VGG-19 state dict.

    Aborts on the first missing or mis-shaped layer; nothing is written
    in that case.
    """
    records = []
    for name, index, c_out, c_in in CONV_LAYOUT:
        weight_key = f"features.{index}.weight"
        bias_key = f"features.{index}.bias"
        if weight_key not in state or bias_key not in state:
            raise ExportError(f"source is missing layer {name} ({weight_key})")
        kernel = state[weight_key].detach().cpu().to(torch.float32).numpy()
        bias = state[bias_key].detach().cpu().to(torch.float32).numpy().reshape(-1)
        if kernel.shape != (c_out, c_in, 3, 3):
            raise ExportError(
                f"layer {name} has kernel shape {kernel.shape}, expected {(c_out, c_in, 3, 3)}"
            )
        if bias.shape != (c_out,):
            raise ExportError(f"layer {name} has bias shape {bias.shape}, expected ({c_out},)")
        # torch already stores [out][in][kh][kw]; force contiguous row-major
        records.append((name, np.ascontiguousarray(kernel), np.ascontiguousarray(bias)))
    return records


def _preprocess_reference(path: Path) -> torch.Tensor:
    with Image.open(path) as im:
        raw = np.asarray(im.convert("RGB"), dtype=np.float32)
    tensor = torch.from_numpy(raw.transpose(2, 0, 1).copy())
    means = torch.tensor(CHANNEL_MEANS, dtype=torch.float32).view(3, 1, 1)
    return (tensor - means).unsqueeze(0)


def reference_stats_from_tensor(
    records: list[tuple[str, np.ndarray, np.ndarray]], x: torch.Tensor
) -> dict[str, float]:
    """Run the rectified conv / average-pool chain on a preprocessed NCHW
    tensor, recording sums and L2 norms at the capture depths."""
    stats: dict[str, float] = {}
    with torch.no_grad():
        for i, (name, kernel, bias) in enumerate(records):
            x = F.conv2d(x, torch.from_numpy(kernel), torch.from_numpy(bias), padding=1)
            x = F.relu(x)
            if name in REFERENCE_CAPTURES:
                stats[f"reference_{name}_sum"] = float(x.double().sum())
                stats[f"reference_{name}_l2"] = float(x.double().pow(2).sum().sqrt())
            if i in _POOL_AFTER:
                x = F.avg_pool2d(x, kernel_size=2, stride=2)
                pool_name = f"pool{len([p for p in _POOL_AFTER if p <= i])}"
                if pool_name in REFERENCE_CAPTURES:
                    stats[f"reference_{pool_name}_sum"] = float(x.double().sum())
                    stats[f"reference_{pool_name}_l2"] = float(x.double().pow(2).sum().sqrt())
    return stats


def emit_reference_activations(
    records: list[tuple[str, np.ndarray, np.ndarray]], image_path: Path
) -> dict[str, float]:
    """Reference activations of a test image (RGB, 0..255 minus means)."""
    return reference_stats_from_tensor(records, _preprocess_reference(image_path))


def export_weights(
    source: str, out_path: str | Path, reference_image: str | Path | None = None
) -> ExportManifest:
    """Convert a source checkpoint into a VGGW container plus manifest.

    The manifest file (out_path with a .manifest suffix) is written only
    after every other step has succeeded.
    """
    out_path = Path(out_path)
    state = load_source_state(source)
    records = extract_records(state)

    payload = pack_vggw(records, CHANNEL_MEANS)
    write_atomic(out_path, payload)

    manifest = ExportManifest(
        source=str(source),
        output=str(out_path),
        layers=[name for name, _, _ in records],
        means=CHANNEL_MEANS,
        checksums={name: record_checksum(k, b) for name, k, b in records},
    )
    if reference_image is not None:
        image_path = Path(reference_image)
        manifest.reference = emit_reference_activations(records, image_path)
        manifest.reference_image = str(image_path)
        manifest.reference_image_sha256 = hashlib.sha256(image_path.read_bytes()).hexdigest()

    write_atomic(out_path.with_suffix(".manifest"), manifest.to_text().encode("utf-8"))
    return manifest
