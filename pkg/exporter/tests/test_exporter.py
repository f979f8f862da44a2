"""Exporter contracts: extraction, byte determinism, manifest emission."""

import struct
import zlib
from pathlib import Path

import numpy as np
import pytest
import torch

from vggw_exporter.cli import main
from vggw_exporter.exporter import (
    CHANNEL_MEANS,
    CONV_LAYOUT,
    ExportError,
    emit_reference_activations,
    export_weights,
    extract_records,
    reference_stats_from_tensor,
)
from vggw_exporter.vggw import pack_vggw, record_checksum

FULL_CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]


def fake_vgg19_state(seed: int = 0, zero_bias: bool = False) -> dict:
    torch.manual_seed(seed)
    widths = [64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512]
    state = {}
    c_in = 3
    for index, c_out in zip(FULL_CONV_INDICES, widths):
        state[f"features.{index}.weight"] = torch.randn(c_out, c_in, 3, 3) * 0.05
        bias = torch.zeros(c_out) if zero_bias else torch.randn(c_out) * 0.01
        state[f"features.{index}.bias"] = bias
        c_in = c_out
    return state


@pytest.fixture
def source_path(tmp_path) -> Path:
    path = tmp_path / "state.pt"
    torch.save(fake_vgg19_state(), path)
    return path


class TestExtraction:
    def test_record_count_and_shapes(self, source_path):
        records = extract_records(torch.load(source_path, weights_only=True))
        assert len(records) == 12
        assert records[0][0] == "conv1_1"
        assert records[0][1].shape == (64, 3, 3, 3)
        assert records[-1][0] == "conv4_4"
        assert records[-1][1].shape == (512, 512, 3, 3)

    def test_missing_layer_aborts_without_writing(self, tmp_path):
        state = fake_vgg19_state()
        del state["features.19.weight"]
        source = tmp_path / "broken.pt"
        torch.save(state, source)
        out = tmp_path / "out.vggw"
        with pytest.raises(ExportError, match="conv4_1"):
            export_weights(str(source), out)
        assert not out.exists()
        assert not out.with_suffix(".manifest").exists()

    def test_mis_shaped_layer_aborts(self, tmp_path):
        state = fake_vgg19_state()
        state["features.0.weight"] = torch.randn(64, 4, 3, 3)
        source = tmp_path / "broken.pt"
        torch.save(state, source)
        with pytest.raises(ExportError, match="conv1_1"):
            export_weights(str(source), tmp_path / "out.vggw")


class TestExport:
    def test_container_layout_and_checksum(self, source_path, tmp_path):
        out = tmp_path / "weights.vggw"
        manifest = export_weights(str(source_path), out)
        data = out.read_bytes()
        magic, version, count, order, _ = struct.unpack("<4sHHB7s", data[:16])
        assert magic == b"VGGW" and version == 1 and count == 12 and order == 0
        means = np.frombuffer(data[16:28], dtype="<f4")
        np.testing.assert_allclose(means, CHANNEL_MEANS, rtol=1e-6)
        (stored_crc,) = struct.unpack("<I", data[-4:])
        assert stored_crc == (zlib.crc32(data[:-4]) & 0xFFFFFFFF)
        assert manifest.layers == [name for name, *_ in CONV_LAYOUT]

    def test_re_export_byte_identical(self, source_path, tmp_path):
        a, b = tmp_path / "a.vggw", tmp_path / "b.vggw"
        export_weights(str(source_path), a)
        export_weights(str(source_path), b)
        assert a.read_bytes() == b.read_bytes()

    def test_manifest_checksums_match_records(self, source_path, tmp_path):
        out = tmp_path / "weights.vggw"
        manifest = export_weights(str(source_path), out)
        records = extract_records(torch.load(source_path, weights_only=True))
        for name, kernel, bias in records:
            assert manifest.checksums[name] == record_checksum(kernel, bias)

    def test_manifest_text_round_trip(self, source_path, tmp_path):
        out = tmp_path / "weights.vggw"
        export_weights(str(source_path), out)
        text = out.with_suffix(".manifest").read_text()
        fields = dict(line.split("=", 1) for line in text.strip().splitlines())
        assert fields["format"] == "VGGW"
        assert fields["record_count"] == "12"
        assert fields["layers"].split(",")[0] == "conv1_1"
        assert float(fields["mean_r"]) == pytest.approx(123.675)

    def test_missing_source_errors(self, tmp_path):
        with pytest.raises(ExportError):
            export_weights(str(tmp_path / "absent.pt"), tmp_path / "out.vggw")


class TestReferenceActivations:
    def test_zero_input_zero_bias_gives_zero_activations(self):
        records = extract_records(fake_vgg19_state(zero_bias=True))
        stats = reference_stats_from_tensor(records, torch.zeros(1, 3, 64, 64))
        assert set(stats) == {
            "reference_conv1_1_sum",
            "reference_conv1_1_l2",
            "reference_pool4_sum",
            "reference_pool4_l2",
        }
        assert all(value == 0.0 for value in stats.values())

    def test_repeatable(self, source_path, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(3)
        image_path = tmp_path / "ref.png"
        Image.fromarray(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)).save(image_path)
        records = extract_records(torch.load(source_path, weights_only=True))
        first = emit_reference_activations(records, image_path)
        second = emit_reference_activations(records, image_path)
        assert first == second

    def test_manifest_includes_reference_block(self, source_path, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(4)
        image_path = tmp_path / "ref.png"
        Image.fromarray(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)).save(image_path)
        out = tmp_path / "weights.vggw"
        manifest = export_weights(str(source_path), out, reference_image=image_path)
        assert manifest.reference_image_sha256
        text = out.with_suffix(".manifest").read_text()
        assert "reference_conv1_1_l2=" in text
        assert "reference_pool4_l2=" in text


class TestCli:
    def test_cli_export(self, source_path, tmp_path, capsys):
        out = tmp_path / "weights.vggw"
        code = main(["export", "--source", str(source_path), "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert "12 records" in capsys.readouterr().out

    def test_cli_bad_source(self, tmp_path, capsys):
        code = main(["export", "--source", str(tmp_path / "nope.pt"), "--out", str(tmp_path / "o.vggw")])
        assert code == 1
        assert "error" in capsys.readouterr().err
