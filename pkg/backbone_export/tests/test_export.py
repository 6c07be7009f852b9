"""Export round trips, determinism, and cross-implementation parity.

The parity test drives the consuming engine (modvqa) through its weight
loader and compares its ResNet-stage forward against the torch source
on a fixed probe image.
"""

from __future__ import annotations

import json

import numpy as np
import pytest
import torch

from backbone_export import ExportError, ExportSpec, default_mapping, export
from backbone_export.writer import write_weight_file

modvqa_nn = pytest.importorskip("modvqa.nn")


def spec_for(tmp_path, **kw):
    defaults = dict(source="resnet18_stage2", output=tmp_path / "w.mvqw",
                    pretrained="no", seed=11)
    defaults.update(kw)
    return ExportSpec(**defaults)


class TestExport:
    def test_writes_file_and_manifest(self, tmp_path):
        result = export(spec_for(tmp_path))
        assert result.output.is_file()
        manifest = json.loads(result.manifest.read_text())
        assert manifest["payload_sha256"] == result.payload_sha256
        assert manifest["tensors"]["conv1.weight"] == [64, 3, 7, 7]
        assert len(result.tensors) == 50

    def test_reexport_identical_hash(self, tmp_path):
        a = export(spec_for(tmp_path, output=tmp_path / "a.mvqw"))
        b = export(spec_for(tmp_path, output=tmp_path / "b.mvqw"))
        assert a.payload_sha256 == b.payload_sha256
        assert (tmp_path / "a.mvqw").read_bytes() == (tmp_path / "b.mvqw").read_bytes()

    def test_engine_loads_all_tensors(self, tmp_path):
        result = export(spec_for(tmp_path))
        loaded = modvqa_nn.read_weight_file(result.output)
        assert set(loaded) == set(result.tensors)
        for name, shape in result.tensors.items():
            assert loaded[name].shape == shape
            assert loaded[name].dtype == np.float32

    def test_mapping_must_be_injective(self, tmp_path):
        with pytest.raises(ExportError, match="injective"):
            ExportSpec(
                source="resnet18_stage2", output=tmp_path / "x.mvqw",
                mapping={"a": "same", "b": "same"},
            )

    def test_missing_source_tensor_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="missing from source"):
            export(spec_for(tmp_path, mapping={"not.there": "out"}))

    def test_unknown_source_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="unknown source"):
            ExportSpec(source="alexnet", output=tmp_path / "x.mvqw")

    def test_unsupported_sources_fail_informatively(self, tmp_path):
        with pytest.raises(ExportError, match="ViT"):
            export(spec_for(tmp_path, source="clip_vit"))
        with pytest.raises(ExportError, match="slowfast"):
            export(spec_for(tmp_path, source="slowfast_fast"))

    def test_default_mapping_is_identity(self):
        mapping = default_mapping("resnet18_stage2")
        assert all(k == v for k, v in mapping.items())
        assert "layer2.0.downsample.1.running_var" in mapping


class TestParity:
    def test_forward_parity_on_probe_image(self, tmp_path):
        """Exported weights reproduce the torch first-two-stages forward."""
        from torchvision.models import resnet18

        result = export(spec_for(tmp_path))
        engine_model = modvqa_nn.ResnetStages()
        modvqa_nn.load_weights(result.output, engine_model)

        torch.manual_seed(11)  # same fallback construction as the exporter
        source = resnet18(weights=None).eval()
        rng = np.random.default_rng(42)
        probe = rng.random((1, 3, 64, 64)).astype(np.float32)
        with torch.no_grad():
            x = torch.from_numpy(probe)
            x = source.maxpool(source.relu(source.bn1(source.conv1(x))))
            x = source.layer2(source.layer1(x))
            want = x.numpy()
        got = engine_model(modvqa_nn.Tensor(probe)).data
        assert got.shape == want.shape
        assert float(np.abs(got - want).max()) < 1e-4

    def test_roundtrip_bit_exact(self, tmp_path):
        """The file stores exactly the float32 source values."""
        from torchvision.models import resnet18

        result = export(spec_for(tmp_path))
        torch.manual_seed(11)
        source = resnet18(weights=None)
        state = source.state_dict()
        loaded = modvqa_nn.read_weight_file(result.output)
        for name, arr in loaded.items():
            np.testing.assert_array_equal(arr, state[name].numpy())


class TestWriterFormat:
    def test_minimal_file_parses_in_engine(self, tmp_path):
        path = tmp_path / "tiny.mvqw"
        tensors = {
            "a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.full((4,), 0.25, dtype=np.float32),
        }
        digest = write_weight_file(path, tensors)
        assert len(digest) == 64
        loaded = modvqa_nn.read_weight_file(path)
        np.testing.assert_array_equal(loaded["a"], tensors["a"])
        np.testing.assert_array_equal(loaded["b"], tensors["b"])
