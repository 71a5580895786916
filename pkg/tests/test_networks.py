import numpy as np
import pytest
import torch

from viewsynth.networks import (CHECKPOINT_FORMAT, ModelConfig, SynthesisModel,
                                load_checkpoint, parameter_checksum,
                                save_checkpoint, sigmoid_to_depth)
from viewsynth.warp import WarpResult


@pytest.fixture(scope="module")
def small_config():
    return ModelConfig(embedding_width=96, d_min=0.5, d_max=3.0, input_size=64,
                       decoder_channels=(32, 24, 16, 12, 8))


@pytest.fixture(scope="module")
def model(small_config):
    torch.manual_seed(0)
    m = SynthesisModel(small_config)
    m.eval()
    return m


class TestModelConfig:
    def test_width_must_divide_by_three(self):
        with pytest.raises(ValueError, match="multiple of 3"):
            ModelConfig(embedding_width=100)

    def test_depth_range_ordering(self):
        with pytest.raises(ValueError, match="d_min"):
            ModelConfig(d_min=2.0, d_max=1.0)

    def test_input_size_multiple_of_32(self):
        with pytest.raises(ValueError, match="32"):
            ModelConfig(input_size=100)

    def test_num_points(self):
        assert ModelConfig(embedding_width=1536).num_points == 512


class TestDepthParameterization:
    def test_range_exact_at_extremes(self):
        lo = sigmoid_to_depth(torch.tensor(1.0, dtype=torch.float64), 0.1, 100.0)
        hi = sigmoid_to_depth(torch.tensor(0.0, dtype=torch.float64), 0.1, 100.0)
        assert abs(lo.item() - 0.1) < 1e-9
        assert abs(hi.item() - 100.0) < 1e-9

    def test_monotone_decreasing(self):
        sig = torch.linspace(0, 1, 101)
        d = sigmoid_to_depth(sig, 0.5, 3.0)
        assert (d[1:] < d[:-1]).all()


class TestEncoder:
    def test_feature_resolutions(self, model):
        x = torch.rand(1, 3, 64, 64)
        out = model.encode(x)
        sizes = [tuple(f.shape[-2:]) for f in out.features]
        assert sizes == [(32, 32), (16, 16), (8, 8), (4, 4), (2, 2)]
        assert out.z.shape == (1, 32, 3)

    def test_full_scale_stride_arithmetic(self):
        torch.manual_seed(1)
        m = SynthesisModel(ModelConfig(input_size=256, embedding_width=96,
                                       decoder_channels=(32, 24, 16, 12, 8)))
        out = m.encode(torch.rand(1, 3, 256, 256))
        sizes = [tuple(f.shape[-2:]) for f in out.features]
        assert sizes == [(128, 128), (64, 64), (32, 32), (16, 16), (8, 8)]

    def test_odd_input_resized_internally(self, model):
        out = model.encode(torch.rand(1, 3, 255, 255))
        assert tuple(out.features[0].shape[-2:]) == (32, 32)

    def test_deterministic_in_eval(self, model):
        x = torch.rand(2, 3, 64, 64)
        a, b = model.encode(x), model.encode(x.clone())
        assert torch.equal(a.z, b.z)
        for fa, fb in zip(a.features, b.features):
            assert torch.equal(fa, fb)

    def test_batch_dimension_carried(self, model):
        out = model.encode(torch.rand(3, 3, 64, 64))
        assert out.z.shape[0] == 3
        assert all(f.shape[0] == 3 for f in out.features)


class TestDecoders:
    def _encode(self, model, b=1):
        return model.encode(torch.rand(b, 3, 64, 64))

    def test_depth_levels_and_range(self, model, small_config):
        enc = self._encode(model)
        levels = model.decode_depth(enc.z, enc.features)
        assert [tuple(d.shape[-2:]) for d in levels] == \
               [(64, 64), (32, 32), (16, 16), (8, 8), (4, 4)]
        for d in levels:
            assert d.min() >= small_config.d_min - 1e-6
            assert d.max() <= small_config.d_max + 1e-6

    def test_nvs_levels_in_unit_range(self, model):
        enc = self._encode(model)
        levels = model.decode_nvs(enc.z, enc.features)
        assert levels[0].shape[-2:] == (64, 64)
        assert levels[0].shape[1] == 3
        for level in levels:
            assert level.min() >= 0 and level.max() <= 1

    def test_weight_sharing_is_one_parameter_set(self, model):
        enc = self._encode(model)
        before = parameter_checksum(model.depth_decoder)
        model.decode_depth(enc.z, enc.features)
        model.decode_depth(enc.z, None)
        assert parameter_checksum(model.depth_decoder) == before
        # both source and target paths literally call the same module
        assert model.decode_depth.__self__ is model

    def test_masked_skips_accepted(self, model):
        enc = self._encode(model)
        warped = [WarpResult(torch.zeros_like(f), torch.zeros_like(f[:, :1]))
                  for f in enc.features]
        levels = model.decode_depth(enc.z, warped)
        assert all(torch.isfinite(d).all() for d in levels)

    def test_none_skips_degrade_gracefully(self, model):
        enc = self._encode(model)
        levels = model.decode_nvs(enc.z, None)
        assert all(torch.isfinite(level).all() for level in levels)

    def test_level_count_mismatch(self, model):
        enc = self._encode(model)
        with pytest.raises(ValueError, match="5 skip"):
            model.decode_depth(enc.z, enc.features[:3])

    def test_skip_size_mismatch(self, model):
        enc = self._encode(model)
        bad = [torch.zeros_like(f) for f in enc.features]
        bad[0] = torch.zeros(1, 64, 16, 16)
        with pytest.raises(ValueError, match="skip level"):
            model.decode_depth(enc.z, bad[::-1] and bad)

    def test_batched_decode(self, model):
        enc = self._encode(model, b=2)
        levels = model.decode_depth(enc.z, enc.features)
        assert levels[0].shape[0] == 2


class TestNaNGuard:
    def test_random_weights_finite_everywhere(self, small_config):
        torch.manual_seed(123)
        m = SynthesisModel(small_config)
        m.eval()
        with torch.no_grad():
            enc = m.encode(torch.rand(1, 3, 64, 64))
            assert torch.isfinite(enc.z).all()
            for f in enc.features:
                assert torch.isfinite(f).all()
            for d in m.decode_depth(enc.z, enc.features):
                assert torch.isfinite(d).all()
            for i in m.decode_nvs(enc.z, enc.features):
                assert torch.isfinite(i).all()


class TestCheckpoint:
    def test_round_trip(self, model, small_config, tmp_path):
        path = tmp_path / "ckpt.pt"
        save_checkpoint(model, path, extra={"step": 7})
        loaded, extra = load_checkpoint(path)
        assert extra["step"] == 7
        assert loaded.config == small_config
        x = torch.rand(1, 3, 64, 64)
        loaded.eval()
        with torch.no_grad():
            assert torch.equal(loaded.encode(x).z, model.encode(x).z)

    def test_format_tag_checked(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"format": "something-else"}, path)
        with pytest.raises(ValueError, match="format"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nowhere.pt"):
            load_checkpoint(tmp_path / "nowhere.pt")

    def test_format_constant_versioned(self):
        assert CHECKPOINT_FORMAT.endswith("/1")
