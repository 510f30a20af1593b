"""DenseNet assembly: channel plan, parameter accounting, checkpoints."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpad import model as M
from fpad.errors import (
    BuildError,
    CheckpointDigestError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ShapeError,
)
from fpad.model import TINY, DenseNetConfig


def tiny_config(**overrides):
    fields = dict(block_layers=(2, 2), input_size=32)
    fields.update(overrides)
    return DenseNetConfig(**fields)


class TestConfig:
    def test_defaults(self):
        cfg = DenseNetConfig()
        assert cfg.growth_rate == 12
        assert cfg.block_layers == (6, 12, 24, 16)
        assert cfg.stem_filters == 24
        assert cfg.stem_kernel == 3
        assert cfg.compression == 0.5
        assert cfg.input_channels == 3
        assert cfg.input_size == 256

    def test_json_round_trip(self):
        cfg = tiny_config(growth_rate=8, input_channels=1)
        assert DenseNetConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg

    def test_rejects_bad_values(self):
        with pytest.raises(BuildError):
            DenseNetConfig(growth_rate=0)
        with pytest.raises(BuildError):
            DenseNetConfig(block_layers=())
        with pytest.raises(BuildError):
            DenseNetConfig(input_channels=4)
        with pytest.raises(BuildError):
            DenseNetConfig(compression=0.0)
        with pytest.raises(BuildError):
            # 4 blocks need input divisible by 2^3
            DenseNetConfig(input_size=100)


class TestChannelPlan:
    def test_default_config_plan(self):
        assert M.channel_plan(DenseNetConfig()) == [24, 96, 48, 192, 96, 384, 192, 384]

    def test_tiny_plan(self):
        # stem 24 -> block(2): 48 -> transition: 24 -> block(2): 48
        assert M.channel_plan(tiny_config()) == [24, 48, 24, 48]

    @given(
        st.integers(1, 24),
        st.lists(st.integers(1, 8), min_size=1, max_size=4),
        st.integers(8, 32),
        st.sampled_from([0.5, 1.0]),
    )
    @settings(max_examples=100, deadline=None)
    def test_recurrence_holds(self, k, blocks, stem, compression):
        size = 8 * 2 ** (len(blocks) - 1)
        cfg = DenseNetConfig(
            growth_rate=k, block_layers=tuple(blocks), stem_filters=stem,
            compression=compression, input_size=size,
        )
        plan = M.channel_plan(cfg)
        assert plan[0] == stem
        idx = 1
        channels = stem
        for i, n in enumerate(blocks):
            channels += n * k
            assert plan[idx] == channels
            idx += 1
            if i != len(blocks) - 1:
                channels = int(compression * channels)
                assert plan[idx] == channels
                idx += 1
        assert idx == len(plan)


class TestLayerCount:
    def test_default_is_121(self):
        assert M.conv_layer_count(DenseNetConfig()) == 121

    def test_tiny_count(self):
        # 1 stem + 2*(2+2) bottleneck convs + 1 transition + 1 classifier
        assert M.conv_layer_count(tiny_config()) == 11

    def test_no_bottleneck_counts_single_conv(self):
        cfg = tiny_config(bottleneck=False)
        assert M.conv_layer_count(cfg) == 1 + 4 + 1 + 1


class TestParamAccounting:
    def test_default_param_count_frozen(self):
        assert M.planned_param_count(DenseNetConfig()) == 997_153

    def test_rgb_gray_delta_is_stem_kernel_sq_times_2_filters(self):
        for stem_kernel, stem_filters in [(3, 24), (5, 24), (3, 48), (7, 16)]:
            rgb = DenseNetConfig(stem_kernel=stem_kernel, stem_filters=stem_filters)
            gray = DenseNetConfig(
                stem_kernel=stem_kernel, stem_filters=stem_filters, input_channels=1
            )
            delta = M.planned_param_count(rgb) - M.planned_param_count(gray)
            assert delta == stem_kernel**2 * 2 * stem_filters
        assert (
            M.planned_param_count(DenseNetConfig())
            - M.planned_param_count(DenseNetConfig(input_channels=1))
            == 432
        )

    def test_closed_form_matches_built_model(self):
        for cfg in (
            tiny_config(),
            tiny_config(bottleneck=False),
            tiny_config(growth_rate=6, stem_filters=10, input_channels=1),
            DenseNetConfig(block_layers=(3, 4, 5), input_size=64, compression=1.0),
        ):
            model = M.build_model(cfg, seed=0)
            assert M.count_trainable_params(model) == M.planned_param_count(cfg)

    @given(
        st.integers(2, 10),
        st.lists(st.integers(1, 3), min_size=1, max_size=3),
        st.booleans(),
        st.sampled_from([1, 3]),
    )
    @settings(max_examples=20, deadline=None)
    def test_closed_form_matches_built_model_random(self, k, blocks, bottleneck, channels):
        size = 8 * 2 ** (len(blocks) - 1)
        cfg = DenseNetConfig(
            growth_rate=k, block_layers=tuple(blocks), stem_filters=8,
            bottleneck=bottleneck, input_channels=channels, input_size=size,
        )
        model = M.build_model(cfg, seed=1)
        assert M.count_trainable_params(model) == M.planned_param_count(cfg)

    def test_calibration_search_is_sorted_by_distance(self):
        results = M.calibration_search(target=561_002)
        deltas = [abs(r["delta"]) for r in results]
        assert deltas == sorted(deltas)
        assert all("params" in r and "compression" in r for r in results)
        # No grid point hits the target exactly; the nearest is recorded.
        assert all(r["delta"] != 0 for r in results)


class TestForward:
    def test_probability_outputs(self):
        model = M.build_model(tiny_config(), seed=0)
        model.eval()
        x = np.random.default_rng(0).uniform(0, 1, (3, 3, 32, 32)).astype(np.float32)
        probs = model.forward(x)
        assert probs.shape == (3,)
        assert np.all((probs >= 0) & (probs <= 1))

    def test_batch_invariance(self):
        model = M.build_model(tiny_config(), seed=0)
        model.eval()
        x = np.random.default_rng(1).uniform(0, 1, (4, 3, 32, 32)).astype(np.float32)
        batch = model.forward(x)
        singles = np.concatenate([model.forward(x[i : i + 1]) for i in range(4)])
        assert np.array_equal(batch, singles)

    def test_input_shape_enforced(self):
        model = M.build_model(tiny_config(), seed=0)
        with pytest.raises(ShapeError):
            model.forward(np.zeros((1, 3, 16, 16), dtype=np.float32))
        with pytest.raises(ShapeError):
            model.forward(np.zeros((1, 1, 32, 32), dtype=np.float32))

    def test_whole_network_gradient(self):
        # End-to-end finite-difference check through stem, dense blocks,
        # transition, head: the strongest wiring test available.
        cfg = DenseNetConfig(
            growth_rate=2, block_layers=(1, 1), stem_filters=2, input_size=8
        )
        model = M.build_model(cfg, seed=0, dtype=np.float64)
        model.eval()  # freeze BN stats so f(x) is deterministic
        rng = np.random.default_rng(2)
        x = rng.uniform(0.2, 0.8, (2, 3, 8, 8))
        labels = np.array([1.0, 0.0])

        from fpad.nn import sigmoid_bce_with_logits
        from helpers import finite_difference_gradient, relative_error

        logits = model.forward_logits(x)
        _, grad_logits = sigmoid_bce_with_logits(logits, labels)
        model.zero_grad()
        model.backward(grad_logits)
        analytic = {name: t.grad.copy() for name, t in model.named_parameters()}

        checked = 0
        for name, tensor in model.named_parameters():
            if "conv" not in name and "weight" not in name:
                continue

            def f(values, tensor=tensor):
                saved = tensor.data.copy()
                tensor.data[...] = values
                loss = sigmoid_bce_with_logits(model.forward_logits(x), labels)[0]
                tensor.data[...] = saved
                return loss

            numeric = finite_difference_gradient(f, tensor.data.copy(), eps=1e-6)
            assert relative_error(analytic[name], numeric) < 1e-4, name
            checked += 1
            if checked >= 3:
                break
        assert checked == 3


class TestCheckpoint:
    def _model(self, seed=0):
        return M.build_model(tiny_config(), seed=seed)

    def test_round_trip_bitwise(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(model, path)
        loaded = M.load_checkpoint(path)
        assert loaded.config == model.config
        for (na, a), (nb, b) in zip(model.named_parameters(), loaded.named_parameters()):
            assert na == nb
            assert np.array_equal(a.data, b.data)
        for (na, a), (nb, b) in zip(model.named_buffers(), loaded.named_buffers()):
            assert na == nb
            assert np.array_equal(a.data, b.data)

    def test_forward_identical_after_reload(self, tmp_path):
        model = self._model()
        model.eval()
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(model, path)
        loaded = M.load_checkpoint(path)
        loaded.eval()
        x = np.random.default_rng(3).uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
        assert np.array_equal(model.forward(x), loaded.forward(x))

    def test_header_readable_without_payload(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(model, path)
        header = M.read_checkpoint_header(path)
        assert header["format_version"] == 1
        assert header["param_count"] == M.count_trainable_params(model)
        assert DenseNetConfig.from_json(header["config"]) == model.config
        kinds = {t["kind"] for t in header["tensors"]}
        assert kinds == {"param", "buffer"}

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(self._model(), path)
        raw = bytearray(path.read_bytes())
        raw[:8] = b"NOTMAGIC"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError):
            M.load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(self._model(), path)
        raw = path.read_bytes()
        header_len = struct.unpack("<I", raw[8:12])[0]
        header = json.loads(raw[12 : 12 + header_len])
        header["format_version"] = 99
        blob = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(raw[:8] + struct.pack("<I", len(blob)) + blob + raw[12 + header_len :])
        with pytest.raises(CheckpointVersionError):
            M.load_checkpoint(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(self._model(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 64])
        with pytest.raises(CheckpointTruncatedError):
            M.load_checkpoint(path)

    def test_single_flipped_payload_byte_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(self._model(), path)
        raw = bytearray(path.read_bytes())
        raw[-10] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointDigestError):
            M.load_checkpoint(path)

    def test_float64_model_refused(self, tmp_path):
        model = M.build_model(tiny_config(), seed=0, dtype=np.float64)
        with pytest.raises(CheckpointError):
            M.save_checkpoint(model, tmp_path / "m.ckpt")

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"")
        with pytest.raises((CheckpointFormatError, CheckpointTruncatedError)):
            M.load_checkpoint(path)


class TestDeterminism:
    def test_same_seed_same_weights(self):
        a = M.build_model(tiny_config(), seed=7)
        b = M.build_model(tiny_config(), seed=7)
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data)

    def test_different_seed_different_weights(self):
        a = M.build_model(tiny_config(), seed=7)
        b = M.build_model(tiny_config(), seed=8)
        assert any(
            not np.array_equal(ta.data, tb.data)
            for (_, ta), (_, tb) in zip(a.named_parameters(), b.named_parameters())
        )

    def test_tensor_names_unique(self):
        model = M.build_model(tiny_config(), seed=0)
        names = [n for n, _ in model.named_parameters()] + [n for n, _ in model.named_buffers()]
        assert len(names) == len(set(names))
