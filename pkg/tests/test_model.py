"""Network assembly: shapes, the residual recurrence, and parameter files."""

import json

import numpy as np
import pytest

from surgecast.autodiff import Tensor
from surgecast.errors import ConfigError, DataError, ShapeError, VersionError
from surgecast.gradcheck import check_full_model, gradcheck_architecture
from surgecast.model import (
    ArchitectureConfig,
    ModelParams,
    ModelState,
    forward_sequence,
    forward_step,
    load_params,
    load_preprocess,
    save_params,
    trace_shapes,
)

TABLE_ROWS = [
    ("Input", (100, 1, 4)),
    ("Dense", (100, 1, 40)),
    ("Dense", (100, 1, 400)),
    ("Dense", (100, 1, 4800)),
    ("Reshape", (100, 1, 120, 40)),
    ("Convolutional", (100, 16, 60, 20)),
    ("Convolutional", (100, 32, 30, 10)),
    ("Convolutional", (100, 64, 15, 5)),
    ("ConvLSTM", (100, 64, 15, 5)),
    ("Pixel Shuffle", (100, 1, 120, 40)),
    ("Reshape", (100, 1, 4800)),
    ("Dense", (100, 1, 4800)),
    ("Output", (100, 1, 4800)),
]


def desk_r8_config(n_steps=40):
    """24x8 grid with the full three-layer encoder and upscale 8."""
    return ArchitectureConfig(
        grid_h=24, grid_w=8, n_steps=n_steps,
        dense_widths=(40, 400, 192), encoder_channels=(16, 32, 64),
    )


class TestArchitectureConfig:
    def test_paper_scale_accepted(self):
        cfg = ArchitectureConfig.paper_scale()
        assert cfg.n_sp == 4800
        assert cfg.latent_hw == (15, 5)
        assert cfg.latent_channels == 64

    def test_upscale_must_match_encoder_depth(self):
        with pytest.raises(ConfigError):
            ArchitectureConfig(grid_h=16, grid_w=16, dense_widths=(8, 256),
                              encoder_channels=(16,), upscale=4)

    def test_latent_channels_must_be_upscale_squared(self):
        with pytest.raises(ConfigError):
            ArchitectureConfig(grid_h=16, grid_w=16, dense_widths=(8, 256),
                              encoder_channels=(8,), upscale=2)

    def test_grid_divisibility(self):
        with pytest.raises(ConfigError):
            ArchitectureConfig(grid_h=10, grid_w=6, dense_widths=(8, 60),
                              encoder_channels=(4,), upscale=2)

    def test_last_dense_width_is_sp_count(self):
        with pytest.raises(ConfigError):
            ArchitectureConfig(grid_h=8, grid_w=8, dense_widths=(8, 100),
                              encoder_channels=(4,), upscale=2)

    def test_even_convlstm_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ArchitectureConfig(grid_h=8, grid_w=8, dense_widths=(8, 64),
                              encoder_channels=(4,), upscale=2, convlstm_kernel=4)

    def test_dict_round_trip(self):
        cfg = ArchitectureConfig.desk_scale()
        assert ArchitectureConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            ArchitectureConfig.from_dict({"grid_h": 8})

    def test_layer_stack_shape(self):
        rows = ArchitectureConfig.paper_scale().layer_stack()
        assert len(rows) == len(TABLE_ROWS)
        assert [r.kind for r in rows[:5]] == ["input", "dense", "dense", "dense", "reshape"]


class TestShapeConformance:
    def test_full_scale_trace_matches_architecture_table(self):
        assert trace_shapes(ArchitectureConfig.paper_scale(), batch=100) == TABLE_ROWS

    def test_desk_r8_sequence_shape(self):
        cfg = desk_r8_config()
        params = ModelParams.init(cfg, seed=0)
        out = forward_sequence(np.zeros((2, 40, 4)), params)
        assert out.shape == (2, 40, 192)


class TestForwardStep:
    def test_zero_params_zero_state_gives_zeros(self):
        cfg = gradcheck_architecture()
        params = ModelParams.init(cfg, seed=0)
        for _, t in params.named_parameters():
            t.data = np.zeros_like(t.data)
        surge, _ = forward_step(np.ones((2, 4)), ModelState.zeros(cfg, 2), params)
        assert np.array_equal(surge.data, np.zeros((2, cfg.n_sp)))

    def test_zero_dt_returns_carried_field(self):
        cfg = ArchitectureConfig(grid_h=8, grid_w=8, n_steps=3, dense_widths=(8, 64),
                                 encoder_channels=(4,), convlstm_kernel=3, upscale=2, dt=0.0)
        params = ModelParams.init(cfg, seed=3)
        state = ModelState.zeros(cfg, 1)
        u = np.random.default_rng(0).uniform(-1, 1, size=(1, 1, 8, 8))
        state.u = Tensor(u)
        surge, _ = forward_step(np.random.default_rng(1).uniform(-1, 1, (1, 4)), state, params)
        assert np.array_equal(surge.data, u.reshape(1, -1))

    def test_input_shape_validation(self):
        cfg = gradcheck_architecture()
        params = ModelParams.init(cfg, seed=0)
        with pytest.raises(ShapeError):
            forward_step(np.zeros((2, 5)), ModelState.zeros(cfg, 2), params)


class TestForwardSequence:
    def test_zero_params_zero_sequence(self):
        cfg = gradcheck_architecture()
        params = ModelParams.init(cfg, seed=0)
        for _, t in params.named_parameters():
            t.data = np.zeros_like(t.data)
        out = forward_sequence(np.random.default_rng(0).uniform(-1, 1, (2, 3, 4)), params)
        assert np.array_equal(out.data, np.zeros((2, 3, cfg.n_sp)))

    def test_single_step_equals_one_forward_step(self):
        cfg = ArchitectureConfig(grid_h=8, grid_w=8, n_steps=1, dense_widths=(8, 64),
                                 encoder_channels=(4,), convlstm_kernel=3, upscale=2)
        params = ModelParams.init(cfg, seed=5)
        x = np.random.default_rng(2).uniform(-1, 1, (2, 1, 4))
        seq = forward_sequence(x, params)
        step, _ = forward_step(x[:, 0], ModelState.zeros(cfg, 2), params)
        assert np.array_equal(seq.data[:, 0], step.data)

    def test_step_count_mismatch(self):
        cfg = gradcheck_architecture()
        params = ModelParams.init(cfg, seed=0)
        with pytest.raises(ShapeError):
            forward_sequence(np.zeros((1, 5, 4)), params)

    def test_causality(self):
        # perturbing later inputs must not change earlier predictions
        cfg = gradcheck_architecture()
        params = ModelParams.init(cfg, seed=7)
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (1, 3, 4))
        base = forward_sequence(x, params).data.copy()
        x2 = x.copy()
        x2[:, 2] += 10.0
        bumped = forward_sequence(x2, params).data
        assert np.array_equal(bumped[:, :2], base[:, :2])
        assert not np.array_equal(bumped[:, 2], base[:, 2])

    def test_determinism(self):
        cfg = gradcheck_architecture()
        x = np.random.default_rng(1).uniform(-1, 1, (2, 3, 4))
        a = forward_sequence(x, ModelParams.init(cfg, seed=11)).data
        b = forward_sequence(x, ModelParams.init(cfg, seed=11)).data
        assert np.array_equal(a, b)


class TestEndToEndGradients:
    def test_loss_gradients_match_finite_differences(self):
        result = check_full_model(seed=0, n_entries=20)
        assert result.ok, result.line()


class TestParameterFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = gradcheck_architecture()
        params = ModelParams.init(cfg, seed=13)
        path = tmp_path / "model.json"
        save_params(params, path, preprocess={"stats": {"mu": [0.5]}})
        loaded = load_params(path)
        assert loaded.config == cfg
        for (na, ta), (nb, tb) in zip(params.named_parameters(), loaded.named_parameters()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data)
        assert load_preprocess(path) == {"stats": {"mu": [0.5]}}

    def test_expected_config_mismatch(self, tmp_path):
        params = ModelParams.init(gradcheck_architecture(), seed=0)
        path = tmp_path / "model.json"
        save_params(params, path)
        with pytest.raises(ConfigError):
            load_params(path, expected_config=ArchitectureConfig.desk_scale())

    def test_corrupted_shape_field(self, tmp_path):
        params = ModelParams.init(gradcheck_architecture(), seed=0)
        path = tmp_path / "model.json"
        save_params(params, path)
        doc = json.loads(path.read_text())
        doc["parameters"][0]["shape"] = [3, 3]
        path.write_text(json.dumps(doc))
        with pytest.raises(ShapeError):
            load_params(path)

    def test_future_version_rejected_without_partial_load(self, tmp_path):
        params = ModelParams.init(gradcheck_architecture(), seed=0)
        path = tmp_path / "model.json"
        save_params(params, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            load_params(path)

    def test_missing_parameter(self, tmp_path):
        params = ModelParams.init(gradcheck_architecture(), seed=0)
        path = tmp_path / "model.json"
        save_params(params, path)
        doc = json.loads(path.read_text())
        doc["parameters"] = doc["parameters"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_params(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{not json")
        with pytest.raises(DataError):
            load_params(path)

    def test_wrong_value_count(self, tmp_path):
        params = ModelParams.init(gradcheck_architecture(), seed=0)
        path = tmp_path / "model.json"
        save_params(params, path)
        doc = json.loads(path.read_text())
        doc["parameters"][0]["data"] = doc["parameters"][0]["data"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_params(path)
