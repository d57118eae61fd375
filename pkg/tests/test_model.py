import numpy as np
import pytest

from mixvox.autodiff import Tensor
from mixvox.checkpoint import OptimizerState, load_checkpoint, save_checkpoint
from mixvox.data.exam import GradeBinning
from mixvox.errors import (
    ChecksumError,
    IncompatibleCheckpointError,
    NumericsError,
    ShapeError,
)
from mixvox.losses import exam_targets, total_objective
from mixvox.model import GradeNet, ModelConfig, parameter_count
from mixvox.verify import toy_exam


@pytest.fixture(scope="module")
def small_net():
    return GradeNet(ModelConfig(base_width=4, depth=2, num_bins=2, seed=3))


def _input(seed=0, shape=(3, 8, 8, 4)):
    return Tensor(np.random.default_rng(seed).normal(size=shape).astype(np.float32))


class TestForward:
    def test_zero_heads_give_neutral_outputs(self, small_net):
        net = GradeNet(ModelConfig(base_width=4, depth=2, num_bins=2, seed=3))
        net.params["risk_head.w"].data[:] = 0
        net.params["grade_head.w"].data[:] = 0
        risk, grade = net.forward(_input())
        assert np.all(risk.data == 0.0)
        assert np.allclose(grade.data, 0.5)

    def test_softmax_head_is_simplex(self, small_net):
        _, grade = small_net.forward(_input(1))
        sums = grade.data.sum(axis=0)
        assert np.abs(sums - 1.0).max() < 1e-6
        assert grade.data.min() >= 0

    def test_risk_in_open_interval(self, small_net):
        risk, _ = small_net.forward(_input(2))
        assert risk.data.min() > -1.0 and risk.data.max() < 1.0

    def test_output_extent_matches_input(self, small_net):
        risk, grade = small_net.forward(_input(3, (3, 16, 8, 4)))
        assert risk.data.shape == (1, 16, 8, 4)
        assert grade.data.shape == (2, 16, 8, 4)

    def test_indivisible_extent_rejected(self, small_net):
        with pytest.raises(ShapeError):
            small_net.forward(_input(0, (3, 7, 8, 4)))

    def test_wrong_channels_rejected(self, small_net):
        with pytest.raises(ShapeError):
            small_net.forward(_input(0, (2, 8, 8, 4)))

    def test_nonfinite_input_diagnosed(self, small_net):
        x = _input()
        x.data[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericsError):
            small_net.forward(x)

    def test_forward_is_deterministic(self, small_net):
        x = _input(4)
        r1, g1 = small_net.forward(x)
        r2, g2 = small_net.forward(x)
        assert np.array_equal(r1.data, r2.data)
        assert np.array_equal(g1.data, g2.data)


class TestParameters:
    def test_count_matches_closed_form(self):
        for width, depth, bins in ((4, 2, 2), (8, 3, 2), (6, 2, 4)):
            cfg = ModelConfig(base_width=width, depth=depth, num_bins=bins)
            assert GradeNet(cfg).parameter_count() == parameter_count(cfg)

    def test_doubling_width_follows_formula(self):
        c1 = ModelConfig(base_width=4, depth=2)
        c2 = ModelConfig(base_width=8, depth=2)
        assert GradeNet(c2).parameter_count() == parameter_count(c2)
        assert parameter_count(c2) > 3 * parameter_count(c1)

    def test_same_seed_same_init(self):
        a = GradeNet(ModelConfig(seed=9, base_width=4, depth=2))
        b = GradeNet(ModelConfig(seed=9, base_width=4, depth=2))
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_all_parameters_receive_gradients_under_full_objective(self):
        # no dead parameters: every param gets a nonzero gradient after one
        # step on data with every supervision signal present
        net = GradeNet(ModelConfig(base_width=4, depth=2, num_bins=2, seed=1))
        net.params["region_bias"].data[:] = np.array([-0.2, 0.1], dtype=np.float32)
        exam = toy_exam(0)
        binning = GradeBinning.cs_detection()
        outputs = [net.forward(Tensor(exam.channels.astype(np.float32)))]
        targets = [exam_targets(exam, binning)]
        breakdown = total_objective(outputs, targets, net.region_scores, (1, 1, 1, 1))
        net.zero_grad()
        breakdown.total.backward()
        dead = [name for name, p in net.params.items()
                if p.grad is None or not np.any(p.grad != 0)]
        assert dead == []


class TestRegionScores:
    def test_zero_bias_is_identity(self, small_net):
        small_net.params["region_bias"].data[:] = 0
        row = Tensor(np.array([0.7, 0.3], dtype=np.float32))
        out = small_net.region_scores(row)
        assert np.allclose(out.data, [0.7, 0.3])

    def test_minus_one_bias_suppresses_everything(self, small_net):
        small_net.params["region_bias"].data[:] = -1.0
        out = small_net.region_scores(Tensor(np.array([0.9, 0.1], dtype=np.float32)))
        assert np.all(out.data == 0.0)

    def test_threshold_arithmetic(self, small_net):
        small_net.params["region_bias"].data[:] = np.array([-0.5, -0.05], dtype=np.float32)
        out = small_net.region_scores(Tensor(np.array([0.9, 0.1], dtype=np.float32)))
        assert np.allclose(out.data, [0.4, 0.05], atol=1e-7)

    def test_order_preservation(self, small_net):
        small_net.params["region_bias"].data[:] = -0.2
        rng = np.random.default_rng(0)
        for _ in range(50):
            h = rng.dirichlet(np.ones(2)).astype(np.float32)
            out = small_net.region_scores(Tensor(h)).data
            if h[0] >= h[1]:
                assert out[0] >= out[1]
            else:
                assert out[1] >= out[0]


class TestCheckpoint:
    def test_round_trip_bitwise_forward(self, tmp_path, small_net):
        x = _input(7)
        r1, g1 = small_net.forward(x)
        save_checkpoint(tmp_path / "c.ckpt", small_net, OptimizerState(),
                        history=[{"epoch": 0, "value": 0.5}])
        bundle = load_checkpoint(tmp_path / "c.ckpt")
        r2, g2 = bundle.net.forward(x)
        assert np.array_equal(r1.data, r2.data)
        assert np.array_equal(g1.data, g2.data)
        assert bundle.history == [{"epoch": 0, "value": 0.5}]

    def test_optimizer_state_round_trip(self, tmp_path, small_net):
        state = OptimizerState(step=17)
        for name, p in small_net.params.items():
            state.m[name] = np.full_like(p.data, 0.25)
            state.v[name] = np.full_like(p.data, 0.5)
        save_checkpoint(tmp_path / "c.ckpt", small_net, state)
        bundle = load_checkpoint(tmp_path / "c.ckpt")
        assert bundle.optimizer.step == 17
        assert np.array_equal(bundle.optimizer.m["stem.w"],
                              state.m["stem.w"].astype(np.float32))

    def test_corrupted_blob_is_checksum_error(self, tmp_path, small_net):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, small_net)
        raw = bytearray(path.read_bytes())
        raw[-5] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)

    def test_num_bins_mismatch_is_explicit(self, tmp_path, small_net):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, small_net)
        with pytest.raises(IncompatibleCheckpointError):
            load_checkpoint(path, expect_num_bins=4)
