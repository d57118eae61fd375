import numpy as np
import pytest

from mixvox import autodiff as ad
from mixvox.autodiff import ops
from mixvox.errors import NumericsError, ShapeError


def t(values, **kw):
    return ad.Tensor(np.asarray(values, dtype=np.float64), **kw)


class TestElementwise:
    def test_relu_definition(self):
        out = ops.relu(t([-1.7, 2.5]))
        assert out.data.tolist() == [0.0, 2.5]

    def test_add_broadcast(self):
        out = ops.add(t(np.ones((2, 3))), t([10.0, 20.0, 30.0]))
        assert out.data.shape == (2, 3)
        assert out.data[1].tolist() == [11.0, 21.0, 31.0]

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            ops.add(t(np.ones((2, 3))), t(np.ones((4,))))
        assert "(2, 3)" in str(err.value) and "(4,)" in str(err.value)

    def test_div_guard_rejects_tiny_denominator(self):
        with pytest.raises(NumericsError):
            ops.div(t([1.0]), t([1e-9]))

    def test_div_after_clamp_is_accepted(self):
        den = ops.clamp(t([1e-9]), min_value=ad.epsilon())
        out = ops.div(t([1.0]), den)
        assert np.isfinite(out.data).all()

    def test_log_guard(self):
        with pytest.raises(NumericsError):
            ops.log(t([0.5, 0.0]))

    def test_clamp_values(self):
        out = ops.clamp(t([-1.0, 0.5, 2.0]), min_value=0.0, max_value=1.0)
        assert out.data.tolist() == [0.0, 0.5, 1.0]


class TestSoftmax:
    def test_symmetry_on_zeros(self):
        out = ops.softmax(t([0.0, 0.0]), axis=0)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_simplex_per_voxel(self):
        rng = np.random.default_rng(0)
        out = ops.softmax(t(rng.normal(size=(4, 5, 5, 3))), axis=0)
        sums = out.data.sum(axis=0)
        assert np.all(out.data >= 0)
        assert np.abs(sums - 1.0).max() < 1e-6

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            ops.softmax(t([1.0, 2.0]), axis=3)


class TestConv:
    def test_identity_kernel_preserves_volume(self):
        rng = np.random.default_rng(1)
        x = t(rng.normal(size=(1, 6, 5, 4)))
        w = t(np.ones((1, 1, 1, 1, 1)))
        b = t(np.zeros(1))
        out = ops.conv3d(x, w, b)
        assert np.array_equal(out.data, x.data)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv3d(t(np.zeros((2, 4, 4, 4))), t(np.zeros((1, 3, 3, 3, 3))),
                       t(np.zeros(1)))

    def test_stride2_halves_even_extents(self):
        out = ops.conv3d(t(np.zeros((1, 8, 6, 4))), t(np.zeros((2, 1, 3, 3, 3))),
                         t(np.zeros(2)), stride=2)
        assert out.data.shape == (2, 4, 3, 2)

    def test_upsample_inverts_downsample_shape(self):
        x = t(np.zeros((3, 8, 8, 4)))
        down = ops.conv3d(x, t(np.zeros((3, 3, 3, 3, 3))), t(np.zeros(3)), stride=2)
        up = ops.upsample_nearest(down, 2)
        assert up.data.shape == x.data.shape

    def test_residual_add_preserves_shape(self):
        x = t(np.ones((2, 4, 4, 2)))
        out = ops.add(x, x)
        assert out.data.shape == x.data.shape


class TestReductionsAndSelection:
    def test_mean_axis(self):
        out = ops.mean(t(np.arange(12.0).reshape(3, 4)), axis=1)
        assert out.data.tolist() == [1.5, 5.5, 9.5]

    def test_masked_select_channelwise(self):
        x = t(np.arange(16.0).reshape(2, 2, 2, 2))
        mask = np.zeros((2, 2, 2), dtype=bool)
        mask[0, 0, 0] = mask[1, 1, 1] = True
        out = ops.masked_select(x, mask)
        assert out.data.shape == (2, 2)
        assert out.data[0].tolist() == [0.0, 7.0]

    def test_masked_select_shape_guard(self):
        with pytest.raises(ShapeError):
            ops.masked_select(t(np.zeros((2, 3, 3, 3))), np.zeros((2, 2), dtype=bool))

    def test_affine(self):
        x = t([1.0, 2.0])
        w = t([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        b = t([0.0, 0.0, 10.0])
        out = ops.affine(x, w, b)
        assert out.data.tolist() == [1.0, 2.0, 13.0]


def test_assert_finite_names_context():
    bad = ad.Tensor(np.array([np.nan]))
    with pytest.raises(NumericsError) as err:
        bad.assert_finite("risk head")
    assert "risk head" in str(err.value)
