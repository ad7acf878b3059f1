import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_feature, make_volume
from voxcor.errors import ParameterError
from voxcor.grid import (
    LabelVolume,
    Mask,
    Volume,
    avg_pool,
    normalize_ct,
    normalize_mr,
    normalize_p99,
    resample_affine,
    warp_displacement,
)
from voxcor.grid import DisplacementField


class TestContainers:
    def test_volume_requires_3d(self):
        with pytest.raises(ParameterError):
            Volume(np.zeros((4, 4), dtype=np.float32))

    def test_bad_spacing(self):
        with pytest.raises(ParameterError):
            Volume(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))

    def test_label_rejects_fractional(self):
        with pytest.raises(ParameterError):
            LabelVolume(np.array([[[1.5]]]))

    def test_label_accepts_integral_floats(self):
        lv = LabelVolume(np.array([[[2.0]]], dtype=np.float32))
        assert lv.data.dtype == np.int32
        assert lv.data[0, 0, 0] == 2

    def test_mask_coerces_bool(self):
        m = Mask(np.array([[[0.0, 1.0]]]))
        assert m.data.dtype == bool

    def test_displacement_needs_three_components(self):
        with pytest.raises(ParameterError):
            DisplacementField(np.zeros((2, 2, 2, 2)))


class TestNormalize:
    def test_mr_constant_returns_zero_with_warning(self):
        vol = make_volume(np.full((3, 3, 3), 7.0))
        with pytest.warns(RuntimeWarning):
            out = normalize_mr(vol)
        assert np.all(out.data == 0.0)

    def test_mr_0_to_99(self):
        # p97 of the 100-value list with linear interpolation is 96.03
        vals = np.arange(100, dtype=np.float32).reshape(4, 5, 5)
        assert float(np.percentile(vals, 97)) == pytest.approx(96.03)
        out = normalize_mr(make_volume(vals))
        assert out.data.min() == 0.0
        assert out.data.max() == 1.0
        expected = np.minimum(vals.astype(np.float64), 96.03) / 96.03
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_mr_unit_data_monotone(self, rng):
        vals = rng.random((6, 6, 6)).astype(np.float32)
        vals.flat[0] = 0.0
        out = normalize_mr(make_volume(vals))
        assert out.data.min() == 0.0
        assert out.data.max() == 1.0
        flat_in = vals.ravel()
        flat_out = out.data.ravel()
        order = np.argsort(flat_in)
        assert np.all(np.diff(flat_out[order]) >= -1e-7)

    def test_p99_0_to_999(self):
        vals = np.arange(1000, dtype=np.float32).reshape(10, 10, 10)
        assert float(np.percentile(vals, 99)) == pytest.approx(989.01)
        out = normalize_p99(make_volume(vals))
        assert out.data.max() == 1.0
        np.testing.assert_allclose(
            out.data.ravel()[:5], np.arange(5) / 989.01, atol=1e-6
        )

    def test_p99_binary_rescale(self):
        vals = np.zeros((4, 4, 4), dtype=np.float32)
        vals[0, 0, :2] = 1.0
        out = normalize_p99(make_volume(vals))
        assert set(np.unique(out.data)) <= {0.0, 1.0}

    def test_ct_window_points(self):
        vol = make_volume(np.array([[[-150.0, 250.0, 50.0, -500.0, 900.0]]]))
        out = normalize_ct(vol)
        np.testing.assert_allclose(out.data[0, 0], [0.0, 1.0, 0.5, 0.0, 1.0])

    def test_ct_bad_width(self):
        with pytest.raises(ParameterError):
            normalize_ct(make_volume(np.zeros((1, 1, 1))), width=0)


class TestResample:
    def test_identity_bitwise(self, rng):
        vol = make_volume(rng.standard_normal((5, 6, 7)).astype(np.float32))
        out = resample_affine(vol, [(1.0, 0.0)] * 3, "trilinear")
        assert np.array_equal(out.data, vol.data)

    def test_nearest_shift_by_5(self):
        data = np.arange(10 * 2 * 2, dtype=np.float32).reshape(10, 2, 2)
        out = resample_affine(
            make_volume(data), [(1.0, 5.0), (1.0, 0.0), (1.0, 0.0)], "nearest"
        )
        np.testing.assert_array_equal(out.data[:5], data[5:])
        assert np.all(out.data[5:] == 0.0)

    def test_scale_2_doubles_ramp_slope(self):
        data = np.tile(
            np.arange(16, dtype=np.float32)[:, None, None], (1, 3, 3)
        )
        out = resample_affine(
            make_volume(data), [(2.0, 0.0), (1.0, 0.0), (1.0, 0.0)], "trilinear"
        )
        # in-range outputs follow the doubled ramp, the rest are zero-filled
        np.testing.assert_allclose(out.data[:8, 0, 0], 2.0 * np.arange(8))
        assert np.all(out.data[8:] == 0.0)

    def test_sigma_must_be_positive(self):
        with pytest.raises(ParameterError):
            resample_affine(
                make_volume(np.zeros((2, 2, 2))), [(0.0, 0.0)] * 3
            )

    def test_labels_require_nearest(self):
        lv = LabelVolume(np.zeros((2, 2, 2), dtype=np.int32))
        with pytest.raises(ParameterError):
            resample_affine(lv, [(1.0, 0.0)] * 3, "trilinear")
        out = resample_affine(lv, [(1.0, 0.0)] * 3, "nearest")
        assert out.data.dtype == np.int32

    def test_feature_volume_roundtrip_shape(self, rng):
        f = make_feature(rng.standard_normal((4, 5, 6, 3)).astype(np.float32))
        out = resample_affine(f, [(1.0, 1.0), (1.0, 0.0), (1.0, 0.0)])
        assert out.data.shape == f.data.shape


class TestWarpDisplacement:
    def test_zero_displacement_is_identity(self, rng):
        vol = make_volume(rng.standard_normal((4, 5, 6)).astype(np.float32))
        disp = DisplacementField(np.zeros((4, 5, 6, 3), dtype=np.float32))
        out = warp_displacement(vol, disp)
        assert np.array_equal(out.data, vol.data)

    def test_constant_shift_matches_resample(self, rng):
        vol = make_volume(rng.standard_normal((6, 6, 6)).astype(np.float32))
        disp = np.zeros((6, 6, 6, 3), dtype=np.float32)
        disp[..., 0] = 2.0  # mm, spacing 1 -> 2 voxels
        out = warp_displacement(vol, DisplacementField(disp))
        ref = resample_affine(vol, [(1.0, 2.0), (1.0, 0.0), (1.0, 0.0)])
        np.testing.assert_array_equal(out.data, ref.data)

    def test_spacing_scales_displacement(self, rng):
        vol = Volume(
            rng.standard_normal((6, 4, 4)).astype(np.float32),
            spacing=(2.0, 1.0, 1.0),
        )
        disp = np.zeros((6, 4, 4, 3), dtype=np.float32)
        disp[..., 0] = 2.0  # 2 mm at 2 mm spacing -> 1 voxel
        out = warp_displacement(vol, DisplacementField(disp, (2.0, 1.0, 1.0)))
        ref = resample_affine(vol, [(1.0, 1.0), (1.0, 0.0), (1.0, 0.0)])
        np.testing.assert_array_equal(out.data, ref.data)

    def test_dim_mismatch(self):
        vol = make_volume(np.zeros((3, 3, 3)))
        disp = DisplacementField(np.zeros((2, 3, 3, 3), dtype=np.float32))
        with pytest.raises(ParameterError):
            warp_displacement(vol, disp)


class TestAvgPool:
    def test_factor_1_identity(self, rng):
        vol = make_volume(rng.standard_normal((3, 4, 5)).astype(np.float32))
        out = avg_pool(vol, 1)
        np.testing.assert_array_equal(out.data, vol.data)

    def test_constant_block(self):
        vol = make_volume(np.full((4, 4, 4), 5.0))
        out = avg_pool(vol, 4)
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 5.0

    def test_values_1_to_8(self):
        vol = make_volume(np.arange(1, 9, dtype=np.float32).reshape(2, 2, 2))
        out = avg_pool(vol, 2)
        assert out.data[0, 0, 0] == pytest.approx(4.5)

    def test_partial_edge_blocks(self):
        data = np.zeros((5, 4, 4), dtype=np.float32)
        data[4] = 3.0
        out = avg_pool(make_volume(data), 4)
        assert out.data.shape == (2, 1, 1)
        assert out.data[0, 0, 0] == pytest.approx(0.0)
        # the trailing block holds only the z=4 slice
        assert out.data[1, 0, 0] == pytest.approx(3.0)

    def test_pooled_spacing(self):
        vol = Volume(np.zeros((4, 4, 4), dtype=np.float32), (1.0, 2.0, 3.0))
        out = avg_pool(vol, 2)
        assert out.spacing == (2.0, 4.0, 6.0)

    @settings(max_examples=25, deadline=None)
    @given(
        d=st.integers(2, 9), h=st.integers(2, 9), w=st.integers(2, 9),
        factor=st.integers(1, 4), seed=st.integers(0, 10_000),
    )
    def test_full_block_mean_preserved(self, d, h, w, factor, seed):
        # over the region covered by full blocks, pooling preserves the mean
        rng = np.random.default_rng(seed)
        fd, fh, fw = (d // factor) * factor, (h // factor) * factor, (w // factor) * factor
        if min(fd, fh, fw) == 0:
            return
        data = rng.random((fd, fh, fw)).astype(np.float32)
        out = avg_pool(make_volume(data), factor)
        assert float(out.data.mean()) == pytest.approx(float(data.mean()), abs=1e-5)
