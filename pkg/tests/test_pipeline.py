import numpy as np
import pytest

from voxcor.config import PipelineConfig
from voxcor.encoder import save_axis_features, extract_axis_features
from voxcor.errors import ParameterError
from voxcor.grid import DisplacementField, avg_pool
from voxcor.phantom import PhantomSpec, generate_phantom
from voxcor.pipeline import (
    VolumePair,
    fit_models,
    transform_volume,
    triplanar_transform,
)


def small_cfg(**kw):
    base = dict(
        k=6,
        k_proj=4,
        grid_sp=4,
        normalize_fixed="mr",
        normalize_moving="mr",
    )
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def phantom_pair():
    a = generate_phantom(PhantomSpec(dims=(16, 16, 16), seed=0))
    return VolumePair(a.modality_a, a.modality_b)


@pytest.fixture(scope="module")
def fitted(phantom_pair):
    return fit_models(small_cfg(), [phantom_pair], method="both")


class TestFitModels:
    def test_bundle_shapes(self, fitted):
        assert sorted(fitted.axis_models) == [0, 1, 2]
        for a in range(3):
            model = fitted.axis_models[a]
            assert model.projection.shape == (12, 6)
            assert model.mean.shape == (12,)
        assert fitted.wpls is not None
        assert fitted.wpls.w_fixed.shape == (18, 4)
        assert fitted.wpls.w_moving.shape == (18, 4)
        assert fitted.pca3d is not None
        assert fitted.pca3d.projection.shape == (18, 4)

    def test_meta_contents(self, fitted):
        meta = fitted.meta
        assert meta["channels"] == 18
        assert meta["n_pairs"] == 1
        assert meta["sign_fixed"] == 1 and meta["sign_moving"] == 1
        assert meta["config"]["k"] == 6
        assert meta["config"]["k_proj"] == 4

    def test_single_method_fits(self, phantom_pair):
        w = fit_models(small_cfg(), [phantom_pair], method="wpls")
        assert w.wpls is not None and w.pca3d is None
        p = fit_models(small_cfg(), [phantom_pair], method="pca3d")
        assert p.wpls is None and p.pca3d is not None

    def test_bad_method(self, phantom_pair):
        with pytest.raises(ParameterError):
            fit_models(small_cfg(), [phantom_pair], method="ica")

    def test_no_pairs(self):
        with pytest.raises(ParameterError):
            fit_models(small_cfg(), [])

    def test_two_pairs_pool(self):
        pairs = [
            VolumePair(p.modality_a, p.modality_b)
            for p in (
                generate_phantom(PhantomSpec(dims=(16, 16, 16), seed=s))
                for s in (0, 1)
            )
        ]
        bundle = fit_models(small_cfg(), pairs, method="wpls")
        assert bundle.meta["n_pairs"] == 2
        assert bundle.wpls.w_fixed.shape == (18, 4)

    def test_sign_recorded_and_applied(self, phantom_pair):
        flipped = fit_models(
            small_cfg(), [phantom_pair], method="pca3d", sign_moving=-1
        )
        assert flipped.meta["sign_moving"] == -1

    def test_precomputed_single_pair_only(self, phantom_pair):
        cfg = small_cfg(encoder_kind="precomputed")
        with pytest.raises(ParameterError, match="single training pair"):
            fit_models(cfg, [phantom_pair, phantom_pair])

    def test_precomputed_missing_source(self, phantom_pair):
        cfg = small_cfg(encoder_kind="precomputed")
        with pytest.raises(ParameterError, match="source"):
            fit_models(cfg, [phantom_pair])

    def test_precomputed_round_trip(self, tmp_path, phantom_pair):
        # saving the synthetic encoder's own tokens and re-reading them as
        # precomputed features must reproduce the synthetic fit exactly
        from voxcor.grid import NORMALIZERS

        cfg = small_cfg(mask_enabled=False)
        base = fit_models(cfg, [phantom_pair], method="pca3d")

        for role, vol in (("fixed", phantom_pair.fixed),
                          ("moving", phantom_pair.moving)):
            v = NORMALIZERS["mr"](vol)
            d = tmp_path / role
            d.mkdir()
            for a in range(3):
                stack = extract_axis_features(v, cfg.encoder_spec(), a, cfg.stride)
                save_axis_features(f"{d}/axis_{'SCA'[a]}.vxfeat", stack)

        pre = fit_models(
            small_cfg(mask_enabled=False, encoder_kind="precomputed"),
            [phantom_pair],
            method="pca3d",
            source_fixed=str(tmp_path / "fixed"),
            source_moving=str(tmp_path / "moving"),
        )
        for a in range(3):
            np.testing.assert_allclose(
                pre.axis_models[a].projection,
                base.axis_models[a].projection,
                atol=1e-12,
            )
        np.testing.assert_allclose(
            pre.pca3d.projection, base.pca3d.projection, atol=1e-12
        )


class TestTransform:
    def test_output_shape_and_channels(self, fitted, phantom_pair):
        out = transform_volume(fitted, phantom_pair.fixed, role="fixed")
        assert out.dims == phantom_pair.fixed.dims
        assert out.channels == 4
        assert out.data.dtype == np.float32

    def test_default_method_prefers_wpls(self, fitted, phantom_pair):
        default = transform_volume(fitted, phantom_pair.fixed)
        explicit = transform_volume(fitted, phantom_pair.fixed, method="wpls")
        np.testing.assert_array_equal(default.data, explicit.data)

    def test_pca3d_ignores_role(self, fitted, phantom_pair):
        a = transform_volume(fitted, phantom_pair.fixed, role="fixed",
                             method="pca3d")
        b = transform_volume(fitted, phantom_pair.fixed, role="moving",
                             method="pca3d")
        # both roles normalize with "mr" here, so the outputs agree exactly
        np.testing.assert_array_equal(a.data, b.data)

    def test_wpls_roles_differ(self, fitted, phantom_pair):
        a = transform_volume(fitted, phantom_pair.fixed, role="fixed")
        b = transform_volume(fitted, phantom_pair.fixed, role="moving")
        assert not np.array_equal(a.data, b.data)

    def test_bad_role_and_method(self, fitted, phantom_pair):
        with pytest.raises(ParameterError):
            transform_volume(fitted, phantom_pair.fixed, role="query")
        with pytest.raises(ParameterError):
            transform_volume(fitted, phantom_pair.fixed, method="ica")

    def test_missing_second_stage(self, phantom_pair):
        only_pca = fit_models(small_cfg(), [phantom_pair], method="pca3d")
        with pytest.raises(ParameterError):
            transform_volume(only_pca, phantom_pair.fixed, method="wpls")
        only_wpls = fit_models(small_cfg(), [phantom_pair], method="wpls")
        with pytest.raises(ParameterError):
            transform_volume(only_wpls, phantom_pair.fixed, method="pca3d")

    def test_missing_config_meta(self, fitted, phantom_pair):
        from voxcor.bundle import ProjectionBundle

        stripped = ProjectionBundle(fitted.axis_models, fitted.wpls,
                                    fitted.pca3d, {})
        with pytest.raises(ParameterError, match="config"):
            transform_volume(stripped, phantom_pair.fixed)

    def test_coarse_grid_matches_fit_features(self, phantom_pair):
        # pooling the dense transform to the fitting grid reproduces the
        # features the second stage was fitted on (mask-free config)
        cfg = small_cfg(mask_enabled=False)
        bundle = fit_models(cfg, [phantom_pair], method="pca3d")
        dense = triplanar_transform(bundle, phantom_pair.fixed, role="fixed")
        coarse = avg_pool(dense, cfg.grid_sp)

        rows = coarse.data.reshape(-1, 18).astype(np.float64)
        projected = (rows - bundle.pca3d.mean) @ bundle.pca3d.projection
        again = transform_volume(bundle, phantom_pair.fixed, role="fixed")
        pooled_out = avg_pool(again, cfg.grid_sp)
        # projecting pooled features == pooling projected features (linear)
        np.testing.assert_allclose(
            pooled_out.data.reshape(-1, 4), projected, atol=1e-4
        )

    def test_displacement_ingestion_changes_fit(self, phantom_pair):
        dims = phantom_pair.fixed.dims
        disp = np.zeros(dims + (3,), np.float32)
        disp[..., 0] = 2.0
        shifted = VolumePair(
            phantom_pair.fixed,
            phantom_pair.moving,
            DisplacementField(disp, phantom_pair.fixed.spacing),
        )
        base = fit_models(small_cfg(), [phantom_pair], method="wpls")
        warped = fit_models(small_cfg(), [shifted], method="wpls")
        assert not np.allclose(base.wpls.w_moving, warped.wpls.w_moving)
