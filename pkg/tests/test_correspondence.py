import numpy as np
import pytest

import _oracles
from conftest import make_feature, make_mask
from voxcor.correspondence import (
    aggregate_landmark_errors,
    categorize,
    center_of_mass,
    knn_segment,
    localize,
)
from voxcor.errors import ParameterError
from voxcor.grid import LabelVolume


def make_labels(data, spacing=(1.0, 1.0, 1.0)):
    return LabelVolume(np.asarray(data, dtype=np.int32), spacing)


class TestCategorize:
    def test_all_combinations(self):
        cases = {
            ("s1", "mr", "s1", "mr"): "SC",
            ("s1", "mr", "s2", "mr"): "DS",
            ("s1", "mr", "s1", "ct"): "DM",
            ("s1", "mr", "s2", "ct"): "G",
        }
        for (qs, qm, ks, km), expect in cases.items():
            assert categorize(qs, qm, ks, km) == expect

    def test_symmetry_of_category(self):
        assert categorize("a", "x", "b", "x") == categorize("b", "x", "a", "x")
        assert categorize("a", "x", "a", "y") == categorize("a", "y", "a", "x")


class TestKnnSegment:
    def test_key_equals_query_k1_exact(self, rng):
        feat = make_feature(rng.standard_normal((4, 4, 4, 3)).astype(np.float32))
        labels = make_labels(rng.integers(1, 5, (4, 4, 4)))
        roi = make_mask(np.ones((4, 4, 4), bool))
        out = knn_segment(feat, feat, labels, roi, roi, k=1)
        np.testing.assert_array_equal(out.data, labels.data)

    def test_two_key_cosine_example(self):
        # query (1, 0) against keys (2, 0) -> label 1 and (0, 3) -> label 2:
        # cosine prefers the collinear key regardless of magnitude
        qf = make_feature(np.array([1.0, 0.0], np.float32).reshape(1, 1, 1, 2))
        kf = make_feature(
            np.array([[2.0, 0.0], [0.0, 3.0]], np.float32).reshape(1, 1, 2, 2)
        )
        kl = make_labels(np.array([[[1, 2]]]))
        q_roi = make_mask(np.ones((1, 1, 1), bool))
        k_roi = make_mask(np.ones((1, 1, 2), bool))
        out = knn_segment(qf, kf, kl, q_roi, k_roi, k=1)
        assert out.data[0, 0, 0] == 1

    def test_matches_brute_oracle(self, rng):
        dims = (3, 4, 3)
        qf = rng.standard_normal(dims + (4,)).astype(np.float32)
        kf = rng.standard_normal(dims + (4,)).astype(np.float32)
        kl = rng.integers(1, 4, dims)
        q_roi = rng.random(dims) > 0.3
        k_roi = rng.random(dims) > 0.2
        k_roi.flat[:8] = True
        out = knn_segment(
            make_feature(qf),
            make_feature(kf),
            make_labels(kl),
            make_mask(q_roi),
            make_mask(k_roi),
            k=3,
        )
        q_rows = qf.reshape(-1, 4)[q_roi.ravel()].astype(np.float64)
        k_rows = kf.reshape(-1, 4)[k_roi.ravel()].astype(np.float64)
        k_labs = kl.ravel()[k_roi.ravel()]
        voted = _oracles.brute_knn_labels(q_rows, k_rows, k_labs, 3, False)
        expect = np.zeros(np.prod(dims), dtype=np.int64)
        expect[np.flatnonzero(q_roi.ravel())] = voted
        np.testing.assert_array_equal(out.data, expect.reshape(dims))

    def test_exclude_self_matches_brute_oracle(self, rng):
        dims = (3, 3, 3)
        f = rng.standard_normal(dims + (3,)).astype(np.float32)
        labels = rng.integers(1, 4, dims)
        roi = np.ones(dims, bool)
        fv = make_feature(f)
        out = knn_segment(
            fv, fv, make_labels(labels),
            make_mask(roi), make_mask(roi), k=5, exclude_self=True,
        )
        rows = f.reshape(-1, 3).astype(np.float64)
        voted = _oracles.brute_knn_labels(rows, rows, labels.ravel(), 5, True)
        np.testing.assert_array_equal(out.data.ravel(), voted)

    def test_exclude_self_changes_result(self, rng):
        dims = (2, 2, 2)
        feat = rng.standard_normal(dims + (3,)).astype(np.float32)
        labels = np.arange(1, 9).reshape(dims)
        roi = make_mask(np.ones(dims, bool))
        fv = make_feature(feat)
        lv = make_labels(labels)
        kept = knn_segment(fv, fv, lv, roi, roi, k=1)
        np.testing.assert_array_equal(kept.data, labels)
        excl = knn_segment(fv, fv, lv, roi, roi, k=1, exclude_self=True)
        assert np.all(excl.data != labels)

    def test_outside_roi_gets_zero(self, rng):
        dims = (3, 3, 3)
        feat = make_feature(rng.standard_normal(dims + (2,)).astype(np.float32))
        labels = make_labels(np.full(dims, 5))
        q_roi = np.zeros(dims, bool)
        q_roi[1, 1, 1] = True
        out = knn_segment(
            feat, feat, labels, make_mask(q_roi), make_mask(np.ones(dims, bool)), k=1
        )
        assert out.data[1, 1, 1] == 5
        out.data[1, 1, 1] = 0
        assert np.all(out.data == 0)

    def test_k_exceeding_keys_rejected(self, rng):
        dims = (2, 2, 2)
        feat = make_feature(rng.standard_normal(dims + (2,)).astype(np.float32))
        labels = make_labels(np.ones(dims))
        k_roi = np.zeros(dims, bool)
        k_roi[0, 0, 0] = True
        k_roi[0, 0, 1] = True
        with pytest.raises(ParameterError, match="k=3"):
            knn_segment(
                feat, feat, labels,
                make_mask(np.ones(dims, bool)), make_mask(k_roi), k=3,
            )
        # exclude_self shrinks the candidate pool by one
        with pytest.raises(ParameterError):
            knn_segment(
                feat, feat, labels,
                make_mask(np.ones(dims, bool)), make_mask(k_roi), k=2,
                exclude_self=True,
            )

    def test_vote_prefers_closer_neighbor_on_count_tie(self):
        # two keys of label 1 and two of label 2; the query is nearest a
        # label-2 key, so the 4-vote tie breaks toward label 2
        qf = make_feature(np.array([1.0, 0.0], np.float32).reshape(1, 1, 1, 2))
        kd = np.array(
            [[0.9, 0.1], [0.0, 1.0], [1.0, 0.05], [0.1, 1.0]], np.float32
        ).reshape(1, 1, 4, 2)
        kl = make_labels(np.array([[[1, 1, 2, 2]]]))
        out = knn_segment(
            qf,
            make_feature(kd),
            kl,
            make_mask(np.ones((1, 1, 1), bool)),
            make_mask(np.ones((1, 1, 4), bool)),
            k=4,
        )
        assert out.data[0, 0, 0] == 2

    def test_channel_mismatch(self, rng):
        qf = make_feature(rng.standard_normal((2, 2, 2, 3)).astype(np.float32))
        kf = make_feature(rng.standard_normal((2, 2, 2, 4)).astype(np.float32))
        roi = make_mask(np.ones((2, 2, 2), bool))
        with pytest.raises(ParameterError):
            knn_segment(qf, kf, make_labels(np.ones((2, 2, 2))), roi, roi, k=1)


class TestCenterOfMass:
    def test_single_voxel(self):
        data = np.zeros((5, 5, 5), np.int32)
        data[2, 3, 4] = 7
        lm = center_of_mass(make_labels(data, (2.0, 1.0, 0.5)), 7)
        assert lm.voxel == (2, 3, 4)
        assert lm.mm == (4.0, 3.0, 2.0)

    def test_cube_centroid(self):
        data = np.zeros((4, 4, 4), np.int32)
        data[0:3, 0:3, 0:3] = 1
        lm = center_of_mass(make_labels(data), 1)
        assert lm.voxel == (1, 1, 1)

    def test_half_up_rounding(self):
        # centroid at 0.5 rounds up to 1
        data = np.zeros((4, 1, 1), np.int32)
        data[0, 0, 0] = 3
        data[1, 0, 0] = 3
        lm = center_of_mass(make_labels(data), 3)
        assert lm.voxel == (1, 0, 0)

    def test_l_shape(self):
        data = np.zeros((5, 5, 1), np.int32)
        data[0, 0:3, 0] = 2
        data[1:3, 0, 0] = 2
        # voxels (0,0) (0,1) (0,2) (1,0) (2,0): centroid (0.6, 0.6)
        lm = center_of_mass(make_labels(data), 2)
        assert lm.voxel == (1, 1, 0)

    def test_absent_label(self):
        with pytest.raises(ParameterError, match="absent"):
            center_of_mass(make_labels(np.zeros((2, 2, 2))), 9)


class TestLocalize:
    def test_self_query_distance_zero(self, rng):
        feat = make_feature(rng.standard_normal((4, 4, 4, 3)).astype(np.float32))
        roi = make_mask(np.ones((4, 4, 4), bool))
        res = localize(feat, (2, 1, 3), feat, roi, reference=(2, 1, 3))
        assert res.voxel == (2, 1, 3)
        assert res.distance_mm == 0.0

    def test_tie_goes_to_lower_linear_index(self):
        kd = np.zeros((1, 1, 4, 2), np.float32)
        kd[0, 0, 1] = [1.0, 0.0]
        kd[0, 0, 3] = [1.0, 0.0]
        qf = make_feature(np.array([1.0, 0.0], np.float32).reshape(1, 1, 1, 2))
        res = localize(qf, (0, 0, 0), make_feature(kd),
                       make_mask(np.ones((1, 1, 4), bool)))
        assert res.voxel == (0, 0, 1)

    def test_exclusion_skips_self(self, rng):
        feat = make_feature(rng.standard_normal((3, 3, 3, 2)).astype(np.float32))
        roi = make_mask(np.ones((3, 3, 3), bool))
        res = localize(feat, (1, 1, 1), feat, roi, exclude=(1, 1, 1))
        assert res.voxel != (1, 1, 1)

    def test_reference_distance_uses_spacing(self):
        kd = np.zeros((1, 1, 5, 1), np.float32)
        kd[0, 0, 4, 0] = 1.0
        qf = make_feature(np.ones((1, 1, 1, 1), np.float32))
        res = localize(
            qf, (0, 0, 0),
            make_feature(kd, (1.0, 1.0, 2.0)),
            make_mask(np.ones((1, 1, 5), bool)),
            reference=(0, 0, 0),
        )
        assert res.voxel == (0, 0, 4)
        assert res.distance_mm == pytest.approx(8.0)

    def test_exhaustive_scan_oracle(self, rng):
        dims = (4, 4, 4)
        qf = rng.standard_normal(dims + (3,)).astype(np.float32)
        kf = rng.standard_normal(dims + (3,)).astype(np.float32)
        roi = rng.random(dims) > 0.3
        roi.flat[:4] = True
        point = (2, 3, 1)
        res = localize(make_feature(qf), point, make_feature(kf), make_mask(roi))
        q = qf[point].astype(np.float64)
        best, best_d = None, np.inf
        for lin in np.flatnonzero(roi.ravel()):
            v = tuple(int(c) for c in np.unravel_index(lin, dims))
            d = float(((kf[v].astype(np.float64) - q) ** 2).sum())
            if d < best_d:
                best, best_d = v, d
        assert res.voxel == best

    def test_query_point_bounds(self, rng):
        feat = make_feature(rng.standard_normal((3, 3, 3, 2)).astype(np.float32))
        roi = make_mask(np.ones((3, 3, 3), bool))
        with pytest.raises(ParameterError):
            localize(feat, (3, 0, 0), feat, roi)

    def test_empty_candidates(self, rng):
        feat = make_feature(rng.standard_normal((2, 2, 2, 2)).astype(np.float32))
        roi = np.zeros((2, 2, 2), bool)
        roi[0, 0, 0] = True
        with pytest.raises(ParameterError):
            localize(feat, (0, 0, 0), feat, make_mask(roi), exclude=(0, 0, 0))


class TestAggregate:
    def test_median_pair(self):
        errors = {1: [1.0, 3.0, 100.0], 2: [2.0, 2.0, 2.0]}
        res = aggregate_landmark_errors(errors, "median-pair")
        # medians are 3 and 2 -> mean 2.5
        assert res.mean == pytest.approx(2.5)
        assert res.sd == pytest.approx(0.5)
        assert res.n == 2

    def test_pooled_mean(self):
        errors = {1: [1.0, 3.0, 100.0], 2: [2.0, 2.0, 2.0]}
        res = aggregate_landmark_errors(errors, "pooled-mean")
        assert res.mean == pytest.approx(110.0 / 6.0)
        assert res.n == 6

    def test_record_iterable_form(self):
        records = [(1, 1.0), (2, 2.0), (1, 3.0), (2, 2.0), (1, 100.0), (2, 2.0)]
        res = aggregate_landmark_errors(records, "median-pair")
        assert res.mean == pytest.approx(2.5)

    def test_single_value_sd_zero(self):
        for mode in ("median-pair", "pooled-mean"):
            res = aggregate_landmark_errors({4: [1.5]}, mode)
            assert res.mean == pytest.approx(1.5)
            assert res.sd == 0.0
            assert res.n == 1

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            aggregate_landmark_errors({1: [1.0]}, "max")

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            aggregate_landmark_errors({})
        with pytest.raises(ParameterError):
            aggregate_landmark_errors({1: []})
