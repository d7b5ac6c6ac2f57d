"""Feature encoders: exact layouts, guards, and score-level identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmf.core import LossConfig, Model, ModelDims, activate, score
from fmf.errors import FeatureError
from fmf.features import (
    BaselineVariant,
    NeighborhoodSpec,
    RatingRecord,
    TemporalSpec,
    build_basic,
    build_feedback,
    build_hierarchical,
    build_linear_baselines,
    build_neighborhood,
    build_pairwise,
    build_temporal,
    read_ratings,
    read_taxonomy,
)
from fmf.pipeline import format_instance, parse_line, read_buffer, write_buffer


class TestBasic:
    def test_exact_line(self):
        inst = build_basic(RatingRecord(2, 5, 4.0), num_user=10, num_item=10)
        assert format_instance(inst) == "4 0 1 1 2:1 5:1"

    def test_same_user_same_features(self):
        a = build_basic(RatingRecord(3, 1, 5.0), 10, 10)
        b = build_basic(RatingRecord(3, 7, 1.0), 10, 10)
        assert a.user_feats == b.user_feats

    def test_user_id_at_bound_rejected(self):
        with pytest.raises(FeatureError, match="user id 10"):
            build_basic(RatingRecord(10, 0, 1.0), num_user=10, num_item=10)

    def test_item_id_out_of_range(self):
        with pytest.raises(FeatureError, match="item"):
            build_basic(RatingRecord(0, 12, 1.0), num_user=10, num_item=10)


class TestPairwise:
    def test_exact_line(self):
        inst = build_pairwise(0, 1, 2)
        assert format_instance(inst) == "1 0 1 2 0:1 1:1 2:-1"

    def test_degenerate_pair_rejected(self):
        with pytest.raises(FeatureError, match="degenerate"):
            build_pairwise(0, 3, 3)

    def test_swap_antisymmetry_under_sigmoid(self):
        rng = np.random.default_rng(3)
        dims = ModelDims(0, 4, 6, 3)
        model = Model.zeros(dims)
        model.bias_item = rng.normal(size=6)
        model.factor_user = rng.normal(size=(4, 3))
        model.factor_item = rng.normal(size=(6, 3))
        # user bias zeroed (train with a high user-bias regularization)
        p_fwd = activate(LossConfig.LOGISTIC, score(model, build_pairwise(1, 2, 5)))
        p_rev = activate(LossConfig.LOGISTIC, score(model, build_pairwise(1, 5, 2)))
        assert p_fwd + p_rev == pytest.approx(1.0, abs=1e-12)


class TestTemporal:
    SPEC = TemporalSpec(start=100, end=200, num_user=8)

    def test_window_start_drops_zero_weight(self):
        inst = build_temporal(RatingRecord(2, 1, 4.0, timestamp=100), self.SPEC)
        assert list(inst.user_feats.indices) == [2]
        assert list(inst.user_feats.values) == [1.0]

    def test_midpoint_splits_evenly(self):
        inst = build_temporal(RatingRecord(2, 1, 4.0, timestamp=150), self.SPEC)
        assert list(inst.user_feats.indices) == [2, 10]
        assert list(inst.user_feats.values) == [0.5, 0.5]

    @given(st.integers(100, 200))
    @settings(deadline=None)
    def test_weights_sum_to_one(self, t):
        inst = build_temporal(RatingRecord(0, 0, 1.0, timestamp=t), self.SPEC)
        assert float(np.sum(inst.user_feats.values)) == pytest.approx(1.0)

    def test_missing_timestamp(self):
        with pytest.raises(FeatureError, match="timestamp"):
            build_temporal(RatingRecord(0, 0, 1.0), self.SPEC)

    def test_timestamp_outside_window(self):
        with pytest.raises(FeatureError, match="outside"):
            build_temporal(RatingRecord(0, 0, 1.0, timestamp=999), self.SPEC)


def neighborhood_spec(rated, means, pairs=None):
    if pairs is None:
        pairs = sorted({(i, j) for items in rated.values()
                        for i, _ in items for j, _ in items if i != j})
    return NeighborhoodSpec(
        pair_slots={p: s for s, p in enumerate(pairs)},
        rated={u: tuple(items) for u, items in rated.items()},
        user_means=means)


class TestNeighborhood:
    def test_single_neighbor_unit_value(self):
        spec = neighborhood_spec({0: [(1, 4.0), (2, 3.0)]}, {0: 3.0})
        inst = build_neighborhood(RatingRecord(0, 2, 3.0), spec)
        # history excludes the target item 2, leaving item 1: 1 * (4 - 3)
        assert len(inst.global_feats) == 1
        assert inst.global_feats.values[0] == pytest.approx(1.0)
        assert inst.global_feats.indices[0] == spec.pair_slots[(2, 1)]

    def test_empty_history_reduces_to_basic(self):
        spec = neighborhood_spec({0: [(2, 3.0)]}, {0: 3.0})
        inst = build_neighborhood(RatingRecord(0, 2, 3.0), spec)
        assert len(inst.global_feats) == 0
        assert format_instance(inst) == "3 0 1 1 0:1 2:1"

    def test_four_neighbors_scaled_by_half(self):
        rated = {1: [(i, 4.0) for i in range(4)] + [(9, 2.0)]}
        spec = neighborhood_spec(rated, {1: 3.0},
                                 pairs=[(9, i) for i in range(4)])
        inst = build_neighborhood(RatingRecord(1, 9, 2.0), spec)
        assert len(inst.global_feats) == 4
        np.testing.assert_allclose(inst.global_feats.values, 0.5)

    def test_missing_user_mean(self):
        spec = neighborhood_spec({}, {})
        with pytest.raises(FeatureError, match="mean"):
            build_neighborhood(RatingRecord(5, 0, 1.0), spec)

    def test_values_bounded_by_max_deviation(self):
        rng = np.random.default_rng(11)
        rated = {0: [(i, float(rng.uniform(1, 5))) for i in range(12)]}
        mean = float(np.mean([r for _, r in rated[0]]))
        spec = neighborhood_spec(rated, {0: mean})
        bound = max(abs(r - mean) for _, r in rated[0])
        for item in range(12):
            inst = build_neighborhood(RatingRecord(0, item, 3.0), spec)
            if len(inst.global_feats):
                assert np.max(np.abs(inst.global_feats.values)) <= bound + 1e-12

    def test_from_records_support_threshold(self):
        records = [RatingRecord(u, i, 4.0) for u in range(3) for i in (0, 1)]
        records.append(RatingRecord(0, 2, 4.0))
        spec = NeighborhoodSpec.from_records(records, min_support=2)
        assert (0, 1) in spec.pair_slots and (1, 0) in spec.pair_slots
        assert (0, 2) not in spec.pair_slots  # co-rated by one user only


class TestHierarchical:
    def test_track_and_artist_slots(self):
        inst = build_hierarchical(RatingRecord(0, 3, 4.0), {3: 0}, num_tracks=10)
        assert format_instance(inst) == "4 0 1 2 0:1 3:1 10:1"

    def test_same_artist_shares_feature(self):
        taxonomy = {3: 7, 4: 7}
        a = build_hierarchical(RatingRecord(0, 3, 4.0), taxonomy, 10)
        b = build_hierarchical(RatingRecord(0, 4, 4.0), taxonomy, 10)
        assert a.item_feats.indices[1] == b.item_feats.indices[1] == 17

    def test_missing_taxonomy_entry(self):
        with pytest.raises(FeatureError, match="missing"):
            build_hierarchical(RatingRecord(0, 5, 1.0), {3: 0}, 10)

    def test_same_artist_same_score_with_zero_track_params(self):
        taxonomy = {3: 0, 4: 0}
        dims = ModelDims(0, 2, 10 + 1, 2)
        rng = np.random.default_rng(13)
        model = Model.zeros(dims, base_score=1.0)
        model.factor_user = rng.normal(size=(2, 2))
        # only artist-level parameters are nonzero
        model.bias_item[10] = 0.4
        model.factor_item[10] = rng.normal(size=2)
        a = build_hierarchical(RatingRecord(1, 3, 4.0), taxonomy, 10)
        b = build_hierarchical(RatingRecord(1, 4, 4.0), taxonomy, 10)
        assert score(model, a) == score(model, b)


class TestLinearBaselines:
    def test_user_mean_line(self):
        inst = build_linear_baselines(RatingRecord(2, 5, 4.0),
                                      BaselineVariant.USER_MEAN, 10, 10)
        assert format_instance(inst) == "4 0 1 0 2:1"

    def test_user_item_mean_is_basic_without_factors(self):
        inst = build_linear_baselines(RatingRecord(2, 5, 4.0),
                                      BaselineVariant.USER_ITEM_MEAN, 10, 10)
        assert format_instance(inst) == "4 0 1 1 2:1 5:1"

    def test_score_is_base_plus_biases_with_zero_factors(self):
        dims = ModelDims(0, 10, 10, 0)
        model = Model.zeros(dims, base_score=3.5)
        model.bias_user[2] = 0.25
        model.bias_item[5] = -0.5
        um = build_linear_baselines(RatingRecord(2, 5, 4.0),
                                    BaselineVariant.USER_MEAN, 10, 10)
        uim = build_linear_baselines(RatingRecord(2, 5, 4.0),
                                     BaselineVariant.USER_ITEM_MEAN, 10, 10)
        assert score(model, um) == 3.5 + 0.25
        assert score(model, uim) == 3.5 + 0.25 - 0.5


class TestFeedback:
    def records(self):
        return [RatingRecord(0, 0, 4.0), RatingRecord(0, 1, 2.0),
                RatingRecord(0, 2, 5.0), RatingRecord(0, 3, 3.0),
                RatingRecord(1, 2, 4.0)]

    def test_implicit_values_inverse_sqrt(self):
        out = build_feedback(self.records(), explicit=False,
                             num_user=4, num_item=6)
        first = out[0]
        fb = [(i, v) for i, v in first.user_feats if i >= 4]
        assert len(fb) == 4
        assert all(v == pytest.approx(0.5) for _, v in fb)

    def test_explicit_centered_single_item_drops_zero(self):
        # |history| = 1 and rating equals the user mean: value is 0 and
        # zero-valued features are dropped from the encoding
        out = build_feedback([RatingRecord(1, 2, 4.0)], explicit=True,
                             num_user=4, num_item=6)
        assert len(out) == 1
        assert list(out[0].user_feats.indices) == [1]

    def test_explicit_values_centered_on_user_mean(self):
        out = build_feedback(self.records()[:4], explicit=True,
                             num_user=4, num_item=6)
        mean = (4.0 + 2.0 + 5.0 + 3.0) / 4
        fb = {i - 4: v for i, v in out[0].user_feats if i >= 4}
        for item, rating in ((0, 4.0), (1, 2.0), (2, 5.0), (3, 3.0)):
            assert fb[item] == pytest.approx((rating - mean) / 2.0)

    def test_per_user_instances_share_identical_feedback(self):
        out = build_feedback(self.records(), explicit=False,
                             num_user=4, num_item=6)
        user0 = [inst for inst in out if inst.user_feats.indices[0] == 0]
        assert len(user0) == 4
        texts = {format_instance(inst).split(" 1 ", 1)[0] for inst in user0}
        # identical user feature lists, byte for byte
        reference = user0[0].user_feats
        for inst in user0[1:]:
            assert inst.user_feats == reference

    def test_feedback_start_overlap_rejected(self):
        with pytest.raises(FeatureError, match="overlap"):
            build_feedback(self.records(), explicit=False,
                           num_user=4, num_item=6, feedback_start=2)

    def test_groups_preserve_first_seen_user_order(self):
        out = build_feedback(self.records(), explicit=False,
                             num_user=4, num_item=6)
        users = [int(inst.user_feats.indices[0]) for inst in out]
        assert users == [0, 0, 0, 0, 1]


class TestRoundTrips:
    def all_instances(self):
        taxonomy = {0: 0, 1: 0, 2: 1}
        spec = neighborhood_spec({0: [(0, 4.0), (1, 2.0)]}, {0: 3.0})
        tspec = TemporalSpec(0, 10, 4)
        out = [
            build_basic(RatingRecord(1, 2, 4.0), 4, 4),
            build_pairwise(0, 1, 2),
            build_temporal(RatingRecord(1, 2, 4.0, timestamp=3), tspec),
            build_neighborhood(RatingRecord(0, 1, 2.0), spec),
            build_hierarchical(RatingRecord(2, 1, 3.0), taxonomy, 3),
            build_linear_baselines(RatingRecord(3, 3, 2.0),
                                   BaselineVariant.USER_MEAN, 4, 4),
        ]
        out.extend(build_feedback([RatingRecord(0, 1, 4.0),
                                   RatingRecord(0, 2, 2.0)],
                                  explicit=True, num_user=4, num_item=4))
        return out

    def test_every_builder_survives_text_and_buffer(self, tmp_path):
        instances = self.all_instances()
        reparsed = [parse_line(format_instance(i)) for i in instances]
        assert reparsed == instances
        buf = tmp_path / "x.buf"
        write_buffer(buf, ((None, i) for i in instances))
        from_buffer = list(read_buffer(buf))
        assert len(from_buffer) == len(instances)
        for got, want in zip(from_buffer, instances):
            assert got.label == pytest.approx(want.label, rel=1e-6)
            for group in ("global_feats", "user_feats", "item_feats"):
                g, w = getattr(got, group), getattr(want, group)
                assert np.array_equal(g.indices, w.indices)
                np.testing.assert_allclose(g.values, w.values, rtol=1e-6)


class TestReaders:
    def test_read_ratings(self, tmp_path):
        path = tmp_path / "r.txt"
        path.write_text("# comment\n0 1 4.5\n2 3 2.0 1234\n")
        records = read_ratings(path)
        assert records == [RatingRecord(0, 1, 4.5),
                           RatingRecord(2, 3, 2.0, 1234)]

    def test_read_ratings_bad_line(self, tmp_path):
        path = tmp_path / "r.txt"
        path.write_text("0 1\n")
        with pytest.raises(FeatureError, match="line 1"):
            read_ratings(path)

    def test_read_taxonomy(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("0 4\n1 4\n2 5\n")
        assert read_taxonomy(path) == {0: 4, 1: 4, 2: 5}
