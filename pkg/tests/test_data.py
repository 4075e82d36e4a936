import warnings
from datetime import date, datetime

import numpy as np
import pytest

from surconfort.data import (Report, ServiceWindow, Universe, aggregate_reports,
                             build_split, date_context, date_range, decode_features,
                             discretize_mean_level, encode_features, encode_sample,
                             filter_service_hours, kfold_split, load_holidays,
                             load_reports, mask_labels, save_holidays, save_reports,
                             slot_of_minute)

WED = date(2024, 1, 3)   # Wednesday
SUN = date(2024, 1, 7)   # Sunday


class TestEncoding:
    def test_documented_example(self):
        vec = encode_sample(2, WED, 3, n_stations=4, n_slots=6)
        assert vec.shape == (19,)
        assert set(np.flatnonzero(vec)) == {2, 6, 11, 16}

    def test_sunday_holiday_minimal(self):
        vec = encode_sample(0, SUN, 0, n_stations=1, n_slots=1)
        assert vec.shape == (11,)
        assert set(np.flatnonzero(vec)) == {0, 7, 9, 10}

    def test_out_of_range_station(self):
        with pytest.raises(ValueError):
            encode_sample(4, WED, 0, n_stations=4, n_slots=6)

    def test_out_of_range_slot(self):
        with pytest.raises(ValueError):
            encode_sample(0, WED, 6, n_stations=4, n_slots=6)

    def test_exactly_four_ones(self):
        vec = encode_sample(1, WED, 5, n_stations=3, n_slots=8)
        assert vec.sum() == 4.0
        assert set(np.unique(vec)) == {0.0, 1.0}

    def test_round_trip_100_seeds(self):
        S, T = 7, 12
        for seed in range(100):
            rng = np.random.default_rng(seed)
            station = int(rng.integers(S))
            dow = int(rng.integers(7))
            holiday = bool(rng.integers(2))
            slot = int(rng.integers(T))
            vec = encode_features(station, dow, holiday, slot, S, T)
            assert decode_features(vec, S, T) == (station, dow, holiday, slot)

    def test_extra_holiday_calendar(self):
        ctx = date_context(WED, holidays=frozenset({WED}))
        assert ctx.is_holiday
        assert date_context(WED).is_holiday is False
        assert date_context(SUN).is_holiday is True


class TestAggregation:
    def mk(self, station, hhmm, level, day=WED):
        h, m = hhmm
        return Report(station_id=station, timestamp=datetime(day.year, day.month,
                                                             day.day, h, m), level=level)

    def test_single_report(self):
        cells = aggregate_reports([self.mk(0, (8, 5), 3)], 144)
        assert cells == {(0, WED, 48): 2}

    def test_half_up_rounding(self):
        cells = aggregate_reports([self.mk(0, (8, 0), 1), self.mk(0, (8, 9), 2)], 144)
        assert cells[(0, WED, 48)] == 1  # mean 1.5 -> level 2 -> class 1

    def test_mean_above_half(self):
        reports = [self.mk(0, (8, 0), 4), self.mk(0, (8, 1), 4), self.mk(0, (8, 2), 3)]
        assert aggregate_reports(reports, 144)[(0, WED, 48)] == 3  # mean 3.667

    def test_slot_boundary_belongs_to_later_slot(self):
        assert slot_of_minute(8 * 60, 144) == 48
        assert slot_of_minute(8 * 60 - 1, 144) == 47

    def test_permutation_invariance(self):
        reports = [self.mk(0, (9, i), lv) for i, lv in enumerate([1, 4, 2, 3, 4])]
        a = aggregate_reports(reports, 144)
        b = aggregate_reports(list(reversed(reports)), 144)
        assert a == b

    def test_separate_cells(self):
        reports = [self.mk(0, (8, 0), 1), self.mk(1, (8, 0), 4), self.mk(0, (8, 10), 4)]
        cells = aggregate_reports(reports, 144)
        assert len(cells) == 3

    def test_t_must_divide_day(self):
        with pytest.raises(ValueError):
            aggregate_reports([], 100)

    def test_discretize_rule(self):
        assert discretize_mean_level([3]) == 2
        assert discretize_mean_level([1, 2]) == 1
        assert discretize_mean_level([4, 4, 3]) == 3
        assert discretize_mean_level([1]) == 0
        assert discretize_mean_level([4]) == 3


class TestServiceFilter:
    def test_boundary_slots_at_t144(self):
        w = ServiceWindow()
        assert w.removes_slot(8, 144)       # starts 01:20
        assert w.removes_slot(26, 144)      # starts 04:20
        assert not w.removes_slot(27, 144)  # starts 04:30
        assert not w.removes_slot(72, 144)  # starts 12:00
        assert not w.removes_slot(7, 144)   # starts 01:10

    def test_removes_exactly_19_of_144(self):
        removed = [s for s in range(144) if ServiceWindow().removes_slot(s, 144)]
        assert removed == list(range(8, 27))
        assert len(removed) == 19

    def test_filter_cells(self):
        cells = [(0, WED, 8), (0, WED, 27), (1, WED, 72)]
        assert filter_service_hours(cells, 144) == [(0, WED, 27), (1, WED, 72)]


class TestBuildSplit:
    def small_universe(self):
        return Universe(n_stations=2, n_slots=4, dates=(WED,))

    def test_counting_example(self):
        # 2 stations x 1 day x 4 slots with 3 labeled cells
        universe = self.small_universe()
        labels = {(0, WED, 0): 1, (1, WED, 2): 0, (1, WED, 3): 3}
        split = build_split(universe, labels)
        assert (split.l, split.u, split.n) == (3, 5, 8)

    def test_out_of_service_label_dropped_with_warning(self):
        universe = Universe(n_stations=1, n_slots=144, dates=(WED,))
        labels = {(0, WED, 8): 2, (0, WED, 48): 1}
        with pytest.warns(UserWarning, match="out-of-service"):
            split = build_split(universe, labels)
        assert split.l == 1

    def test_labeled_block_first(self):
        universe = self.small_universe()
        split = build_split(universe, {(1, WED, 1): 2})
        assert split.labels().tolist() == [2]
        assert (split.label[split.l:] == -1).all()

    def test_feature_matrix_matches_encode(self):
        universe = self.small_universe()
        split = build_split(universe, {(1, WED, 1): 2})
        x = split.features(np.arange(split.n))
        for i in range(split.n):
            s = split.sample(i)
            expected = encode_sample(s.station_id, s.date, s.time_slot, 2, 4)
            assert np.array_equal(x[i], expected)
            assert np.array_equal(s.features, expected)

    def test_empty_labels(self):
        split = build_split(self.small_universe(), {})
        assert split.l == 0 and split.n == 8


class TestMaskLabels:
    def build(self, n_labeled=20):
        universe = Universe(n_stations=4, n_slots=8,
                            dates=date_range(WED, date(2024, 1, 12)))
        service = [int(t) for t in universe.service_slots]
        cells = [(s, d, t) for s in range(4) for d in universe.dates for t in service]
        labels = {cells[i]: i % 4 for i in range(n_labeled)}
        return build_split(universe, labels)

    def test_ratio_one_is_identity(self):
        split = self.build()
        masked = mask_labels(split, 1.0, seed=0)
        assert masked.l == split.l and masked.n == split.n

    def test_floor_count(self):
        split = self.build(20)
        assert mask_labels(split, 0.10, seed=0).l == 2
        assert mask_labels(split, 0.75, seed=0).l == 15
        assert mask_labels(split, 0.33, seed=0).l == 6

    def test_same_seed_same_selection(self):
        split = self.build()
        a = mask_labels(split, 0.5, seed=42)
        b = mask_labels(split, 0.5, seed=42)
        assert np.array_equal(a.station[:a.l], b.station[:b.l])
        assert np.array_equal(a.slot[:a.l], b.slot[:b.l])

    def test_total_unchanged_and_demoted_join_pool(self):
        split = self.build()
        masked = mask_labels(split, 0.25, seed=7)
        assert masked.n == split.n
        assert masked.l == 5
        assert masked.u == split.u + 15

    def test_kept_union_demoted_is_original(self):
        split = self.build()
        for seed in range(100):
            masked = mask_labels(split, 0.4, seed=seed)
            orig = set(zip(split.station[:split.l].tolist(),
                           split.date_ord[:split.l].tolist(),
                           split.slot[:split.l].tolist()))
            kept = set(zip(masked.station[:masked.l].tolist(),
                           masked.date_ord[:masked.l].tolist(),
                           masked.slot[:masked.l].tolist()))
            assert kept <= orig
            assert masked.l == 8

    def test_bad_ratio(self):
        split = self.build()
        with pytest.raises(ValueError):
            mask_labels(split, 0.0, seed=0)
        with pytest.raises(ValueError):
            mask_labels(split, 1.5, seed=0)


class TestKfold:
    def test_even_folds(self):
        folds = kfold_split(10, k=5, seed=0)
        assert [t.size for _, t in folds] == [2, 2, 2, 2, 2]

    def test_uneven_folds(self):
        folds = kfold_split(11, k=5, seed=0)
        assert sorted(t.size for _, t in folds) == [2, 2, 2, 2, 3]
        assert folds[0][1].size == 3

    def test_partition_property_100_seeds(self):
        for seed in range(100):
            folds = kfold_split(23, k=5, seed=seed)
            all_test = np.concatenate([t for _, t in folds])
            assert sorted(all_test.tolist()) == list(range(23))
            for train, test in folds:
                assert set(train.tolist()).isdisjoint(test.tolist())
                assert len(train) + len(test) == 23

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            kfold_split(4, k=5, seed=0)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            kfold_split(10, k=1, seed=0)


class TestCsv:
    def test_reports_round_trip(self, tmp_path):
        reports = [Report(0, datetime(2024, 1, 3, 8, 30), 2),
                   Report(3, datetime(2024, 2, 1, 23, 59), 4)]
        save_reports(reports, tmp_path / "reports.csv")
        assert load_reports(tmp_path / "reports.csv") == reports

    def test_holidays_round_trip(self, tmp_path):
        days = {date(2024, 1, 1), date(2024, 2, 11)}
        save_holidays(days, tmp_path / "holidays.csv")
        assert load_holidays(tmp_path / "holidays.csv") == frozenset(days)

    def test_missing_holidays_means_weekends_only(self):
        assert load_holidays(None) == frozenset()

    def test_bad_level_rejected(self):
        with pytest.raises(ValueError):
            Report(0, datetime(2024, 1, 1, 0, 0), 5)
