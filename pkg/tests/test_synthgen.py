import math

import numpy as np
import pytest

from surconfort.data import ServiceWindow, aggregate_reports
from surconfort.railgraph import distance
from surconfort.synthgen import (SynthWorldConfig, base_intensity,
                                 generate_ground_truth, generate_network,
                                 generate_world, sample_reports, station_rates,
                                 write_world)


def small_cfg(**overrides):
    base = dict(n_stations=10, n_days=10, slots_per_day=24, report_rate=0.2, seed=4)
    base.update(overrides)
    return SynthWorldConfig(**base)


class TestGenerateNetwork:
    def test_ring_connection_count(self):
        net = generate_network(small_cfg(n_stations=4, topology="ring"))
        assert len(net.connections) == 4

    def test_line_connection_count(self):
        net = generate_network(small_cfg(n_stations=4, topology="line"))
        assert len(net.connections) == 3

    def test_ring_chord_below_arc(self):
        cfg = small_cfg(n_stations=30, station_spacing_km=1.2)
        net = generate_network(cfg)
        for a, b in net.connections:
            assert distance(net, a, b) < 1.2588

    def test_ring_degree_two(self):
        net = generate_network(small_cfg(n_stations=30))
        degree = np.zeros(30, dtype=int)
        for a, b in net.connections:
            degree[a] += 1
            degree[b] += 1
        assert np.all(degree == 2)

    def test_too_few_stations(self):
        with pytest.raises(ValueError):
            SynthWorldConfig(n_stations=2)


class TestGroundTruth:
    def test_deterministic_under_seed(self):
        cfg = small_cfg()
        net = generate_network(cfg)
        a = generate_ground_truth(net, cfg)
        b = generate_ground_truth(net, cfg)
        assert np.array_equal(a.intensity, b.intensity)
        assert np.array_equal(a.classes, b.classes)
        assert a.holidays == b.holidays

    def test_range_and_classes(self):
        cfg = small_cfg()
        field = generate_ground_truth(generate_network(cfg), cfg)
        assert field.intensity.min() >= 1.0
        assert field.intensity.max() <= 4.0
        assert set(np.unique(field.classes)) <= {0, 1, 2, 3}

    def test_no_smoothing_no_noise_equals_base_profile(self):
        cfg = small_cfg(spatial_smoothing=0.0, noise_std=0.0)
        net = generate_network(cfg)
        field = generate_ground_truth(net, cfg)
        base, _ = base_intensity(net, cfg, np.random.default_rng([cfg.seed, 0]))
        assert np.array_equal(field.intensity, np.clip(base, 1.0, 4.0))

    def test_smoothing_pulls_neighbors_closer_than_antipodes(self):
        cfg = small_cfg(n_stations=20, spatial_smoothing=0.5, noise_std=0.1)
        field = generate_ground_truth(generate_network(cfg), cfg)
        f = field.intensity
        n = cfg.n_stations
        connected = np.mean([np.abs(f[s] - f[(s + 1) % n]).mean() for s in range(n)])
        antipodal = np.mean([np.abs(f[s] - f[(s + n // 2) % n]).mean() for s in range(n)])
        assert connected < antipodal

    def test_weekday_above_holiday(self):
        cfg = small_cfg(noise_std=0.0)
        field = generate_ground_truth(generate_network(cfg), cfg)
        weekday = [k for k, d in enumerate(field.dates)
                   if d.weekday() < 5 and d not in field.holidays]
        weekend = [k for k, d in enumerate(field.dates) if d.weekday() >= 5]
        assert field.intensity[:, weekday, :].mean() > field.intensity[:, weekend, :].mean()

    def test_all_classes_present_at_default_config(self):
        cfg = SynthWorldConfig()
        field = generate_ground_truth(generate_network(cfg), cfg)
        assert set(np.unique(field.classes)) == {0, 1, 2, 3}


class TestSampleReports:
    def test_zero_rate_no_reports(self):
        cfg = small_cfg(report_rate=0.0)
        field = generate_ground_truth(generate_network(cfg), cfg)
        assert sample_reports(field, cfg) == []

    def test_reports_only_in_service_hours(self):
        cfg = small_cfg()
        field = generate_ground_truth(generate_network(cfg), cfg)
        window = ServiceWindow()
        for r in sample_reports(field, cfg):
            minute = r.timestamp.hour * 60 + r.timestamp.minute
            slot = minute // (1440 // cfg.slots_per_day)
            assert not window.removes_slot(slot, cfg.slots_per_day)

    def test_noiseless_aggregation_recovers_field(self):
        cfg = small_cfg(report_rate=10.0, subjectivity=0.0, n_stations=4,
                        n_days=3, slots_per_day=12)
        field = generate_ground_truth(generate_network(cfg), cfg)
        labels = aggregate_reports(sample_reports(field, cfg), cfg.slots_per_day)
        assert labels  # plenty of cells covered at rate 10
        date_index = {d: k for k, d in enumerate(field.dates)}
        for (s, d, t), cls in labels.items():
            assert cls == int(field.classes[s, date_index[d], t])

    def test_labeled_fraction_matches_poisson(self):
        # fraction of in-service cells with >= 1 report ~ 1 - exp(-rate)
        cfg = small_cfg(n_stations=20, n_days=30, slots_per_day=48,
                        report_rate=0.05, station_rate_spread=1.0)
        field = generate_ground_truth(generate_network(cfg), cfg)
        labels = aggregate_reports(sample_reports(field, cfg), cfg.slots_per_day)
        n_service = len(ServiceWindow().in_service_slots(cfg.slots_per_day))
        n_cells = cfg.n_stations * cfg.n_days * n_service
        fraction = len(labels) / n_cells
        assert abs(fraction - (1 - math.exp(-cfg.report_rate))) <= 0.02

    def test_station_rates_mean_preserved(self):
        cfg = small_cfg(station_rate_spread=4.0)
        rates = station_rates(cfg)
        assert rates.mean() == pytest.approx(cfg.report_rate)
        assert rates.max() / rates.min() > 1.5

    def test_deterministic(self):
        cfg = small_cfg()
        field = generate_ground_truth(generate_network(cfg), cfg)
        assert sample_reports(field, cfg) == sample_reports(field, cfg)


class TestWriteWorld:
    def test_emits_all_files(self, tmp_path):
        world = generate_world(small_cfg(n_stations=4, n_days=2))
        paths = write_world(world, tmp_path)
        for name in ("stations", "edges", "reports", "holidays", "truth"):
            assert paths[name].exists(), name
        truth_lines = paths["truth"].read_text().splitlines()
        assert truth_lines[0] == "station,date,slot,class"
        n_service = len(ServiceWindow().in_service_slots(24))
        assert len(truth_lines) == 1 + 4 * 2 * n_service
