"""Synthetic rail worlds: a ring or line network, a ground-truth congestion
field with spatial propagation between neighboring stations, and a sparse
stream of noisy passenger reports.

The point of the generator is a controlled stand-in for proprietary
reporting data: congestion at connected stations is correlated (that is
what makes the railroad graph informative), labels are sparse, and every
artifact is bit-reproducible from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date as Date
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .data import (Report, ServiceWindow, Universe, date_context, date_range,
                   save_holidays, save_reports)
from .railgraph import PLANAR, RailNetwork, Station, make_connections, save_edges, save_stations

RING = "ring"
LINE = "line"


@dataclass(frozen=True)
class SynthWorldConfig:
    n_stations: int = 30
    topology: str = RING
    station_spacing_km: float = 1.2
    n_days: int = 60
    slots_per_day: int = 144
    # ~4.5% of in-service cells get >= 1 report: roughly 10k labeled cells
    # on the default 30x60 world (the paper-scale labeled FRACTION is ~0.5%,
    # which at desk scale would leave too few labels to train on).
    report_rate: float = 0.046
    # stations report at uneven rates (log-uniform multiplier in
    # [1/spread, spread], renormalized to mean 1): some stations are
    # label-rich, others label-poor, as in real reporting data
    station_rate_spread: float = 4.0
    spatial_smoothing: float = 0.5
    smoothing_rounds: int = 3
    noise_std: float = 0.25
    subjectivity: float = 0.1
    start_date: Date = Date(2024, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if self.n_stations < 3:
            raise ValueError(f"need at least 3 stations, got {self.n_stations}")
        if self.topology not in (RING, LINE):
            raise ValueError(f"unknown topology: {self.topology!r}")
        if not 0.0 <= self.spatial_smoothing < 1.0:
            raise ValueError("spatial_smoothing must lie in [0, 1)")
        if self.report_rate < 0:
            raise ValueError("report_rate must be nonnegative")
        if self.station_rate_spread < 1.0:
            raise ValueError("station_rate_spread must be >= 1")

    @property
    def dates(self) -> tuple[Date, ...]:
        return date_range(self.start_date, self.start_date + timedelta(days=self.n_days - 1))


@dataclass(frozen=True)
class CongestionField:
    """Ground truth over (station, day, slot): real intensity in [1, 4]
    and its discretized class in {0..3}."""
    intensity: np.ndarray  # (S, D, T) float
    classes: np.ndarray    # (S, D, T) int8
    dates: tuple[Date, ...]
    holidays: frozenset[Date]

    def __post_init__(self):
        self.intensity.setflags(write=False)
        self.classes.setflags(write=False)


def generate_network(cfg: SynthWorldConfig) -> RailNetwork:
    """Ring: stations evenly spaced on a circle of circumference
    n * spacing, consecutive pairs connected with wrap-around.  Line: same
    stations along an axis, no wrap-around.  Planar km coordinates."""
    n = cfg.n_stations
    stations = []
    if cfg.topology == RING:
        radius = n * cfg.station_spacing_km / (2.0 * math.pi)
        for k in range(n):
            theta = 2.0 * math.pi * k / n
            stations.append(Station(id=k, name=f"S{k:02d}",
                                    x=radius * math.cos(theta),
                                    y=radius * math.sin(theta)))
        pairs = [(k, (k + 1) % n) for k in range(n)]
    else:
        for k in range(n):
            stations.append(Station(id=k, name=f"S{k:02d}",
                                    x=k * cfg.station_spacing_km, y=0.0))
        pairs = [(k, k + 1) for k in range(n - 1)]
    return RailNetwork(stations=tuple(stations),
                       connections=make_connections(pairs),
                       coordinate_mode=PLANAR)


def _bumps(n_slots: int, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Per-station Gaussian bumps over slot start minutes: (S, T)."""
    minutes = np.arange(n_slots) * (1440 // n_slots)
    return np.exp(-((minutes[None, :] - centers[:, None]) ** 2)
                  / (2.0 * widths[:, None] ** 2))


def _smooth_station_field(rng: np.random.Generator, n: int, lo: float, hi: float,
                          periodic: bool, n_harmonics: int = 3) -> np.ndarray:
    """Random low-frequency field over station positions, mapped to [lo, hi].

    Nearby stations get similar values while the far side of the network
    differs: this is the spatial texture that makes congestion propagate
    along the line.
    """
    pos = np.arange(n) / n
    raw = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        if periodic:
            raw += (rng.normal() * np.cos(2 * math.pi * k * pos)
                    + rng.normal() * np.sin(2 * math.pi * k * pos)) / k
        else:
            raw += rng.normal() * np.cos(math.pi * k * pos) / k
    span = raw.max() - raw.min()
    if span <= 0:
        return np.full(n, 0.5 * (lo + hi))
    return lo + (hi - lo) * (raw - raw.min()) / span


def base_intensity(network: RailNetwork, cfg: SynthWorldConfig,
                   rng: np.random.Generator) -> tuple[np.ndarray, frozenset[Date]]:
    """Per-station diurnal fields before mixing and noise.

    Peak amplitude, peak times and widths, and the morning/evening balance
    vary from station to station as smooth low-frequency fields along the
    line, so a handful of labels cannot pin one station's behavior down but
    its neighbors are informative about it; weekdays run at full amplitude,
    holidays (weekends plus a few drawn weekday holidays) at a reduced one.
    """
    n = network.n_stations
    dates = cfg.dates

    weekdays = [d for d in dates if d.weekday() < 5]
    n_extra = min(len(weekdays), max(1, cfg.n_days // 20))
    extra = rng.choice(len(weekdays), size=n_extra, replace=False)
    holidays = frozenset(weekdays[i] for i in extra)

    periodic = len(network.connections) == n  # ring closes the loop
    amp = _smooth_station_field(rng, n, 2.1, 3.3, periodic)
    evening_balance = _smooth_station_field(rng, n, 0.72, 1.08, periodic)
    morning_center = _smooth_station_field(rng, n, 7.5 * 60, 9.0 * 60, periodic)
    evening_center = _smooth_station_field(rng, n, 17.3 * 60, 19.0 * 60, periodic)
    morning_width = _smooth_station_field(rng, n, 70.0, 100.0, periodic)
    evening_width = _smooth_station_field(rng, n, 90.0, 130.0, periodic)
    midday_level = _smooth_station_field(rng, n, 0.25, 0.45, periodic)

    morning = _bumps(cfg.slots_per_day, morning_center, morning_width)
    evening = _bumps(cfg.slots_per_day, evening_center, evening_width)
    midday = _bumps(cfg.slots_per_day, np.full(n, 13 * 60.0), np.full(n, 260.0))
    day_factor = np.array([0.55 if date_context(d, holidays).is_holiday else 1.0
                           for d in dates])

    # (S, T) per-station shape, scaled per day: (S, D, T)
    shape = morning + evening_balance[:, None] * 0.85 * evening + midday_level[:, None] * midday
    field = 1.0 + amp[:, None, None] * day_factor[None, :, None] * shape[:, None, :]
    return field, holidays


def _neighbor_lists(network: RailNetwork) -> list[list[int]]:
    nbrs: list[list[int]] = [[] for _ in range(network.n_stations)]
    for a, b in sorted(network.connections):
        nbrs[a].append(b)
        nbrs[b].append(a)
    return [sorted(v) for v in nbrs]


def generate_ground_truth(network: RailNetwork, cfg: SynthWorldConfig) -> CongestionField:
    rng = np.random.default_rng([cfg.seed, 0])
    field, holidays = base_intensity(network, cfg, rng)

    alpha = cfg.spatial_smoothing
    if alpha > 0.0:
        nbrs = _neighbor_lists(network)
        for _ in range(cfg.smoothing_rounds):
            neighbor_mean = np.stack([field[idx].mean(axis=0) if idx else field[s]
                                      for s, idx in enumerate(nbrs)])
            field = (1.0 - alpha) * field + alpha * neighbor_mean

    if cfg.noise_std > 0.0:
        field = field + rng.normal(0.0, cfg.noise_std, size=field.shape)

    field = np.clip(field, 1.0, 4.0)
    classes = (np.clip(np.floor(field + 0.5), 1, 4) - 1).astype(np.int8)
    return CongestionField(intensity=field, classes=classes,
                           dates=cfg.dates, holidays=holidays)


def station_rates(cfg: SynthWorldConfig) -> np.ndarray:
    """Per-station expected reports per cell: the base rate times a
    log-uniform multiplier renormalized to mean 1."""
    if cfg.station_rate_spread == 1.0:
        return np.full(cfg.n_stations, cfg.report_rate)
    rng = np.random.default_rng([cfg.seed, 2])
    log_spread = math.log(cfg.station_rate_spread)
    mult = np.exp(rng.uniform(-log_spread, log_spread, size=cfg.n_stations))
    return cfg.report_rate * mult / mult.mean()


def sample_reports(field: CongestionField, cfg: SynthWorldConfig,
                   window: ServiceWindow = ServiceWindow()) -> list[Report]:
    """Poisson reports per in-service cell at the station's rate; each
    report states the cell's level, flipped to an adjacent level with the
    subjectivity probability."""
    rng = np.random.default_rng([cfg.seed, 1])
    n_stations, n_days, n_slots = field.classes.shape
    slot_len = 1440 // n_slots
    service = window.in_service_slots(n_slots)

    reports: list[Report] = []
    if cfg.report_rate <= 0.0:
        return reports
    rates = station_rates(cfg)
    counts = rng.poisson(rates[:, None, None],
                         size=(n_stations, n_days, service.size))
    for s, d, k in zip(*np.nonzero(counts)):
        slot = int(service[k])
        level = int(field.classes[s, d, slot]) + 1
        day = field.dates[d]
        for _ in range(int(counts[s, d, k])):
            reported = level
            if cfg.subjectivity > 0.0 and rng.random() < cfg.subjectivity:
                if reported == 1:
                    reported = 2
                elif reported == 4:
                    reported = 3
                else:
                    reported += 1 if rng.random() < 0.5 else -1
            minute = slot * slot_len + int(rng.integers(slot_len))
            ts = datetime(day.year, day.month, day.day, minute // 60, minute % 60)
            reports.append(Report(station_id=int(s), timestamp=ts, level=reported))
    reports.sort(key=lambda r: (r.timestamp, r.station_id, r.level))
    return reports


@dataclass(frozen=True)
class SynthWorld:
    config: SynthWorldConfig
    network: RailNetwork
    field: CongestionField
    reports: list[Report]

    @property
    def universe(self) -> Universe:
        return Universe(n_stations=self.config.n_stations,
                        n_slots=self.config.slots_per_day,
                        dates=self.field.dates,
                        holidays=self.field.holidays)


def generate_world(cfg: SynthWorldConfig) -> SynthWorld:
    network = generate_network(cfg)
    field = generate_ground_truth(network, cfg)
    reports = sample_reports(field, cfg)
    return SynthWorld(config=cfg, network=network, field=field, reports=reports)


def save_truth(field: CongestionField, path: str | Path,
               window: ServiceWindow = ServiceWindow()) -> None:
    """truth.csv: station,date,slot,class for every in-service cell."""
    import csv

    n_stations, n_days, n_slots = field.classes.shape
    service = window.in_service_slots(n_slots)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station", "date", "slot", "class"])
        for d in range(n_days):
            iso = field.dates[d].isoformat()
            for slot in service:
                for s in range(n_stations):
                    writer.writerow([s, iso, int(slot), int(field.classes[s, d, slot])])


def write_world(world: SynthWorld, out_dir: str | Path) -> dict[str, Path]:
    """Write stations/edges/reports/holidays/truth CSVs for a world."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "stations": out / "stations.csv",
        "edges": out / "edges.csv",
        "reports": out / "reports.csv",
        "holidays": out / "holidays.csv",
        "truth": out / "truth.csv",
    }
    save_stations(world.network, paths["stations"])
    save_edges(world.network, paths["edges"])
    save_reports(world.reports, paths["reports"])
    save_holidays(world.field.holidays, paths["holidays"])
    save_truth(world.field, paths["truth"])
    return paths
