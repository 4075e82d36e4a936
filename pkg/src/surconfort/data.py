"""Report ingestion, sample encoding, label aggregation, splits, masking,
and the out-of-service filter.

A sample is one (station, date, time-slot) cell.  Features are the
concatenation [one-hot station | 7-dim day-of-week | 2-dim holiday flag |
one-hot slot], so the vector length is S + 9 + T.  Cells that aggregated
at least one passenger report carry a class label in {0..3}; all other
in-service cells of the universe are the unlabeled pool.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from datetime import date as Date
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import DataError

MINUTES_PER_DAY = 1440
N_CLASSES = 4
CONTEXT_DIM = 9  # 7 day-of-week bits + 2 holiday bits

# Default out-of-service window: 01:20 (inclusive) to 04:30 (exclusive).
SERVICE_GAP_START_MIN = 80
SERVICE_GAP_END_MIN = 270


@dataclass(frozen=True)
class Report:
    station_id: int
    timestamp: datetime  # minute resolution, local time
    level: int  # 1..4

    def __post_init__(self):
        if self.level not in (1, 2, 3, 4):
            raise ValueError(f"report level must be in 1..4, got {self.level}")


@dataclass(frozen=True)
class DateContext:
    day_of_week: int  # Monday = 0
    is_holiday: bool

    def encode(self) -> np.ndarray:
        vec = np.zeros(CONTEXT_DIM)
        vec[self.day_of_week] = 1.0
        vec[7 + int(self.is_holiday)] = 1.0
        return vec


@dataclass(frozen=True)
class ServiceWindow:
    """Half-open minutes-of-day window [start, end) removed from service."""
    start_minute: int = SERVICE_GAP_START_MIN
    end_minute: int = SERVICE_GAP_END_MIN

    def removes_slot(self, slot: int, n_slots: int) -> bool:
        start = slot * (MINUTES_PER_DAY // n_slots)
        return self.start_minute <= start < self.end_minute

    def in_service_slots(self, n_slots: int) -> np.ndarray:
        return np.array([s for s in range(n_slots)
                         if not self.removes_slot(s, n_slots)], dtype=np.int32)


def date_context(d: Date, holidays=frozenset()) -> DateContext:
    """Weekends always count as holidays; extra dates come from the calendar."""
    return DateContext(day_of_week=d.weekday(),
                       is_holiday=d.weekday() >= 5 or d in holidays)


@dataclass(frozen=True)
class Sample:
    station_id: int
    date: Date
    context: DateContext
    time_slot: int
    label: int | None
    features: np.ndarray


@dataclass(frozen=True)
class Universe:
    """All (station, date, slot) cells a model reasons over.

    Only in-service slots belong to the universe; the service window is
    applied at construction of any split.
    """
    n_stations: int
    n_slots: int
    dates: tuple[Date, ...]
    holidays: frozenset[Date] = frozenset()
    window: ServiceWindow = ServiceWindow()

    @property
    def service_slots(self) -> np.ndarray:
        return self.window.in_service_slots(self.n_slots)

    @property
    def n_cells(self) -> int:
        return self.n_stations * len(self.dates) * len(self.service_slots)


def encode_features(station_id: int, day_of_week: int, is_holiday: bool,
                    time_slot: int, n_stations: int, n_slots: int) -> np.ndarray:
    if not 0 <= station_id < n_stations:
        raise ValueError(f"station_id {station_id} out of range [0, {n_stations})")
    if not 0 <= time_slot < n_slots:
        raise ValueError(f"time_slot {time_slot} out of range [0, {n_slots})")
    if not 0 <= day_of_week < 7:
        raise ValueError(f"day_of_week {day_of_week} out of range [0, 7)")
    vec = np.zeros(n_stations + CONTEXT_DIM + n_slots)
    vec[station_id] = 1.0
    vec[n_stations + day_of_week] = 1.0
    vec[n_stations + 7 + int(is_holiday)] = 1.0
    vec[n_stations + CONTEXT_DIM + time_slot] = 1.0
    return vec


def encode_sample(station_id: int, d: Date, time_slot: int,
                  n_stations: int, n_slots: int, holidays=frozenset()) -> np.ndarray:
    ctx = date_context(d, holidays)
    return encode_features(station_id, ctx.day_of_week, ctx.is_holiday,
                           time_slot, n_stations, n_slots)


def decode_features(vec: np.ndarray, n_stations: int, n_slots: int
                    ) -> tuple[int, int, bool, int]:
    """Inverse of encode_features: (station, day_of_week, is_holiday, slot)."""
    if vec.shape != (n_stations + CONTEXT_DIM + n_slots,):
        raise ValueError(f"feature vector has wrong length {vec.shape}")
    station = int(np.argmax(vec[:n_stations]))
    dow = int(np.argmax(vec[n_stations:n_stations + 7]))
    holiday = bool(vec[n_stations + 8] == 1.0)
    slot = int(np.argmax(vec[n_stations + CONTEXT_DIM:]))
    return station, dow, holiday, slot


def slot_of_minute(minute_of_day: int, n_slots: int) -> int:
    return minute_of_day // (MINUTES_PER_DAY // n_slots)


def discretize_mean_level(levels) -> int:
    """Mean of raw 1..4 levels, rounded half-up, shifted to class {0..3}."""
    mean = sum(levels) / len(levels)
    return int(min(max(math.floor(mean + 0.5), 1), 4)) - 1


def aggregate_reports(reports, n_slots: int) -> dict[tuple[int, Date, int], int]:
    """Group reports into (station, date, slot) cells and discretize the
    mean congestion level of each cell."""
    if MINUTES_PER_DAY % n_slots != 0:
        raise ValueError(f"number of slots {n_slots} must divide {MINUTES_PER_DAY} minutes")
    buckets: dict[tuple[int, Date, int], list[int]] = {}
    for r in reports:
        minute = r.timestamp.hour * 60 + r.timestamp.minute
        key = (r.station_id, r.timestamp.date(), slot_of_minute(minute, n_slots))
        buckets.setdefault(key, []).append(r.level)
    return {key: discretize_mean_level(levels) for key, levels in buckets.items()}


class SplitDataset:
    """Labeled + unlabeled samples over a universe, stored columnwise.

    The first ``l`` rows are the labeled block.  Feature vectors are
    one-hot encodings materialized on demand (``features``); ``labeled``
    and ``unlabeled`` expose Sample lists for small datasets and tests.
    """

    def __init__(self, n_stations: int, n_slots: int, station: np.ndarray,
                 date_ord: np.ndarray, dow: np.ndarray, holiday: np.ndarray,
                 slot: np.ndarray, label: np.ndarray, n_labeled: int):
        self.S = int(n_stations)
        self.T = int(n_slots)
        self.station = np.asarray(station, dtype=np.int32)
        self.date_ord = np.asarray(date_ord, dtype=np.int32)
        self.dow = np.asarray(dow, dtype=np.int8)
        self.holiday = np.asarray(holiday, dtype=bool)
        self.slot = np.asarray(slot, dtype=np.int32)
        self.label = np.asarray(label, dtype=np.int8)
        self.l = int(n_labeled)
        if not (self.label[:self.l] >= 0).all():
            raise ValueError("labeled block contains unlabeled rows")
        if self.l < self.n and not (self.label[self.l:] < 0).all():
            raise ValueError("unlabeled block contains labeled rows")
        for arr in (self.station, self.date_ord, self.dow, self.holiday,
                    self.slot, self.label):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.station.size)

    @property
    def u(self) -> int:
        return self.n - self.l

    @property
    def input_dim(self) -> int:
        return self.S + CONTEXT_DIM + self.T

    def features(self, idx) -> np.ndarray:
        """Dense one-hot feature matrix for the given sample rows."""
        idx = np.asarray(idx, dtype=np.intp)
        x = np.zeros((idx.size, self.input_dim))
        rows = np.arange(idx.size)
        x[rows, self.station[idx]] = 1.0
        x[rows, self.S + self.dow[idx]] = 1.0
        x[rows, self.S + 7 + self.holiday[idx].astype(np.intp)] = 1.0
        x[rows, self.S + CONTEXT_DIM + self.slot[idx]] = 1.0
        return x

    def sample(self, i: int) -> Sample:
        d = Date.fromordinal(int(self.date_ord[i]))
        ctx = DateContext(int(self.dow[i]), bool(self.holiday[i]))
        lab = int(self.label[i]) if self.label[i] >= 0 else None
        return Sample(station_id=int(self.station[i]), date=d, context=ctx,
                      time_slot=int(self.slot[i]), label=lab,
                      features=self.features([i])[0])

    @property
    def labeled(self) -> list[Sample]:
        return [self.sample(i) for i in range(self.l)]

    @property
    def unlabeled(self) -> list[Sample]:
        return [self.sample(i) for i in range(self.l, self.n)]

    def labels(self, idx=None) -> np.ndarray:
        if idx is None:
            return self.label[:self.l].astype(np.int64)
        return self.label[np.asarray(idx, dtype=np.intp)].astype(np.int64)

    def restrict_labeled(self, keep_rows) -> "SplitDataset":
        """New split whose labeled block is the given subset of labeled rows;
        dropped labeled rows vanish entirely (fold isolation)."""
        keep = np.sort(np.asarray(keep_rows, dtype=np.intp))
        if keep.size and (keep[0] < 0 or keep[-1] >= self.l):
            raise ValueError("labeled row index out of range")
        order = np.concatenate([keep, np.arange(self.l, self.n)])
        return SplitDataset(
            self.S, self.T, self.station[order], self.date_ord[order],
            self.dow[order], self.holiday[order], self.slot[order],
            self.label[order], n_labeled=keep.size)

    def demote_labeled(self, demote_rows) -> "SplitDataset":
        """New split where the given labeled rows join the unlabeled pool."""
        demote = np.sort(np.asarray(demote_rows, dtype=np.intp))
        mask = np.zeros(self.l, dtype=bool)
        mask[demote] = True
        keep = np.flatnonzero(~mask)
        order = np.concatenate([keep, demote, np.arange(self.l, self.n)])
        label = self.label[order].copy()
        label[keep.size:] = -1
        return SplitDataset(
            self.S, self.T, self.station[order], self.date_ord[order],
            self.dow[order], self.holiday[order], self.slot[order],
            label, n_labeled=keep.size)


def build_split(universe: Universe, labels: dict[tuple[int, Date, int], int]
                ) -> SplitDataset:
    """Assemble the full split: labeled cells first (sorted by date, slot,
    station), then every other in-service cell as unlabeled.

    Labels falling on out-of-service slots are dropped with a warning.
    """
    service = universe.service_slots
    service_set = set(int(s) for s in service)
    date_set = set(universe.dates)

    kept: dict[tuple[int, int, int], int] = {}
    for (st, d, slot), cls in labels.items():
        if not 0 <= st < universe.n_stations:
            raise ValueError(f"label references unknown station {st}")
        if d not in date_set:
            raise ValueError(f"label references date {d} outside the universe")
        if slot not in service_set:
            warnings.warn(f"dropping label for out-of-service cell "
                          f"(station {st}, {d}, slot {slot})")
            continue
        if cls not in (0, 1, 2, 3):
            raise ValueError(f"label class must be in 0..3, got {cls}")
        kept[(d.toordinal(), slot, st)] = cls

    dates_ord = np.array([d.toordinal() for d in universe.dates], dtype=np.int32)
    hol = np.array([date_context(d, universe.holidays).is_holiday
                    for d in universe.dates], dtype=bool)
    dows = np.array([d.weekday() for d in universe.dates], dtype=np.int8)

    # Universe grid, ordered (date, slot, station).
    n_d, n_t, n_s = dates_ord.size, service.size, universe.n_stations
    grid_date = np.repeat(dates_ord, n_t * n_s)
    grid_slot = np.tile(np.repeat(service, n_s), n_d)
    grid_station = np.tile(np.arange(n_s, dtype=np.int32), n_d * n_t)
    grid_dow = np.repeat(dows, n_t * n_s)
    grid_hol = np.repeat(hol, n_t * n_s)

    label_col = np.full(grid_date.size, -1, dtype=np.int8)
    if kept:
        slot_pos = {int(s): k for k, s in enumerate(service)}
        date_pos = {int(o): k for k, o in enumerate(dates_ord)}
        for (d_ord, slot, st), cls in kept.items():
            flat = (date_pos[d_ord] * n_t + slot_pos[slot]) * n_s + st
            label_col[flat] = cls

    labeled_rows = np.flatnonzero(label_col >= 0)
    unlabeled_rows = np.flatnonzero(label_col < 0)
    order = np.concatenate([labeled_rows, unlabeled_rows])
    return SplitDataset(
        universe.n_stations, universe.n_slots, grid_station[order],
        grid_date[order], grid_dow[order], grid_hol[order],
        grid_slot[order], label_col[order], n_labeled=labeled_rows.size)


def filter_service_hours(cells, n_slots: int, window: ServiceWindow = ServiceWindow()):
    """Drop (station, date, slot) cells whose slot starts inside the window."""
    return [c for c in cells if not window.removes_slot(c[2], n_slots)]


def mask_labels(split: SplitDataset, ratio: float, seed: int) -> SplitDataset:
    """Keep floor(ratio * l) labeled samples (uniform, seeded); the rest are
    demoted to the unlabeled pool.  Total sample count is unchanged."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"label ratio must be in (0, 1], got {ratio}")
    kept_count = int(math.floor(ratio * split.l))
    if kept_count == split.l:
        return split
    rng = np.random.default_rng(seed)
    kept = rng.choice(split.l, size=kept_count, replace=False)
    mask = np.zeros(split.l, dtype=bool)
    mask[kept] = True
    return split.demote_labeled(np.flatnonzero(~mask))


def kfold_split(n_labeled: int, k: int = 5, seed: int = 0
                ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle then k near-equal folds; returns (train_rows,
    test_rows) index pairs into the labeled block."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n_labeled < k:
        raise ValueError(f"need at least k={k} labeled samples, got {n_labeled}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_labeled)
    base = n_labeled // k
    sizes = [base + 1 if f < n_labeled % k else base for f in range(k)]
    folds = []
    start = 0
    for size in sizes:
        test = perm[start:start + size]
        train = np.concatenate([perm[:start], perm[start + size:]])
        folds.append((np.sort(train), np.sort(test)))
        start += size
    return folds


# ---------------------------------------------------------------------------
# CSV interfaces

def load_reports(path: str | Path) -> list[Report]:
    """reports.csv: station_id,timestamp,level with ISO timestamps
    (YYYY-MM-DDTHH:MM)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"reports file not found: {path}")
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"station_id", "timestamp", "level"} <= set(reader.fieldnames):
            raise DataError(f"unrecognized reports.csv header: {reader.fieldnames}")
        try:
            for rec in reader:
                out.append(Report(station_id=int(rec["station_id"]),
                                  timestamp=datetime.fromisoformat(rec["timestamp"]),
                                  level=int(rec["level"])))
        except (TypeError, ValueError) as exc:
            raise DataError(f"malformed row in {path}: {exc}") from exc
    return out


def save_reports(reports, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "timestamp", "level"])
        for r in reports:
            writer.writerow([r.station_id, r.timestamp.strftime("%Y-%m-%dT%H:%M"), r.level])


def load_holidays(path: str | Path | None) -> frozenset[Date]:
    """holidays.csv: one YYYY-MM-DD per line; a missing path means
    weekends-only."""
    if path is None:
        return frozenset()
    path = Path(path)
    if not path.exists():
        raise DataError(f"holidays file not found: {path}")
    days = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            days.add(Date.fromisoformat(line))
        except ValueError as exc:
            raise DataError(f"malformed date in {path}: {line!r}") from exc
    return frozenset(days)


def save_holidays(holidays, path: str | Path) -> None:
    path = Path(path)
    path.write_text("".join(f"{d.isoformat()}\n" for d in sorted(holidays)),
                    encoding="utf-8")


def date_range(first: Date, last: Date) -> tuple[Date, ...]:
    if last < first:
        raise ValueError("date range end precedes start")
    n = (last - first).days + 1
    return tuple(first + timedelta(days=k) for k in range(n))


def universe_from_reports(reports, n_stations: int, n_slots: int,
                          holidays=frozenset(),
                          window: ServiceWindow = ServiceWindow()) -> Universe:
    """Universe spanning the min..max report dates."""
    if not reports:
        raise DataError("cannot derive a universe from zero reports")
    days = [r.timestamp.date() for r in reports]
    return Universe(n_stations=n_stations, n_slots=n_slots,
                    dates=date_range(min(days), max(days)),
                    holidays=frozenset(holidays), window=window)
