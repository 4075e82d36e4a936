"""Experiment orchestration: trains and evaluates each (method, ratio,
fold, seed) job, with fold isolation (test cells never reach training,
early-stopping validation, or the masking pool) and deterministic results
for a given config, serial or parallel."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date as Date
from datetime import time as Time

import numpy as np

from .. import data as datamod
from ..data import (SplitDataset, Universe, aggregate_reports, build_split,
                    encode_sample, kfold_split, load_holidays, load_reports,
                    mask_labels, slot_of_minute)
from ..diffusion import (DiffusionConfig, label_propagation, label_spreading,
                         lp_dssl_train, natural_affinity)
from ..errors import ConfigError
from ..graphssl import NgmConfig, train_surconfort
from ..nn import MlpModel, TrainConfig, predict, predict_probs, train_supervised
from ..railgraph import (RailNetwork, build_adjacency, build_cosine_adjacency,
                         load_network)
from ..synthgen import SynthWorldConfig, generate_world
from .config import METHODS, CsvDataConfig, ExperimentConfig

# stream tags for per-job seed derivation (never include the method name:
# zeta = 0 runs must replay the supervised baseline exactly)
_STREAM_MASK = 1
_STREAM_TRAIN = 2
_STREAM_EVAL = 3
_STREAM_SUBSAMPLE = 4


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class ResultRecord:
    method: str
    ratio: float
    fold: int
    seed: int
    accuracy: float
    per_station: dict[int, tuple[int, int]]  # station -> (correct, total)
    wall_clock_s: float = 0.0

    @property
    def n_test(self) -> int:
        return sum(t for _, t in self.per_station.values())

    @property
    def n_correct(self) -> int:
        return sum(c for c, _ in self.per_station.values())


@dataclass(frozen=True)
class JobSpec:
    method: str
    ratio: float
    fold: int
    seed: int


@dataclass
class BenchData:
    network: RailNetwork
    universe: Universe
    split: SplitDataset  # full dataset: every labeled cell, then the unlabeled pool


def load_bench_data(config: ExperimentConfig) -> BenchData:
    if isinstance(config.data, SynthWorldConfig):
        world = generate_world(config.data)
        network = world.network
        universe = world.universe
        reports = world.reports
    else:
        csv_cfg: CsvDataConfig = config.data
        network = load_network(csv_cfg.stations, csv_cfg.edges)
        reports = load_reports(csv_cfg.reports)
        holidays = load_holidays(csv_cfg.holidays)
        universe = datamod.universe_from_reports(
            reports, n_stations=network.n_stations, n_slots=csv_cfg.slots,
            holidays=holidays)
    labels = aggregate_reports(reports, universe.n_slots)
    split = build_split(universe, labels)
    return BenchData(network=network, universe=universe, split=split)


def station_adjacency(network: RailNetwork, config: ExperimentConfig):
    if config.graph == "cosine":
        return build_cosine_adjacency(network)
    return build_adjacency(network, config.d_max)


# ---------------------------------------------------------------------------
# Evaluation

def evaluate_predictions(preds: np.ndarray, labels: np.ndarray,
                         stations: np.ndarray) -> tuple[float, dict[int, tuple[int, int]]]:
    if preds.size == 0:
        raise ValueError("cannot evaluate an empty test set")
    correct = preds == labels
    per_station: dict[int, tuple[int, int]] = {}
    for st in np.unique(stations):
        rows = stations == st
        per_station[int(st)] = (int(correct[rows].sum()), int(rows.sum()))
    return float(correct.mean()), per_station


def evaluate(model: MlpModel, split: SplitDataset, rows: np.ndarray
             ) -> tuple[float, dict[int, tuple[int, int]]]:
    """Accuracy of a checkpoint over labeled cells plus the per-station
    breakdown; fails loudly on S/T mismatches."""
    if model.S is not None and model.S != split.S:
        raise ValueError(f"station-count mismatch: checkpoint S={model.S}, data S={split.S}")
    if model.T is not None and model.T != split.T:
        raise ValueError(f"slot-count mismatch: checkpoint T={model.T}, data T={split.T}")
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise ValueError("cannot evaluate an empty test set")
    preds = predict(model, split.features(rows))
    return evaluate_predictions(preds, split.labels(rows), split.station[rows])


def forecast(model: MlpModel, station: int, day: Date, at: Time,
             holidays=frozenset(),
             window: datamod.ServiceWindow = datamod.ServiceWindow()
             ) -> tuple[int, np.ndarray]:
    """Single-cell query: congestion class plus the 4 class confidences."""
    if model.S is None or model.T is None:
        raise ValueError("forecast needs a checkpoint with S and T metadata")
    if not 0 <= station < model.S:
        raise ValueError(f"station {station} out of range [0, {model.S})")
    slot = slot_of_minute(at.hour * 60 + at.minute, model.T)
    if window.removes_slot(slot, model.T):
        raise ValueError(
            f"time {at.strftime('%H:%M')} falls in the out-of-service window "
            f"{window.start_minute // 60:02d}:{window.start_minute % 60:02d}-"
            f"{window.end_minute // 60:02d}:{window.end_minute % 60:02d}")
    x = encode_sample(station, day, slot, model.S, model.T, holidays)
    probs = predict_probs(model, x[None, :])[0]
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# Baselines

def random_predictions(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 4, size=n)


def mode_predictions(split: SplitDataset, test_dow: np.ndarray, test_slot: np.ndarray,
                     seed: int) -> np.ndarray:
    """Most frequent training label per (day-of-week, slot); unseen pairs
    get a random class."""
    counts: dict[tuple[int, int], np.ndarray] = {}
    for i in range(split.l):
        key = (int(split.dow[i]), int(split.slot[i]))
        bucket = counts.setdefault(key, np.zeros(4, dtype=np.int64))
        bucket[split.label[i]] += 1
    table = {key: int(np.argmax(c)) for key, c in counts.items()}
    rng = np.random.default_rng(seed)
    preds = np.empty(test_dow.size, dtype=np.int64)
    for i, key in enumerate(zip(test_dow, test_slot)):
        hit = table.get((int(key[0]), int(key[1])))
        preds[i] = hit if hit is not None else int(rng.integers(0, 4))
    return preds


# ---------------------------------------------------------------------------
# Per-job execution

class _AffinityCache:
    """Keyed cache for the lp/ls node graph, which is identical for the two
    methods; bounded so long sweeps stay flat in memory."""

    def __init__(self, limit: int = 4):
        self._store: dict = {}
        self._order: list = []
        self._limit = limit
        self._lock = threading.Lock()

    def get_or_build(self, key, builder):
        with self._lock:
            if key in self._store:
                return self._store[key]
        value = builder()
        with self._lock:
            if key not in self._store:
                self._store[key] = value
                self._order.append(key)
                if len(self._order) > self._limit:
                    self._store.pop(self._order.pop(0), None)
        return value


@dataclass
class _RunContext:
    data: BenchData
    config: ExperimentConfig
    affinity_cache: _AffinityCache = field(default_factory=_AffinityCache)


def _fold_rows(ctx: _RunContext, job: JobSpec):
    folds = kfold_split(ctx.data.split.l, ctx.config.folds, seed=job.seed)
    return folds[job.fold]


def _masked_train_split(ctx: _RunContext, job: JobSpec, train_rows) -> SplitDataset:
    fold_split = ctx.data.split.restrict_labeled(train_rows)
    return mask_labels(fold_split, job.ratio, seed=derived_seed(job.seed, job.fold, _STREAM_MASK))


def _diffusion_nodes(ctx: _RunContext, masked: SplitDataset, test_rows, train_seed: int):
    """Node set for transductive lp/ls: retained labels + capped unlabeled
    pool + the test cells as unlabeled prediction targets."""
    cap = ctx.config.diffusion.max_graph_unlabeled
    unl = np.arange(masked.l, masked.n)
    if unl.size > cap:
        rng = np.random.default_rng([train_seed, _STREAM_SUBSAMPLE])
        unl = np.sort(rng.choice(unl, size=cap, replace=False))
    node_x = np.vstack([masked.features(np.arange(masked.l)),
                        masked.features(unl),
                        ctx.data.split.features(test_rows)])
    node_labels = np.full(node_x.shape[0], -1, dtype=np.int64)
    node_labels[:masked.l] = masked.labels()
    test_pos = np.arange(node_x.shape[0] - len(test_rows), node_x.shape[0])
    k = min(ctx.config.diffusion.k, node_x.shape[0] - 1)
    affinity = natural_affinity(node_x, k=k)
    return affinity, node_labels, test_pos


def run_job(ctx: _RunContext, job: JobSpec) -> ResultRecord:
    split = ctx.data.split
    train_rows, test_rows = _fold_rows(ctx, job)
    test_y = split.labels(test_rows)
    test_st = split.station[test_rows]
    train_seed = derived_seed(job.seed, job.fold, _STREAM_TRAIN)
    tc = replace(ctx.config.train, seed=train_seed)

    started = time.perf_counter()
    if job.method == "random":
        preds = random_predictions(test_rows.size,
                                   derived_seed(job.seed, job.fold, _STREAM_EVAL))
    elif job.method == "mode":
        masked = _masked_train_split(ctx, job, train_rows)
        preds = mode_predictions(masked, split.dow[test_rows], split.slot[test_rows],
                                 derived_seed(job.seed, job.fold, _STREAM_EVAL))
    elif job.method in ("lp", "ls"):
        masked = _masked_train_split(ctx, job, train_rows)
        key = (job.seed, job.fold, job.ratio)
        affinity, node_labels, test_pos = ctx.affinity_cache.get_or_build(
            key, lambda: _diffusion_nodes(ctx, masked, test_rows, train_seed))
        if job.method == "lp":
            all_preds = label_propagation(affinity, node_labels, ctx.config.diffusion)
        else:
            all_preds = label_spreading(affinity, node_labels,
                                        ctx.config.diffusion.delta, ctx.config.diffusion)
        preds = all_preds[test_pos]
    else:
        masked = _masked_train_split(ctx, job, train_rows)
        if job.method == "snn":
            model, _ = train_supervised(masked, tc)
        elif job.method == "lp-dssl":
            model, _ = lp_dssl_train(masked, ctx.config.diffusion, tc)
        elif job.method == "surconfort":
            adjacency = station_adjacency(ctx.data.network, ctx.config)
            ngm = replace(ctx.config.ngm, graph_source=ctx.config.graph)
            model, _ = train_surconfort(masked, adjacency, ngm, tc)
        elif job.method == "ngm-natural":
            ngm = replace(ctx.config.ngm, graph_source="natural")
            model, _ = train_surconfort(masked, None, ngm, tc)
        else:
            raise ConfigError(f"unknown method: {job.method!r}")
        preds = predict(model, split.features(test_rows))
    accuracy, per_station = evaluate_predictions(preds, test_y, test_st)
    return ResultRecord(method=job.method, ratio=job.ratio, fold=job.fold,
                        seed=job.seed, accuracy=accuracy, per_station=per_station,
                        wall_clock_s=time.perf_counter() - started)


def _job_list(config: ExperimentConfig) -> list[JobSpec]:
    unknown = [m for m in config.methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}")
    return [JobSpec(method=m, ratio=r, fold=f, seed=s)
            for m in config.methods for r in config.ratios
            for s in config.seeds for f in range(config.folds)]


def _run_jobs(ctx: _RunContext, jobs: list[JobSpec]) -> list[ResultRecord]:
    if ctx.config.jobs == 1:
        records = [run_job(ctx, job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=ctx.config.jobs) as pool:
            records = list(pool.map(lambda j: run_job(ctx, j), jobs))
    records.sort(key=lambda r: (r.method, r.ratio, r.seed, r.fold))
    return records


def run_sweep(config: ExperimentConfig, data: BenchData | None = None) -> list[ResultRecord]:
    jobs = _job_list(config)
    if data is None:
        data = load_bench_data(config)
    ctx = _RunContext(data=data, config=config)
    return _run_jobs(ctx, jobs)


def run_ablation(config: ExperimentConfig, data: BenchData | None = None) -> list[ResultRecord]:
    """Fixed method triple: full model, natural-graph variant, supervised."""
    ablation = replace(config, methods=("surconfort", "ngm-natural", "snn"))
    return run_sweep(ablation, data)


@dataclass(frozen=True)
class SensitivityRow:
    zeta: float
    mean_accuracy: float
    std_accuracy: float
    n_runs: int


def run_sensitivity(config: ExperimentConfig, zeta_grid,
                    data: BenchData | None = None, ratio: float = 0.10
                    ) -> tuple[list[SensitivityRow], dict[float, list[ResultRecord]]]:
    """Regularization-strength curve at the sparse label ratio."""
    zetas = list(zeta_grid)
    if not zetas:
        raise ConfigError("zeta grid must be nonempty")
    if any(z < 0 for z in zetas):
        raise ConfigError("zeta values must be nonnegative")
    if data is None:
        data = load_bench_data(config)
    rows = []
    records_by_zeta: dict[float, list[ResultRecord]] = {}
    for zeta in zetas:
        zcfg = replace(config, methods=("surconfort",), ratios=(ratio,),
                       ngm=replace(config.ngm, zeta=zeta))
        records = run_sweep(zcfg, data)
        records_by_zeta[zeta] = records
        accs = np.array([r.accuracy for r in records])
        rows.append(SensitivityRow(zeta=float(zeta), mean_accuracy=float(accs.mean()),
                                   std_accuracy=float(accs.std()), n_runs=accs.size))
    return rows, records_by_zeta
