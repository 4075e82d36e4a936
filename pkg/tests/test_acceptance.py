"""Acceptance suite: one test per criterion, each printing a PASS line.

The heavyweight comparison runs (criteria 5-7) share one default synthetic
world and one canonical sweep via module-scoped fixtures.
"""

import itertools
import math
import time as time_mod
from dataclasses import replace
from datetime import date

import numpy as np
import pytest
import scipy.sparse as sp

from surconfort.bench.config import ExperimentConfig
from surconfort.bench.report import write_results_csv
from surconfort.bench.runner import load_bench_data, run_sensitivity, run_sweep
from surconfort.data import (ServiceWindow, Universe, build_split, date_range,
                             decode_features, encode_features, kfold_split,
                             mask_labels)
from surconfort.diffusion import (AffinityMatrix, DiffusionConfig, diffuse,
                                  propagate_scores, spread_scores)
from surconfort.graphssl import NgmConfig, train_surconfort
from surconfort.nn import (TRAINABLE_KEYS, TrainConfig, backward, forward,
                           graph_penalty, init_model, mean_cross_entropy,
                           train_supervised)
from surconfort.railgraph import PLANAR, RailNetwork, Station, build_adjacency, \
    make_connections
from surconfort.synthgen import SynthWorldConfig, generate_ground_truth, \
    generate_network


def report(criterion, detail):
    print(f"\n[ACCEPTANCE] criterion {criterion}: PASS ({detail})")


# --------------------------------------------------------------------------
# Criterion 1: gradient correctness of the full semi-supervised loss

def test_criterion_1_gradient_check():
    started = time_mod.perf_counter()
    rng = np.random.default_rng(42)
    model = init_model(8, (16, 16, 8, 4), rng)
    x = rng.normal(size=(6, 8))
    y = rng.integers(0, 4, size=6)
    edges = [(np.array([0, 1, 2, 3, 4]), np.array([1, 2, 3, 4, 5]),
              rng.uniform(0.2, 1.0, size=5), 1.0)]
    zeta = 0.7

    def loss_value():
        probs, desc, _ = forward(model, x, "train", update_running=False)
        ce, _ = mean_cross_entropy(probs, y)
        pen, _ = graph_penalty(desc, edges)
        return ce + zeta * pen

    probs, desc, cache = forward(model, x, "train", update_running=False)
    _, grad_logits = mean_cross_entropy(probs, y)
    _, gdesc = graph_penalty(desc, edges)
    grads = backward(model, cache, grad_logits, zeta * gdesc)

    h = 1e-5
    worst = 0.0
    for key in TRAINABLE_KEYS:
        p = model.params[key]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = p[ix]
            p[ix] = orig + h
            lp = loss_value()
            p[ix] = orig - h
            lm = loss_value()
            p[ix] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[key][ix]
            denom = max(abs(fd), abs(an))
            if denom > 1e-8:
                worst = max(worst, abs(fd - an) / denom)
    elapsed = time_mod.perf_counter() - started
    assert worst <= 1e-4
    assert elapsed < 60.0
    report(1, f"max relative error {worst:.2e} in {elapsed:.1f}s")


# --------------------------------------------------------------------------
# Criterion 2: adjacency unit table

def test_criterion_2_adjacency_table():
    stations = (Station(0, "A", 0.0, 0.0), Station(1, "B", 1.5, 0.0),
                Station(2, "C", 0.0, 3.0), Station(3, "D", 50.0, 0.0))
    network = RailNetwork(stations=stations,
                          connections=make_connections([(0, 3)]),
                          coordinate_mode=PLANAR)
    adj = build_adjacency(network, d_max=3.0)
    assert adj.get(0, 3) == 1.0                  # connected pair, any distance
    assert adj.get(0, 1) == 0.5                  # d = d_max / 2
    assert adj.get(0, 2) == 0.0                  # d = d_max -> absent
    assert all(i != j for i, j, _ in adj.pairs())
    dense = adj.to_dense()
    assert np.array_equal(dense, dense.T)
    report(2, "connected=1, d_max/2=0.5, d>=d_max absent, symmetric, no diagonal")


# --------------------------------------------------------------------------
# Criterion 3: diffusion oracle equivalence on small graphs

def test_criterion_3_diffusion_oracles():
    started = time_mod.perf_counter()
    rng = np.random.default_rng(8)
    delta = 0.9
    worst = 0.0
    for n in (5, 8, 10):
        dense = rng.uniform(0.0, 1.0, size=(n, n))
        dense = (dense + dense.T) / 2
        dense[dense < 0.3] = 0.0
        np.fill_diagonal(dense, 0.0)
        dense[0, 1] = dense[1, 0] = 1.0  # keep the graph connected enough
        labels = np.full(n, -1)
        labels[0] = 0
        labels[1] = 3
        labels[n // 2] = 1
        aff = AffinityMatrix(matrix=sp.csr_matrix(dense), k=n - 1)
        y = np.zeros((n, 4))
        for i, lab in enumerate(labels):
            if lab >= 0:
                y[i, lab] = 1.0
        deg = dense.sum(axis=1)
        inv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
        s = np.diag(inv) @ dense @ np.diag(inv)

        z_cg = diffuse(aff, labels, delta)
        z_dense = np.linalg.inv(np.eye(n) - delta * s) @ y
        worst = max(worst, float(np.abs(z_cg - z_dense).max()))

        z_ls = spread_scores(aff, labels, delta)
        ls_dense = (1 - delta) * np.linalg.inv(np.eye(n) - delta * s) @ y
        worst = max(worst, float(np.abs(z_ls - ls_dense).max()))

        z_lp = propagate_scores(aff, labels, DiffusionConfig(tol=1e-8))
        p = dense / dense.sum(axis=1, keepdims=True)
        unl = labels < 0
        harmonic = np.linalg.solve(np.eye(int(unl.sum())) - p[np.ix_(unl, unl)],
                                   p[np.ix_(unl, ~unl)] @ y[~unl])
        worst = max(worst, float(np.abs(z_lp[unl] - harmonic).max()))
    elapsed = time_mod.perf_counter() - started
    assert worst <= 1e-6
    assert elapsed < 10.0
    report(3, f"max elementwise deviation {worst:.2e} in {elapsed:.1f}s")


# --------------------------------------------------------------------------
# Shared default world for the empirical criteria

ACCEPT_TRAIN = TrainConfig(batch_size=128, max_epochs=200, patience=25,
                           learning_rate=0.01)
ACCEPT_SEEDS = (0, 1, 2)


def base_config(**overrides):
    base = dict(data=SynthWorldConfig(), folds=5, seeds=ACCEPT_SEEDS,
                train=ACCEPT_TRAIN, methods=("snn",), ratios=(0.10,))
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def bench_data():
    data = load_bench_data(base_config())
    # spatial-correlation precondition: the railroad graph must be
    # informative before any model comparison gets interpreted
    cfg = SynthWorldConfig()
    field = generate_ground_truth(generate_network(cfg), cfg)
    f = field.intensity
    n = cfg.n_stations
    connected = np.mean([np.abs(f[s] - f[(s + 1) % n]).mean() for s in range(n)])
    antipodal = np.mean([np.abs(f[s] - f[(s + n // 2) % n]).mean() for s in range(n)])
    assert connected < antipodal
    return data


@pytest.fixture(scope="module")
def sparse_sweep(bench_data):
    """Canonical 10%-ratio sweep shared by criteria 5, 6, and 8."""
    config = base_config(methods=("random", "mode", "snn", "lp", "ls",
                                  "lp-dssl", "surconfort", "ngm-natural"))
    started = time_mod.perf_counter()
    records = run_sweep(config, bench_data)
    elapsed = time_mod.perf_counter() - started
    return records, elapsed


def mean_accuracy(records, method):
    accs = [r.accuracy for r in records if r.method == method]
    assert accs
    return float(np.mean(accs))


# --------------------------------------------------------------------------
# Criterion 4: zeta = 0 reductions

def test_criterion_4_reductions(bench_data):
    config = base_config()
    snn_records = run_sweep(config, bench_data)
    rows, by_zeta = run_sensitivity(config, [0.0], data=bench_data, ratio=0.10)
    snn_accs = [r.accuracy for r in snn_records]
    zeta0_accs = [r.accuracy for r in by_zeta[0.0]]
    assert zeta0_accs == snn_accs  # identical floats, not approximately

    # bit-identical parameters on one fold
    split = bench_data.split
    train_rows, _ = kfold_split(split.l, 5, seed=0)[0]
    masked = mask_labels(split.restrict_labeled(train_rows), 0.10, seed=7)
    tc = replace(ACCEPT_TRAIN, max_epochs=12, patience=12, seed=5)
    adjacency = build_adjacency(bench_data.network, 3.0)
    snn, _ = train_supervised(masked, tc)
    sur, _ = train_surconfort(masked, adjacency, NgmConfig(zeta=0.0), tc)
    for key in snn.params:
        assert np.array_equal(snn.params[key], sur.params[key]), key
    report(4, "zeta=0 bit-identical to the supervised baseline "
              "and sensitivity curve matches")


# --------------------------------------------------------------------------
# Criterion 5: direction of effect at sparsity

def test_criterion_5_direction_of_effect(sparse_sweep):
    records, elapsed = sparse_sweep
    sur = mean_accuracy(records, "surconfort")
    snn = mean_accuracy(records, "snn")
    lp = mean_accuracy(records, "lp")
    ls = mean_accuracy(records, "ls")
    lp_dssl = mean_accuracy(records, "lp-dssl")
    assert sur >= snn + 0.01, f"surconfort {sur:.4f} vs snn {snn:.4f}"
    assert sur >= lp, f"surconfort {sur:.4f} vs lp {lp:.4f}"
    assert sur >= ls, f"surconfort {sur:.4f} vs ls {ls:.4f}"
    assert sur >= lp_dssl, f"surconfort {sur:.4f} vs lp-dssl {lp_dssl:.4f}"
    assert elapsed < 900.0, f"sweep took {elapsed:.0f}s"
    report(5, f"surconfort {100*sur:.2f} vs snn {100*snn:.2f}, lp {100*lp:.2f}, "
              f"ls {100*ls:.2f}, lp-dssl {100*lp_dssl:.2f} in {elapsed:.0f}s")


# --------------------------------------------------------------------------
# Criterion 6: ablation ordering

def test_criterion_6_ablation_ordering(sparse_sweep):
    records, _ = sparse_sweep
    sur = mean_accuracy(records, "surconfort")
    ngm = mean_accuracy(records, "ngm-natural")
    snn = mean_accuracy(records, "snn")
    assert sur >= ngm >= snn, f"{sur:.4f} >= {ngm:.4f} >= {snn:.4f} violated"
    report(6, f"surconfort {100*sur:.2f} >= ngm-natural {100*ngm:.2f} "
              f">= snn {100*snn:.2f}")


# --------------------------------------------------------------------------
# Criterion 7: label-ratio monotonic trend

def spearman(x, y):
    def rank(v):
        order = np.argsort(v)
        ranks = np.empty(len(v))
        ranks[order] = np.arange(1, len(v) + 1)
        return ranks
    rx, ry = rank(np.asarray(x)), rank(np.asarray(y))
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / math.sqrt((rx @ rx) * (ry @ ry)))


@pytest.fixture(scope="module")
def ratio_sweep(bench_data):
    config = base_config(methods=("surconfort", "snn"),
                         ratios=(0.10, 0.25, 0.50, 0.75, 1.00))
    return run_sweep(config, bench_data)


def test_criterion_7_ratio_trend(ratio_sweep):
    ratios = (0.10, 0.25, 0.50, 0.75, 1.00)
    rhos = {}
    for method in ("surconfort", "snn"):
        means = [np.mean([r.accuracy for r in ratio_sweep
                          if r.method == method and r.ratio == ratio])
                 for ratio in ratios]
        rhos[method] = spearman(ratios, means)
        assert rhos[method] >= 0.8, f"{method} trend rho={rhos[method]:.2f} " \
                                    f"over means {means}"
    report(7, f"spearman rho surconfort={rhos['surconfort']:.2f}, "
              f"snn={rhos['snn']:.2f}")


# --------------------------------------------------------------------------
# Criterion 8: baseline sanity

def test_criterion_8_baseline_sanity(sparse_sweep):
    records, _ = sparse_sweep
    from surconfort.bench.runner import random_predictions

    # dedicated class-balanced set of >= 1000 cells
    rng = np.random.default_rng(31)
    labels = rng.permutation(np.repeat(np.arange(4), 300))
    preds = random_predictions(labels.size, seed=17)
    balanced_acc = float(np.mean(preds == labels))
    assert 0.22 <= balanced_acc <= 0.28

    rand = mean_accuracy(records, "random")
    mode = mean_accuracy(records, "mode")
    assert mode >= rand
    report(8, f"random on balanced set {balanced_acc:.3f}, "
              f"mode {100*mode:.2f} >= random {100*rand:.2f} on the world")


# --------------------------------------------------------------------------
# Criterion 9: determinism of the sweep

def test_criterion_9_determinism(tmp_path):
    config = ExperimentConfig(
        data=SynthWorldConfig(n_stations=8, n_days=10, slots_per_day=24,
                              report_rate=0.2, seed=3),
        methods=("snn", "surconfort", "mode"), ratios=(0.5,), folds=2,
        seeds=(0,), train=replace(ACCEPT_TRAIN, max_epochs=10, patience=10,
                                  dims=(16, 16, 8, 4)))
    paths = []
    for tag, jobs in (("serial-a", 1), ("serial-b", 1), ("parallel", 4)):
        records = run_sweep(replace(config, jobs=jobs))
        path = tmp_path / f"{tag}.csv"
        write_results_csv(records, path)
        paths.append(path)
    blob = paths[0].read_bytes()
    assert blob == paths[1].read_bytes(), "two serial runs differ"
    assert blob == paths[2].read_bytes(), "parallel differs from serial"
    report(9, "serial runs byte-identical; parallel equals serial")


# --------------------------------------------------------------------------
# Criterion 10: data-layer invariants over 100 seeds

def test_criterion_10_data_invariants():
    S, T = 5, 16
    for seed in range(100):
        rng = np.random.default_rng(seed)
        station = int(rng.integers(S))
        dow = int(rng.integers(7))
        holiday = bool(rng.integers(2))
        slot = int(rng.integers(T))
        vec = encode_features(station, dow, holiday, slot, S, T)
        assert decode_features(vec, S, T) == (station, dow, holiday, slot)

        n = int(rng.integers(10, 60))
        k = int(rng.integers(2, 6))
        folds = kfold_split(n, k=k, seed=seed)
        all_test = np.concatenate([t for _, t in folds])
        assert sorted(all_test.tolist()) == list(range(n))
        sizes = {t.size for _, t in folds}
        assert max(sizes) - min(sizes) <= 1
        for train, test in folds:
            assert set(train.tolist()).isdisjoint(test.tolist())

    universe = Universe(n_stations=3, n_slots=8,
                        dates=date_range(date(2024, 3, 4), date(2024, 3, 13)))
    service = [int(t) for t in universe.service_slots]
    cells = [(s, d, t) for s in range(3) for d in universe.dates for t in service]
    labels = {cells[i]: i % 4 for i in range(40)}
    split = build_split(universe, labels)
    for seed in range(100):
        ratio = float(np.random.default_rng(seed).uniform(0.05, 1.0))
        masked = mask_labels(split, ratio, seed=seed)
        assert masked.l == math.floor(ratio * split.l)
        assert masked.n == split.n

    removed = [s for s in range(144) if ServiceWindow().removes_slot(s, 144)]
    assert len(removed) == 19 and removed == list(range(8, 27))
    report(10, "encoding round-trip, fold partition, mask floor count, "
               "19/144 service slots removed")
