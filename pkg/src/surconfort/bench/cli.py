"""Command-line interface.

Subcommands: gen, train, eval, sweep, ablate, sensitivity, forecast,
graph-export.  Exit codes: 0 success, 2 argument/config error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import date as Date
from datetime import datetime
from pathlib import Path

import numpy as np

from ..data import aggregate_reports, build_split, kfold_split, load_holidays, \
    load_reports, mask_labels, universe_from_reports
from ..diffusion import DiffusionConfig, label_propagation, label_spreading, \
    lp_dssl_train, natural_affinity
from ..errors import ConfigError, ConvergenceError, DataError
from ..graphssl import NgmConfig, train_surconfort
from ..nn import TrainConfig, load_checkpoint, save_checkpoint, train_supervised
from ..railgraph import build_adjacency, build_cosine_adjacency, load_network, \
    save_adjacency_csv
from ..synthgen import SynthWorldConfig, generate_world, write_world
from . import report as reportmod
from . import runner as runnermod
from .config import DEFAULT_RATIOS, METHODS, CsvDataConfig, ExperimentConfig, \
    config_from_dict, config_to_dict, load_config


def _add_world_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stations", type=int, default=30, help="number of stations")
    p.add_argument("--topology", choices=["ring", "line"], default="ring")
    p.add_argument("--spacing", type=float, default=1.2, help="station spacing (km)")
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--slots", type=int, default=144, help="time slots per day")
    p.add_argument("--report-rate", type=float, default=0.046,
                   help="expected reports per cell")
    p.add_argument("--smoothing", type=float, default=0.5,
                   help="neighbor-mixing coefficient in [0,1)")
    p.add_argument("--noise", type=float, default=0.25, help="field noise std")
    p.add_argument("--subjectivity", type=float, default=0.1,
                   help="probability a report is off by one level")
    p.add_argument("--seed", type=int, default=0)


def _world_config(args) -> SynthWorldConfig:
    return SynthWorldConfig(
        n_stations=args.stations, topology=args.topology,
        station_spacing_km=args.spacing, n_days=args.days,
        slots_per_day=args.slots, report_rate=args.report_rate,
        spatial_smoothing=args.smoothing, noise_std=args.noise,
        subjectivity=args.subjectivity, seed=args.seed)


def _load_csv_split(data_dir: str, slots: int):
    cfg = CsvDataConfig.from_dir(data_dir, slots=slots)
    network = load_network(cfg.stations, cfg.edges)
    reports = load_reports(cfg.reports)
    holidays = load_holidays(cfg.holidays)
    universe = universe_from_reports(reports, n_stations=network.n_stations,
                                     n_slots=slots, holidays=holidays)
    split = build_split(universe, aggregate_reports(reports, slots))
    return network, universe, split, holidays


def _cmd_gen(args) -> int:
    world = generate_world(_world_config(args))
    paths = write_world(world, args.out)
    split_labels = aggregate_reports(world.reports, world.config.slots_per_day)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    print(f"stations={world.config.n_stations} days={world.config.n_days} "
          f"reports={len(world.reports)} labeled-cells={len(split_labels)}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, max_epochs=args.max_epochs,
                       patience=args.patience, learning_rate=args.lr, seed=args.seed)


def _cmd_train(args) -> int:
    network, universe, split, _ = _load_csv_split(args.data, args.slots)
    if args.label_ratio < 1.0:
        split = mask_labels(split, args.label_ratio, seed=args.seed)
    tc = _train_config(args)
    diff = DiffusionConfig(delta=args.delta, k=args.k, gamma=args.gamma,
                           rounds=args.rounds)

    if args.method in ("lp", "ls"):
        if args.out:
            raise ConfigError(f"{args.method} is transductive and produces no "
                              "checkpoint; drop --out")
        folds = kfold_split(split.l, k=5, seed=args.seed)
        train_rows, test_rows = folds[0]
        masked = split.restrict_labeled(train_rows)
        unl = np.arange(masked.l, masked.n)
        if unl.size > diff.max_graph_unlabeled:
            rng = np.random.default_rng([args.seed, 4241])
            unl = np.sort(rng.choice(unl, size=diff.max_graph_unlabeled, replace=False))
        node_x = np.vstack([masked.features(np.arange(masked.l)),
                            masked.features(unl), split.features(test_rows)])
        node_labels = np.full(node_x.shape[0], -1, dtype=np.int64)
        node_labels[:masked.l] = masked.labels()
        affinity = natural_affinity(node_x, k=min(diff.k, node_x.shape[0] - 1))
        if args.method == "lp":
            preds = label_propagation(affinity, node_labels, diff)
        else:
            preds = label_spreading(affinity, node_labels, diff.delta, diff)
        test_pred = preds[-test_rows.size:]
        acc = float(np.mean(test_pred == split.labels(test_rows)))
        print(f"{args.method} transductive accuracy on a held-out fold: {acc:.4f}")
        return 0

    if args.method == "snn":
        model, log = train_supervised(split, tc)
    elif args.method == "lp-dssl":
        model, log = lp_dssl_train(split, diff, tc)
    elif args.method in ("surconfort", "ngm-natural"):
        source = "natural" if args.method == "ngm-natural" else args.graph
        ngm = NgmConfig(zeta=args.zeta, edges_per_batch=args.edges_per_batch,
                        graph_source=source)
        adjacency = None
        if source != "natural":
            adjacency = (build_cosine_adjacency(network) if source == "cosine"
                         else build_adjacency(network, args.dmax))
        model, log = train_surconfort(split, adjacency, ngm, tc)
    else:
        raise ConfigError(f"unknown method: {args.method!r}")

    best_acc = (max(log.val_accuracy) if log.val_accuracy else float("nan"))
    print(f"trained {args.method}: best validation accuracy {best_acc:.4f} "
          f"(epoch {log.best_epoch}, {log.stop_reason})")
    if args.out:
        save_checkpoint(model, args.out)
        print(f"checkpoint written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    network, universe, split, _ = _load_csv_split(args.data, model.T or args.slots)
    if args.truth:
        truth = _load_truth(args.truth)
        rows, labels = _truth_rows(split, truth)
        from ..nn import predict
        preds = predict(model, split.features(rows))
        acc, per_station = runnermod.evaluate_predictions(preds, labels,
                                                          split.station[rows])
    else:
        acc, per_station = runnermod.evaluate(model, split, np.arange(split.l))
    print(f"accuracy over {sum(t for _, t in per_station.values())} cells: {acc:.4f}")
    if args.per_station:
        fake = runnermod.ResultRecord(method="eval", ratio=1.0, fold=0, seed=0,
                                      accuracy=acc, per_station=per_station)
        reportmod.write_per_station_csv([fake], args.per_station)
        print(f"per-station breakdown written to {args.per_station}")
    return 0


def _load_truth(path: str) -> dict[tuple[int, Date, int], int]:
    import csv

    p = Path(path)
    if not p.exists():
        raise DataError(f"truth file not found: {p}")
    out = {}
    with p.open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out[(int(rec["station"]), Date.fromisoformat(rec["date"]),
                 int(rec["slot"]))] = int(rec["class"])
    return out


def _truth_rows(split, truth):
    rows, labels = [], []
    for i in range(split.n):
        key = (int(split.station[i]), Date.fromordinal(int(split.date_ord[i])),
               int(split.slot[i]))
        if key in truth:
            rows.append(i)
            labels.append(truth[key])
    if not rows:
        raise DataError("no overlap between the dataset and the truth file")
    return np.asarray(rows, dtype=np.intp), np.asarray(labels, dtype=np.int64)


def _sweep_config(args) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = ExperimentConfig()
    payload = config_to_dict(config)
    if args.data:
        payload["data"] = {"csv": dataclasses.asdict(
            CsvDataConfig.from_dir(args.data, slots=args.slots))}
    if args.methods:
        payload["methods"] = [m.strip() for m in args.methods.split(",")]
    if args.ratios:
        payload["ratios"] = [float(r) for r in args.ratios.split(",")]
    if args.seeds:
        payload["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.folds:
        payload["folds"] = args.folds
    if args.out:
        payload["out_dir"] = args.out
    if args.jobs:
        payload["jobs"] = args.jobs
    if args.zeta is not None:
        payload["ngm"]["zeta"] = args.zeta
    if args.dmax is not None:
        payload["d_max"] = args.dmax
    if args.world_seed is not None and "synthetic" in payload["data"]:
        payload["data"]["synthetic"]["seed"] = args.world_seed
    return config_from_dict(payload)


def _cmd_sweep(args) -> int:
    config = _sweep_config(args)
    records = runnermod.run_sweep(config)
    paths = reportmod.emit_report(records, config.out_dir, config)
    print(f"{len(records)} runs -> {paths['results']}")
    return 0


def _cmd_ablate(args) -> int:
    config = _sweep_config(args)
    config = dataclasses.replace(config, methods=("surconfort", "ngm-natural", "snn"))
    records = runnermod.run_ablation(config)
    paths = reportmod.emit_report(records, config.out_dir, config,
                                  table_name="table2.md")
    print(f"{len(records)} runs -> {paths['results']}")
    return 0


def _cmd_sensitivity(args) -> int:
    config = _sweep_config(args)
    grid = [float(z) for z in args.zetas.split(",")]
    rows, _ = runnermod.run_sensitivity(config, grid, ratio=args.ratio)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = reportmod.write_sensitivity_csv(rows, out / "sensitivity.csv")
    reportmod.write_run_json(config, out / "run.json",
                             extra={"zeta_grid": grid, "ratio": args.ratio})
    print(f"sensitivity curve -> {path}")
    return 0


def _cmd_forecast(args) -> int:
    model = load_checkpoint(args.checkpoint)
    holidays = load_holidays(args.holidays) if args.holidays else frozenset()
    day = Date.fromisoformat(args.date)
    at = datetime.strptime(args.time, "%H:%M").time()
    cls, probs = runnermod.forecast(model, args.station, day, at, holidays)
    print(f"station {args.station} on {day} at {args.time}: class {cls} "
          f"(confidences: {', '.join(f'{p:.4f}' for p in probs)})")
    return 0


def _cmd_graph_export(args) -> int:
    network = load_network(args.stations, args.edges)
    if args.graph == "cosine":
        adjacency = build_cosine_adjacency(network)
    else:
        adjacency = build_adjacency(network, args.dmax)
    save_adjacency_csv(adjacency, args.out)
    print(f"{adjacency.n_entries} adjacency entries -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surconfort",
        description="Railroad-graph-regularized congestion forecasting: "
                    "training, baselines, and benchmark sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic world as CSV files")
    _add_world_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train one model on CSV data")
    p.add_argument("--data", required=True, help="directory with stations/edges/reports CSVs")
    p.add_argument("--method", required=True,
                   choices=[m for m in METHODS if m not in ("random", "mode")])
    p.add_argument("--slots", type=int, default=144)
    p.add_argument("--label-ratio", type=float, default=1.0)
    p.add_argument("--zeta", type=float, default=0.7)
    p.add_argument("--graph", choices=["rail", "cosine"], default="rail")
    p.add_argument("--dmax", type=float, default=3.0)
    p.add_argument("--edges-per-batch", type=int, default=256)
    p.add_argument("--delta", type=float, default=0.9)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--gamma", type=float, default=3.0)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled cells")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--slots", type=int, default=144)
    p.add_argument("--truth", help="truth.csv for full-field evaluation")
    p.add_argument("--per-station", help="write per-station accuracy CSV here")
    p.set_defaults(func=_cmd_eval)

    for name, helptext in (("sweep", "run the method x ratio x fold x seed sweep"),
                           ("ablate", "run the fixed ablation triple"),
                           ("sensitivity", "zeta sensitivity curve")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--data", help="CSV data directory (overrides config)")
        p.add_argument("--slots", type=int, default=144)
        p.add_argument("--methods", help="comma-separated method list")
        p.add_argument("--ratios", help="comma-separated label ratios")
        p.add_argument("--seeds", help="comma-separated seeds")
        p.add_argument("--folds", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--zeta", type=float)
        p.add_argument("--dmax", type=float)
        p.add_argument("--world-seed", type=int)
        p.add_argument("--out", help="output directory")
        if name == "sensitivity":
            p.add_argument("--zetas", default="0,0.35,0.7,1.0,2.0")
            p.add_argument("--ratio", type=float, default=0.10)
            p.set_defaults(func=_cmd_sensitivity)
        elif name == "ablate":
            p.set_defaults(func=_cmd_ablate)
        else:
            p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("forecast", help="query one (station, date, time) cell")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--station", type=int, required=True)
    p.add_argument("--date", required=True, help="YYYY-MM-DD")
    p.add_argument("--time", required=True, help="HH:MM")
    p.add_argument("--holidays", help="holidays.csv")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("graph-export", help="write the adjacency matrix as CSV")
    p.add_argument("--stations", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--graph", choices=["rail", "cosine"], default="rail")
    p.add_argument("--dmax", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_graph_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
