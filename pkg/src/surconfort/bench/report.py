"""Machine-readable result emission: raw per-run CSV, aggregated summary
with micro and macro accuracy, markdown pivot tables in percent, the
sensitivity curve, per-station breakdowns, and a JSON metadata sidecar.

All writes go through a temp file plus rename, so readers never observe a
partial file.  results.csv carries no timing column: identical configs
must produce byte-identical files (timings live in run.json).
"""

from __future__ import annotations

import json
import os
import platform
import tempfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_to_dict
from .runner import ResultRecord, SensitivityRow

RESULTS_COLUMNS = ("method", "ratio", "fold", "seed", "accuracy", "n_test",
                   "n_correct", "per_station")


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _per_station_json(per_station: dict[int, tuple[int, int]]) -> str:
    return json.dumps({str(k): list(per_station[k]) for k in sorted(per_station)},
                      separators=(",", ":"))


def write_results_csv(records: list[ResultRecord], path: str | Path) -> Path:
    path = Path(path)
    lines = [",".join(RESULTS_COLUMNS)]
    for r in records:
        lines.append(",".join([
            r.method, repr(r.ratio), str(r.fold), str(r.seed), repr(r.accuracy),
            str(r.n_test), str(r.n_correct), '"' + _per_station_json(r.per_station)
            .replace('"', '""') + '"']))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def read_results_csv(path: str | Path) -> list[ResultRecord]:
    """Inverse of write_results_csv (timings are not stored, so they read
    back as zero)."""
    import csv

    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            per_station = {int(k): (int(v[0]), int(v[1]))
                           for k, v in json.loads(rec["per_station"]).items()}
            records.append(ResultRecord(
                method=rec["method"], ratio=float(rec["ratio"]), fold=int(rec["fold"]),
                seed=int(rec["seed"]), accuracy=float(rec["accuracy"]),
                per_station=per_station))
    return records


def aggregate(records: list[ResultRecord]):
    """Per (method, ratio): macro accuracy (mean/std over runs) and micro
    accuracy (pooled over all test cells)."""
    groups: dict[tuple[str, float], list[ResultRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.ratio), []).append(r)
    rows = []
    for (method, ratio) in sorted(groups):
        runs = groups[(method, ratio)]
        accs = np.array([r.accuracy for r in runs])
        total = sum(r.n_test for r in runs)
        correct = sum(r.n_correct for r in runs)
        rows.append({"method": method, "ratio": ratio,
                     "acc_macro": float(accs.mean()),
                     "acc_macro_std": float(accs.std()),
                     "acc_micro": correct / total if total else float("nan"),
                     "n_runs": len(runs)})
    return rows


def write_summary_csv(records: list[ResultRecord], path: str | Path) -> Path:
    path = Path(path)
    lines = ["method,ratio,acc_macro,acc_macro_std,acc_micro,n_runs"]
    for row in aggregate(records):
        lines.append(f"{row['method']},{row['ratio']!r},{row['acc_macro']!r},"
                     f"{row['acc_macro_std']!r},{row['acc_micro']!r},{row['n_runs']}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def format_cell(mean: float, std: float) -> str:
    """Percent with two decimals, e.g. '56.76 ± 1.93'."""
    return f"{100.0 * mean:.2f} ± {100.0 * std:.2f}"


def write_table_markdown(records: list[ResultRecord], path: str | Path,
                         title: str = "Accuracy by labeled-data ratio") -> Path:
    path = Path(path)
    rows = aggregate(records)
    methods = []
    for r in records:  # first-seen order
        if r.method not in methods:
            methods.append(r.method)
    ratios = sorted({row["ratio"] for row in rows})
    cell = {(row["method"], row["ratio"]): format_cell(row["acc_macro"], row["acc_macro_std"])
            for row in rows}
    lines = [f"# {title}", "",
             "| Model | " + " | ".join(f"{100 * r:g}%" for r in ratios) + " |",
             "|" + "---|" * (len(ratios) + 1)]
    for m in methods:
        lines.append("| " + m + " | "
                     + " | ".join(cell.get((m, r), "-") for r in ratios) + " |")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def write_sensitivity_csv(rows: list[SensitivityRow], path: str | Path) -> Path:
    path = Path(path)
    lines = ["zeta,mean_accuracy,std_accuracy,n_runs"]
    for row in rows:
        lines.append(f"{row.zeta!r},{row.mean_accuracy!r},{row.std_accuracy!r},{row.n_runs}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def write_per_station_csv(records: list[ResultRecord], path: str | Path) -> Path:
    """Plot-ready per-station accuracy pooled over folds and seeds."""
    path = Path(path)
    pooled: dict[tuple[str, float, int], list[int]] = {}
    for r in records:
        for station, (correct, total) in r.per_station.items():
            bucket = pooled.setdefault((r.method, r.ratio, station), [0, 0])
            bucket[0] += correct
            bucket[1] += total
    lines = ["method,ratio,station,n,correct,accuracy"]
    for (method, ratio, station) in sorted(pooled):
        correct, total = pooled[(method, ratio, station)]
        lines.append(f"{method},{ratio!r},{station},{total},{correct},"
                     f"{correct / total!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def write_run_json(config: ExperimentConfig, path: str | Path,
                   records: list[ResultRecord] | None = None,
                   extra: dict | None = None) -> Path:
    import scipy

    path = Path(path)
    payload = {
        "config": config_to_dict(config),
        "versions": {"python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    if records is not None:
        payload["timings_s"] = {
            f"{r.method}/ratio={r.ratio:g}/seed={r.seed}/fold={r.fold}":
                round(r.wall_clock_s, 3)
            for r in records}
    if extra:
        payload.update(extra)
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def emit_report(records: list[ResultRecord], out_dir: str | Path,
                config: ExperimentConfig | None = None,
                table_name: str = "table1.md",
                formats: tuple[str, ...] = ("csv", "markdown")) -> dict[str, Path]:
    if not records:
        raise ValueError("no records to report")
    for fmt in formats:
        if fmt not in ("csv", "markdown"):
            raise ValueError(f"unknown report format: {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    if "csv" in formats:
        paths["results"] = write_results_csv(records, out / "results.csv")
        paths["summary"] = write_summary_csv(records, out / "summary.csv")
        paths["per_station"] = write_per_station_csv(records, out / "per_station.csv")
    if "markdown" in formats:
        paths["table"] = write_table_markdown(records, out / table_name)
    if config is not None:
        paths["run"] = write_run_json(config, out / "run.json", records)
    return paths
