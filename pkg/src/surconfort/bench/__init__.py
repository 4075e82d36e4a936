from .config import (CsvDataConfig, ExperimentConfig, config_from_dict,
                     config_to_dict, load_config)
from .report import emit_report, read_results_csv, write_results_csv
from .runner import (BenchData, JobSpec, ResultRecord, SensitivityRow, evaluate,
                     evaluate_predictions, forecast, load_bench_data, run_ablation,
                     run_job, run_sensitivity, run_sweep)

__all__ = [
    "BenchData", "CsvDataConfig", "ExperimentConfig", "JobSpec", "ResultRecord",
    "SensitivityRow", "config_from_dict", "config_to_dict", "emit_report",
    "evaluate", "evaluate_predictions", "forecast", "load_bench_data",
    "load_config", "read_results_csv", "run_ablation", "run_job",
    "run_sensitivity", "run_sweep", "write_results_csv",
]
