"""Scenario ingestion, workload generation, metrics and the CLI."""

from .compare import compare, loglog_slope, power_fit, rows_to_csv, scenario_for, write_csv
from .runner import ClientDriver, LatencyStats, MetricsReport, build_world, run_scenario, write_trace
from .scenario import (
    SCENARIO_DIR_ENV,
    Scenario,
    Workload,
    load_scenario,
    nodes_for,
    scenario_dir,
    scenario_from_dict,
)
from .workload import generate_workload, request_payload

__all__ = [
    "ClientDriver", "LatencyStats", "MetricsReport", "SCENARIO_DIR_ENV", "Scenario", "Workload",
    "build_world", "compare", "generate_workload", "load_scenario", "loglog_slope", "nodes_for",
    "power_fit", "request_payload", "rows_to_csv", "run_scenario", "scenario_dir", "scenario_for",
    "scenario_from_dict", "write_csv", "write_trace",
]
