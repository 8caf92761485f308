"""Scenario configs, parallel ensemble runs, result export and the CLI."""

from lrlab.harness.config import ScenarioConfig, config_hash, load_config, parse_config
from lrlab.harness.export import export, load_results, read_records
from lrlab.harness.runner import ResultSet, run_scenario, run_sweep

__all__ = [
    "ResultSet",
    "ScenarioConfig",
    "config_hash",
    "export",
    "load_config",
    "load_results",
    "parse_config",
    "read_records",
    "run_scenario",
    "run_sweep",
]
