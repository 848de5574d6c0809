"""Scenario files and the runner that executes them."""

from .config import (
    MODULE_TYPES,
    SCENARIO_FILE,
    Scenario,
    load_scenario,
    parse_connection,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from .runner import (
    EVENT_LOG,
    PLOT_FILE,
    SUMMARY_FILE,
    SUMMARY_KEYS,
    RunResult,
    plot_script,
    run_scenario,
    settled_events,
    simulate,
    summarize,
)

__all__ = [
    "EVENT_LOG",
    "MODULE_TYPES",
    "PLOT_FILE",
    "RunResult",
    "SCENARIO_FILE",
    "SUMMARY_FILE",
    "SUMMARY_KEYS",
    "Scenario",
    "load_scenario",
    "parse_connection",
    "plot_script",
    "run_scenario",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "settled_events",
    "simulate",
    "summarize",
]
