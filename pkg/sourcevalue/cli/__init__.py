"""Command-line surface for the Source Value engine."""

from .commands import build_parser, cmd_experiment, cmd_grid_search, cmd_value, load_config, main

__all__ = [
    "build_parser",
    "cmd_experiment",
    "cmd_grid_search",
    "cmd_value",
    "load_config",
    "main",
]
