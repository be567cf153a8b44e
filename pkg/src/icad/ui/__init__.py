"""Output formatting for ICAD commands.

Submodules:
- format: table rendering, JSON output, color handling

All functions are pure; commands decide where the text goes.
"""

from .format import (
    ColorMode,
    Column,
    colorize,
    format_metric,
    render_json,
    render_jsonl,
    render_table,
)

__all__ = [
    "ColorMode",
    "Column",
    "colorize",
    "format_metric",
    "render_json",
    "render_jsonl",
    "render_table",
]
