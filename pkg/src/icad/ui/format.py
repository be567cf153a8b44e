"""Deterministic rendering of tables and JSON for command output.

Rendering contracts:

1. render_table(rows, columns, *, sort_key, ...)
   - Given identical rows and sort_key, output is byte-identical
   - Floats are printed with a fixed number of digits
   - Colors are stripped in ColorMode.NEVER

2. render_json(obj, *, sort_keys=True, ...)
   - Given identical obj, output is byte-identical
   - numpy scalars and arrays serialize as plain numbers and lists

3. render_jsonl(records, *, sort_key, ...)
   - One JSON object per line, keys sorted, no trailing newline

Sweep tables keep input order unless a sort_key is given, since K and
volume grids are ordered by the caller.
"""

import json
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np


class ColorMode(Enum):
    """Color output mode."""

    AUTO = "auto"  # Color if TTY
    ALWAYS = "always"
    NEVER = "never"


_COLORS = {
    "reset": "\033[0m",
    "bold": "\033[1m",
    "dim": "\033[2m",
    "red": "\033[31m",
    "green": "\033[32m",
    "yellow": "\033[33m",
}


def _should_color(mode: ColorMode) -> bool:
    if mode == ColorMode.NEVER:
        return False
    if mode == ColorMode.ALWAYS:
        return True
    return hasattr(sys.stdout, "isatty") and sys.stdout.isatty()


def colorize(text: str, color: str, mode: ColorMode = ColorMode.AUTO) -> str:
    """Apply color to text if the color mode allows."""
    code = _COLORS.get(color, "")
    if not code or not _should_color(mode):
        return text
    return f"{code}{text}{_COLORS['reset']}"


@dataclass
class Column:
    """Table column definition."""

    name: str
    header: str
    width: Optional[int] = None
    align: str = "left"  # "left", "right", "center"


def _cell(value: Any, digits: int) -> str:
    if value is None:
        return "-"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{digits}f}"
    return str(value)


def _align(text: str, width: int, align: str) -> str:
    if align == "right":
        return text.rjust(width)
    if align == "center":
        return text.center(width)
    return text.ljust(width)


def _key_fn(sort_key: Union[str, Callable[[dict], Any]]) -> Callable[[dict], Any]:
    if isinstance(sort_key, str):
        return lambda r: r.get(sort_key, "") or ""
    return sort_key


def render_table(
    rows: Sequence[dict[str, Any]],
    columns: Sequence[Union[Column, str]],
    *,
    sort_key: Optional[Union[str, Callable[[dict], Any]]] = None,
    color_mode: ColorMode = ColorMode.AUTO,
    digits: int = 4,
    show_header: bool = True,
) -> str:
    """Render rows as a fixed-width text table.

    Args:
        rows: Dicts to render.
        columns: Column definitions (Column objects or field names).
        sort_key: Field name or function for sorting; None keeps input order.
        color_mode: Color output mode.
        digits: Digits printed after the point for float cells.
        show_header: Whether to show column headers.

    Returns:
        Formatted table, or "" when there are no rows.
    """
    if not rows:
        return ""

    cols = [Column(name=c, header=c.upper()) if isinstance(c, str) else c for c in columns]
    ordered = list(rows)
    if sort_key:
        ordered.sort(key=_key_fn(sort_key))

    cells = [[_cell(row.get(col.name), digits) for col in cols] for row in ordered]
    widths = []
    for i, col in enumerate(cols):
        if col.width:
            widths.append(col.width)
        else:
            widths.append(min(max([len(col.header)] + [len(r[i]) for r in cells]), 60))

    lines = []
    if show_header:
        header = "  ".join(_align(col.header, widths[i], col.align) for i, col in enumerate(cols))
        lines.append(colorize(header.rstrip(), "bold", color_mode))
        lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        parts = []
        for i, col in enumerate(cols):
            val = row[i]
            if len(val) > widths[i]:
                val = val[: widths[i] - 3] + "..."
            parts.append(_align(val, widths[i], col.align))
        lines.append("  ".join(parts).rstrip())
    return "\n".join(lines)


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, Enum):
        return obj.value
    return str(obj)


def render_json(obj: Any, *, indent: Optional[int] = 2, sort_keys: bool = True) -> str:
    """Render an object as JSON with stable key ordering."""
    return json.dumps(
        obj,
        indent=indent,
        sort_keys=sort_keys,
        ensure_ascii=False,
        default=_json_default,
    )


def render_jsonl(
    records: Sequence[dict[str, Any]],
    *,
    sort_key: Optional[Union[str, Callable[[dict], Any]]] = None,
    sort_dict_keys: bool = True,
) -> str:
    """Render records as JSON Lines (one object per line)."""
    if not records:
        return ""
    ordered = list(records)
    if sort_key:
        ordered.sort(key=_key_fn(sort_key))
    return "\n".join(
        json.dumps(r, sort_keys=sort_dict_keys, ensure_ascii=False, default=_json_default)
        for r in ordered
    )


def format_metric(name: str, value: Optional[float], color_mode: ColorMode = ColorMode.AUTO) -> str:
    """Format "name=value", green at 0.9 and above, red below 0.5."""
    if value is None:
        return f"{name}=-"
    text = f"{name}={value:.4f}"
    if value >= 0.9:
        return colorize(text, "green", color_mode)
    if value < 0.5:
        return colorize(text, "red", color_mode)
    return text
