"""Tests for deterministic table and JSON rendering."""

import json

import numpy as np

from icad.ui.format import (
    ColorMode,
    Column,
    colorize,
    format_metric,
    render_json,
    render_jsonl,
    render_table,
)


SWEEP_ROWS = [
    {"K": 1, "dataset_id": "a", "value": 0.5},
    {"K": 3, "dataset_id": "bb", "value": None},
]


class TestRenderTable:
    """Tests for render_table."""

    def test_layout(self):
        table = render_table(SWEEP_ROWS, ["K", "dataset_id", "value"], color_mode=ColorMode.NEVER)
        assert table.splitlines() == [
            "K  DATASET_ID  VALUE",
            "-  ----------  ------",
            "1  a" + " " * 11 + "0.5000",
            "3  bb" + " " * 10 + "-",
        ]

    def test_deterministic(self):
        a = render_table(SWEEP_ROWS, ["K", "value"], color_mode=ColorMode.NEVER)
        b = render_table(list(SWEEP_ROWS), ["K", "value"], color_mode=ColorMode.NEVER)
        assert a == b

    def test_input_order_kept(self):
        rows = list(reversed(SWEEP_ROWS))
        table = render_table(rows, ["K"], color_mode=ColorMode.NEVER, show_header=False)
        assert table.splitlines() == ["3", "1"]

    def test_sort_key(self):
        rows = list(reversed(SWEEP_ROWS))
        table = render_table(rows, ["K"], sort_key="K", color_mode=ColorMode.NEVER, show_header=False)
        assert table.splitlines() == ["1", "3"]

    def test_right_align_and_digits(self):
        table = render_table(
            [{"v": 0.123456}],
            [Column("v", "V", width=8, align="right")],
            digits=2,
            color_mode=ColorMode.NEVER,
            show_header=False,
        )
        assert table == "    0.12"

    def test_empty(self):
        assert render_table([], ["K"]) == ""


class TestRenderJson:
    """Tests for render_json and render_jsonl."""

    def test_sorted_keys(self):
        assert render_json({"b": 1, "a": 2}, indent=None) == '{"a": 2, "b": 1}'

    def test_numpy_values(self):
        text = render_json({"x": np.float32(0.5), "n": np.int64(3), "arr": np.arange(2)})
        assert json.loads(text) == {"x": 0.5, "n": 3, "arr": [0, 1]}

    def test_jsonl_lines(self):
        text = render_jsonl([{"b": 1, "a": 0}, {"a": 1}])
        assert text == '{"a": 0, "b": 1}\n{"a": 1}'

    def test_jsonl_empty(self):
        assert render_jsonl([]) == ""


class TestColor:
    """Tests for colorize and format_metric."""

    def test_never_strips(self):
        assert colorize("x", "red", ColorMode.NEVER) == "x"

    def test_always_wraps(self):
        assert colorize("x", "red", ColorMode.ALWAYS) == "\033[31mx\033[0m"

    def test_format_metric(self):
        assert format_metric("auroc", 0.75, ColorMode.ALWAYS) == "auroc=0.7500"
        assert format_metric("auroc", 0.95, ColorMode.ALWAYS).startswith("\033[32m")
        assert format_metric("auroc", 0.25, ColorMode.ALWAYS).startswith("\033[31m")
        assert format_metric("auroc", None) == "auroc=-"
