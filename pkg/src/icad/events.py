"""Line-delimited event and metric logs.

Run facts are appended to events.jsonl, one compact JSON object per line.
The loss log carries no timestamps so that fixed-seed reruns are
byte-identical.
"""

import json
from pathlib import Path
from typing import Any, Optional

from .common import SCHEMA_VERSION, utc_now_z


EVENT_TYPES = frozenset(
    [
        "run_started",
        "run_completed",
        "run_failed",
        "dataset_excluded",
        "epoch_completed",
        "step_failed",
        "checkpoint_written",
        "prep_completed",
        "eval_completed",
    ]
)


def _write_line(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, separators=(",", ":"), sort_keys=True))
        f.write("\n")


class EventLog:
    """Appends event records to an events.jsonl file.

    A log without a path drops records, so library code can always
    call append().
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event: str, **fields: Any) -> Optional[dict]:
        """Append an event record.

        Args:
            event: Event type (one of EVENT_TYPES).
            **fields: Additional fields; None values are omitted.

        Returns:
            The record written, or None when the log has no path.

        Raises:
            ValueError: If the event type is unknown.
        """
        if event not in EVENT_TYPES:
            raise ValueError(f"Unknown event type: {event}")
        record = {
            "schema_version": SCHEMA_VERSION,
            "ts": utc_now_z(),
            "event": event,
        }
        record.update({k: v for k, v in fields.items() if v is not None})
        if self.path is None:
            return None
        _write_line(self.path, record)
        return record

    def read(self) -> list[dict]:
        """Read back all records."""
        return read_jsonl(self.path) if self.path is not None else []


class MetricLog:
    """Appends timestamp-free metric rows (the loss log)."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, **fields: Any) -> dict:
        record = dict(fields)
        if self.path is not None:
            _write_line(self.path, record)
        return record


def read_jsonl(path: Path) -> list[dict]:
    """Read a JSON Lines file, skipping blank lines."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
