"""Log template mining with a fixed-depth parse tree.

Messages are masked (numbers, hex strings, dotted-quad addresses become
wildcards), then routed through the tree: first by token count, then by
the leading tokens up to ``depth - 2`` levels. The leaf holds candidate
templates; the most similar one is merged if its similarity reaches the
threshold, otherwise a new template is created.

Similarity is the fraction of positions where the template token equals
the query token. A wildcard in the template matches any query token, so a
line that was merged into a template always matches it again.

The tree is mutable and not locked: one writer at a time.
"""

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .common import SCHEMA_VERSION, PRODUCER, DataError


WILDCARD = "<*>"

DEFAULT_DEPTH = 4
DEFAULT_SIMILARITY_THRESHOLD = 0.4

# Masking rules, applied to whole whitespace-separated tokens
_IPV4 = re.compile(r"^\d{1,3}(\.\d{1,3}){3}(:\d+)?$")
_NUMBER = re.compile(r"^[-+]?\d+([.,]\d+)*$")
_HEX_PREFIXED = re.compile(r"^0[xX][0-9a-fA-F]+$")
# Bare hex needs a digit and some length, otherwise words like "add" are masked
_HEX_BARE = re.compile(r"^(?=[0-9a-fA-F]*\d)[0-9a-fA-F]{8,}$")

DEFAULT_MASKS = (_IPV4, _NUMBER, _HEX_PREFIXED, _HEX_BARE)


@dataclass
class Template:
    """A mined log template."""

    template_id: int
    tokens: list[str]
    occurrence_count: int = 0

    def text(self) -> str:
        return " ".join(self.tokens)

    def to_dict(self) -> dict:
        return {
            "id": self.template_id,
            "tokens": list(self.tokens),
            "count": self.occurrence_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Template":
        return cls(
            template_id=int(data["id"]),
            tokens=[str(t) for t in data["tokens"]],
            occurrence_count=int(data.get("count", 0)),
        )


class _Node:
    __slots__ = ("children", "template_ids")

    def __init__(self):
        self.children: dict[str, "_Node"] = {}
        self.template_ids: list[int] = []


def mask_parameters(
    line: str, extra_patterns: Sequence[re.Pattern] = ()
) -> list[str]:
    """Split a message on whitespace and mask parameter tokens.

    Args:
        line: Raw log message.
        extra_patterns: Additional compiled patterns; a token fully matching
            any of them is masked too.

    Returns:
        Token list with masked tokens replaced by the wildcard marker.
    """
    masks = tuple(DEFAULT_MASKS) + tuple(extra_patterns)
    tokens = []
    for token in line.split():
        if any(m.fullmatch(token) for m in masks):
            tokens.append(WILDCARD)
        else:
            tokens.append(token)
    return tokens


def similarity(template: Sequence[str], tokens: Sequence[str]) -> float:
    """Fraction of positions where the template matches the query.

    Args:
        template: Template tokens (same length as tokens).
        tokens: Query tokens.

    Returns:
        Similarity in [0, 1].
    """
    if not tokens:
        return 0.0
    equal = sum(1 for t, w in zip(template, tokens) if t == w or t == WILDCARD)
    return equal / len(tokens)


class ParseTree:
    """Fixed-depth parse tree holding the template inventory."""

    def __init__(
        self,
        depth: int = DEFAULT_DEPTH,
        similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    ):
        if depth < 2:
            raise ValueError(f"depth must be >= 2, got {depth}")
        if not 0.0 < similarity_threshold < 1.0:
            raise ValueError(
                f"similarity_threshold must be in (0, 1), got {similarity_threshold}"
            )
        self.depth = depth
        self.similarity_threshold = similarity_threshold
        self._root = _Node()
        self._templates: dict[int, Template] = {}

    def __len__(self) -> int:
        return len(self._templates)

    @property
    def templates(self) -> list[Template]:
        """Templates ordered by id."""
        return [self._templates[i] for i in sorted(self._templates)]

    def get(self, template_id: int) -> Template:
        return self._templates[template_id]

    def _leaf(self, tokens: Sequence[str]) -> _Node:
        node = self._root.children.setdefault(str(len(tokens)), _Node())
        for token in tokens[: self.depth - 2]:
            node = node.children.setdefault(token, _Node())
        return node

    def _insert(self, template: Template) -> None:
        self._templates[template.template_id] = template
        self._leaf(template.tokens).template_ids.append(template.template_id)

    def mine(self, tokens: Sequence[str]) -> int:
        """Route tokens to a template, merging or creating one.

        Args:
            tokens: Masked, non-empty token list.

        Returns:
            The template id assigned to this message.
        """
        if not tokens:
            raise DataError("cannot mine an empty token list")

        leaf = self._leaf(tokens)

        best_id: Optional[int] = None
        best_sim = -1.0
        # Ties go to the oldest template
        for tid in leaf.template_ids:
            sim = similarity(self._templates[tid].tokens, tokens)
            if sim > best_sim:
                best_sim = sim
                best_id = tid

        if best_id is not None and best_sim >= self.similarity_threshold:
            template = self._templates[best_id]
            template.tokens = [
                t if t == w else WILDCARD for t, w in zip(template.tokens, tokens)
            ]
            template.occurrence_count += 1
            return best_id

        new_id = len(self._templates)
        self._insert(Template(new_id, list(tokens), 1))
        return new_id


class LogMiner:
    """Masks and mines log lines into a shared template inventory."""

    def __init__(
        self,
        depth: int = DEFAULT_DEPTH,
        similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
        extra_patterns: Iterable[str] = (),
    ):
        self.extra_pattern_sources = list(extra_patterns)
        self._extra = tuple(re.compile(p) for p in self.extra_pattern_sources)
        self.tree = ParseTree(depth, similarity_threshold)

    @property
    def templates(self) -> list[Template]:
        return self.tree.templates

    def process(self, line: str) -> Optional[int]:
        """Mine one line; blank lines yield None."""
        tokens = mask_parameters(line, self._extra)
        if not tokens:
            return None
        return self.tree.mine(tokens)

    def parse_corpus(self, lines: Iterable[str]) -> tuple[list[int], list[Template]]:
        """Mine lines in order.

        Args:
            lines: Raw log messages.

        Returns:
            Tuple of (template id per line, template inventory). Blank lines
            are rejected because ids must stay aligned with line labels.

        Raises:
            DataError: If a line has no tokens.
        """
        ids = []
        for n, line in enumerate(lines):
            tid = self.process(line)
            if tid is None:
                raise DataError(f"blank log line at index {n}")
            ids.append(tid)
        return ids, self.templates

    def to_dict(self) -> dict:
        return {
            "schema_name": "icad.template_inventory",
            "schema_version": SCHEMA_VERSION,
            "producer": PRODUCER,
            "depth": self.tree.depth,
            "similarity_threshold": self.tree.similarity_threshold,
            "extra_patterns": self.extra_pattern_sources,
            "templates": [t.to_dict() for t in self.templates],
        }


def parse_corpus(
    lines: Iterable[str], miner: Optional[LogMiner] = None
) -> tuple[list[int], list[Template]]:
    """Mine a corpus with a fresh (or given) miner."""
    miner = miner if miner is not None else LogMiner()
    return miner.parse_corpus(lines)


def save_inventory(miner: LogMiner, path: Path) -> None:
    """Write the miner's inventory as JSON, atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(f".tmp.{os.getpid()}")
    with open(temp_path, "w", encoding="utf-8") as f:
        json.dump(miner.to_dict(), f, indent=2)
        f.write("\n")
    temp_path.replace(path)


def load_inventory(path: Path) -> LogMiner:
    """Rebuild a miner from a saved inventory.

    Raises:
        DataError: If the file is not a template inventory.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in template inventory: {e}", path)

    if data.get("schema_name") != "icad.template_inventory":
        raise DataError(f"not a template inventory: {data.get('schema_name')}", path)

    miner = LogMiner(
        depth=int(data["depth"]),
        similarity_threshold=float(data["similarity_threshold"]),
        extra_patterns=data.get("extra_patterns", []),
    )
    templates = sorted(
        (Template.from_dict(t) for t in data["templates"]), key=lambda t: t.template_id
    )
    for expected_id, template in enumerate(templates):
        if template.template_id != expected_id or not template.tokens:
            raise DataError(f"inventory ids must be dense from 0: {template.template_id}", path)
        miner.tree._insert(template)
    return miner
