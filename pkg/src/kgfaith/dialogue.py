"""Dialogue records: history, grounding triples, response, span labels.

Records travel as JSON lines. Triples inside records use entity and
relation names (not ids) so files stay readable and graph-independent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import MalformedLine

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MentionSpan:
    """A linked entity mention: [begin, end) character offsets into a text."""

    begin: int
    end: int
    surface: str
    entity: str
    entity_id: int | None = None

    def as_pair(self) -> list[int]:
        return [self.begin, self.end]


@dataclass
class DialogueRecord:
    """One grounded exchange: prior turns, grounding triples, response.

    ``spans`` optionally pre-links the response: (entity name, begin, end).
    """

    history: list[str]
    triples: list[tuple[str, str, str]]
    response: str
    gold_response: str | None = None
    spans: list[tuple[str, int, int]] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def history_text(self) -> str:
        return "\n".join(self.history)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "history": list(self.history),
            "triples": [list(t) for t in self.triples],
            "response": self.response,
        }
        if self.gold_response is not None:
            out["gold_response"] = self.gold_response
        if self.spans is not None:
            out["spans"] = [list(s) for s in self.spans]
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> DialogueRecord:
        history = obj.get("history")
        triples = obj.get("triples")
        response = obj.get("response")
        if (
            not isinstance(history, list)
            or not all(isinstance(h, str) for h in history)
            or not isinstance(response, str)
            or not isinstance(triples, list)
        ):
            raise ValueError("record needs history: [str], triples: [[s,p,o]], response: str")
        parsed: list[tuple[str, str, str]] = []
        for t in triples:
            if not isinstance(t, (list, tuple)) or len(t) != 3:
                raise ValueError(f"triple must have 3 parts, got {t!r}")
            parsed.append((str(t[0]), str(t[1]), str(t[2])))
        spans = obj.get("spans")
        parsed_spans: list[tuple[str, int, int]] | None = None
        if spans is not None:
            parsed_spans = []
            for s in spans:
                if not isinstance(s, (list, tuple)) or len(s) != 3:
                    raise ValueError(f"span must be [entity, begin, end], got {s!r}")
                ent, b, e = str(s[0]), int(s[1]), int(s[2])
                if not 0 <= b < e <= len(response):
                    raise ValueError(f"span [{b}, {e}) out of range for response")
                parsed_spans.append((ent, b, e))
        known = {"history", "triples", "response", "gold_response", "spans"}
        extra = {k: v for k, v in obj.items() if k not in known}
        return cls(
            history=list(history),
            triples=parsed,
            response=response,
            gold_response=obj.get("gold_response"),
            spans=parsed_spans,
            extra=extra,
        )


def splice(
    text: str, edits: list[tuple[int, int, str]]
) -> tuple[str, list[tuple[int, int]]]:
    """Apply non-overlapping span replacements left to right.

    Each edit is (begin, end, replacement). Returns the new text and the
    new [begin, end) span of every replacement, in edit order, with all
    offsets shifted to account for earlier edits.
    """
    ordered = sorted(range(len(edits)), key=lambda i: edits[i][0])
    for a, b in zip(ordered, ordered[1:]):
        if edits[a][1] > edits[b][0]:
            raise ValueError(
                f"overlapping edits at [{edits[a][0]}, {edits[a][1]}) "
                f"and [{edits[b][0]}, {edits[b][1]})"
            )
    pieces: list[str] = []
    new_spans: dict[int, tuple[int, int]] = {}
    cursor = 0
    delta = 0
    for i in ordered:
        begin, end, repl = edits[i]
        if not 0 <= begin <= end <= len(text):
            raise ValueError(f"edit [{begin}, {end}) out of range")
        pieces.append(text[cursor:begin])
        pieces.append(repl)
        new_begin = begin + delta
        new_spans[i] = (new_begin, new_begin + len(repl))
        delta += len(repl) - (end - begin)
        cursor = end
    pieces.append(text[cursor:])
    return "".join(pieces), [new_spans[i] for i in range(len(edits))]


def read_dialogues(path: str | Path) -> list[DialogueRecord]:
    """Parse a JSONL file of dialogue records.

    Blank lines are skipped; a line that is not valid JSON or not a
    valid record raises MalformedLine carrying the 1-based line number.
    """
    records: list[DialogueRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record must be a JSON object")
                records.append(DialogueRecord.from_json(obj))
            except (json.JSONDecodeError, ValueError) as err:
                raise MalformedLine(lineno, line) from err
    logger.info("read %d dialogue records from %s", len(records), path)
    return records


def write_dialogues(path: str | Path, records: Iterable[DialogueRecord]) -> int:
    """Write records as JSON lines; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
            n += 1
    return n
