"""Text codec between prompt geometry and dialog strings.

Grammar emitted and parsed here:

    <box>(X1,Y1),(X2,Y2)</box>
    <points>(X,Y,1),(X,Y,0),...</points>      1 = on the object, 0 = off

Coordinates inside tokens are on the discrete [0, 1000) grid regardless of
image resolution. Parsers scan arbitrary model text and pick out the first
well-formed token, so surrounding prose never changes the result.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .masks import (
    COORD_BINS,
    BBox,
    LabeledPoint,
    denormalize_coord,
    normalize_coord,
)

NO_TARGET_PHRASE = "Object not in the image."

# Default instruction wording; callers may substitute their own templates.
PPG_USER_TEMPLATE = (
    "Find the object this phrase refers to: {expression}. "
    "Reply with its bounding box and labeled points."
)
PQPP_ROUND1_TEMPLATE = (
    "Find the object this phrase refers to: {expression}. "
    "Reply with its bounding box."
)
PQPP_ROUND2_TEMPLATE = (
    "For each of the following points, answer Yes if it lies on the object "
    "and No otherwise: {points}."
)

_BOX_RE = re.compile(
    r"<box>\s*\((\d{1,3}),(\d{1,3})\)\s*,\s*\((\d{1,3}),(\d{1,3})\)\s*</box>"
)
_POINTS_RE = re.compile(r"<points>((?:\s*\(\d{1,3},\d{1,3},[01]\)\s*,?)+)</points>")
_TRIPLE_RE = re.compile(r"\((\d{1,3}),(\d{1,3}),([01])\)")
_WORD_RE = re.compile(r"[A-Za-z]+")


class ParseError(ValueError):
    """Model text did not contain the expected token.

    `kind` is one of "box", "points", "answer"; `raw` keeps the full text
    for logging.
    """

    def __init__(self, kind: str, message: str, raw: str = ""):
        super().__init__(message)
        self.kind = kind
        self.raw = raw


@dataclass(frozen=True)
class SamPrompt:
    """A bounding box plus labeled points: the discrete encoding of a mask."""

    box: BBox
    points: tuple[LabeledPoint, ...] = ()

    def validate_within(self, width: int, height: int) -> "SamPrompt":
        self.box.validate_within(width, height)
        for p in self.points:
            if not (0 <= p.x < width and 0 <= p.y < height):
                raise ValueError(f"point ({p.x},{p.y}) outside {width}x{height}")
        return self


@dataclass(frozen=True)
class PointAnswer:
    """One membership verdict for a queried point."""

    x: int
    y: int
    yes: bool
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0,1]")


@dataclass(frozen=True)
class DialogRecord:
    """An ordered user/assistant exchange forming one training sample."""

    sample_id: str
    task: str  # "ppg" | "pqpp" | "no-target"
    turns: tuple[tuple[str, str], ...]  # (role, text)

    def __post_init__(self):
        if self.task not in ("ppg", "pqpp", "no-target"):
            raise ValueError(f"unknown task tag {self.task!r}")
        for i, (role, _) in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if role != expected:
                raise ValueError(f"turn {i} has role {role!r}, expected {expected!r}")
        want = {"ppg": 2, "pqpp": 4, "no-target": 2}[self.task]
        if len(self.turns) != want:
            raise ValueError(
                f"{self.task} record must have {want} turns, got {len(self.turns)}"
            )

    def to_json_line(self) -> str:
        obj = {
            "id": self.sample_id,
            "task": self.task,
            "turns": [{"role": r, "text": t} for r, t in self.turns],
        }
        return json.dumps(obj, ensure_ascii=False)

    @classmethod
    def from_json_line(cls, line: str) -> "DialogRecord":
        obj = json.loads(line)
        return cls(
            sample_id=obj["id"],
            task=obj["task"],
            turns=tuple((t["role"], t["text"]) for t in obj["turns"]),
        )


def serialize_box(box: BBox, width: int, height: int, bins: int = COORD_BINS) -> str:
    x1 = normalize_coord(box.x1, width, bins)
    y1 = normalize_coord(box.y1, height, bins)
    x2 = normalize_coord(box.x2, width, bins)
    y2 = normalize_coord(box.y2, height, bins)
    return f"<box>({x1},{y1}),({x2},{y2})</box>"


def serialize_points(
    points, width: int, height: int, bins: int = COORD_BINS
) -> str:
    if not points:
        raise ValueError("cannot serialize an empty point list")
    parts = []
    for p in points:
        x = normalize_coord(p.x, width, bins)
        y = normalize_coord(p.y, height, bins)
        parts.append(f"({x},{y},{1 if p.positive else 0})")
    return "<points>" + ",".join(parts) + "</points>"


def _iter_boxes(text: str, width: int, height: int):
    """Yield (span_start, BBox) for each well-formed box token, in order."""
    for m in _BOX_RE.finditer(text):
        nx1, ny1, nx2, ny2 = (int(g) for g in m.groups())
        if nx1 > nx2 or ny1 > ny2:
            continue  # inverted corners: not a well-formed box
        yield m.start(), BBox(
            denormalize_coord(nx1, width),
            denormalize_coord(ny1, height),
            denormalize_coord(nx2, width),
            denormalize_coord(ny2, height),
        )


def _iter_point_groups(text: str, width: int, height: int):
    """Yield (span_start, tuple[LabeledPoint]) per points token, in order."""
    for m in _POINTS_RE.finditer(text):
        pts = []
        for t in _TRIPLE_RE.finditer(m.group(1)):
            nx, ny, flag = int(t.group(1)), int(t.group(2)), t.group(3)
            pts.append(
                LabeledPoint(
                    denormalize_coord(nx, width),
                    denormalize_coord(ny, height),
                    positive=flag == "1",
                )
            )
        yield m.start(), tuple(pts)


def _check_cardinality(points, n1: int, n2: int, raw: str):
    pos = sum(1 for p in points if p.positive)
    neg = len(points) - pos
    if pos != n1 or neg != n2:
        raise ParseError(
            "points",
            f"expected {n1} positive + {n2} negative points, got {pos}+{neg}",
            raw,
        )


def parse_ppg_response(
    text: str, width: int, height: int, n1: int = 2, n2: int = 1
) -> tuple[BBox, tuple[LabeledPoint, ...]]:
    """First well-formed box and points tokens, denormalized to pixels.

    The points token must carry exactly n1 positives and n2 negatives.
    """
    box = next((b for _, b in _iter_boxes(text, width, height)), None)
    if box is None:
        raise ParseError("box", "no well-formed box token in response", text)
    points = next((p for _, p in _iter_point_groups(text, width, height)), None)
    if points is None:
        raise ParseError("points", "no well-formed points token in response", text)
    _check_cardinality(points, n1, n2, text)
    return box, points


def parse_ppg_instances(
    text: str, width: int, height: int, n1: int = 2, n2: int = 1
) -> list[tuple[BBox, tuple[LabeledPoint, ...]]]:
    """All (box, points) blocks in order, for multi-instance responses.

    Boxes and point groups are paired positionally; a count mismatch or an
    off-cardinality group is a parse failure.
    """
    boxes = list(_iter_boxes(text, width, height))
    groups = list(_iter_point_groups(text, width, height))
    if not boxes:
        raise ParseError("box", "no well-formed box token in response", text)
    if len(boxes) != len(groups):
        raise ParseError(
            "points",
            f"{len(boxes)} box tokens but {len(groups)} points tokens",
            text,
        )
    out = []
    for (_, box), (_, points) in zip(boxes, groups):
        _check_cardinality(points, n1, n2, text)
        out.append((box, points))
    return out


def parse_boxes(text: str, width: int, height: int) -> list[BBox]:
    """All well-formed box tokens (round-1 answers may carry several)."""
    boxes = [b for _, b in _iter_boxes(text, width, height)]
    if not boxes:
        raise ParseError("box", "no well-formed box token in response", text)
    return boxes


def parse_answer(text: str) -> bool:
    """Leading yes/no token, case-insensitive; True for yes."""
    m = _WORD_RE.search(text)
    if m is not None:
        word = m.group(0).lower()
        if word == "yes":
            return True
        if word == "no":
            return False
    raise ParseError("answer", "response does not start with yes or no", text)


def parse_answers(text: str, expected: int) -> list[bool]:
    """Ordered yes/no verdicts from a batched answer text.

    Every yes/no word in the text counts as one verdict; the total must
    match `expected`.
    """
    verdicts = []
    for m in _WORD_RE.finditer(text):
        word = m.group(0).lower()
        if word == "yes":
            verdicts.append(True)
        elif word == "no":
            verdicts.append(False)
    if len(verdicts) != expected:
        raise ParseError(
            "answer",
            f"expected {expected} yes/no answers, found {len(verdicts)}",
            text,
        )
    return verdicts


def parse_no_target(text: str) -> bool:
    """True iff the exact no-target phrase appears (case-insensitive)."""
    return NO_TARGET_PHRASE.rstrip(".").lower() in text.lower()


def format_answers(verdicts) -> str:
    return ", ".join("Yes" if v else "No" for v in verdicts)


def format_query_points(points, width: int, height: int) -> str:
    """Plain (X,Y) list on the text grid, for round-2 user turns."""
    return ", ".join(
        f"({normalize_coord(x, width)},{normalize_coord(y, height)})"
        for x, y in points
    )


def build_ppg_record(
    sample_id: str,
    expression: str,
    blocks,
    width: int,
    height: int,
    user_template: str = PPG_USER_TEMPLATE,
) -> DialogRecord:
    """Single-exchange record; one box+points block per target instance.

    `blocks` is a sequence of (BBox, points) pairs in annotation order.
    """
    parts = []
    for box, points in blocks:
        parts.append(
            serialize_box(box, width, height) + serialize_points(points, width, height)
        )
    return DialogRecord(
        sample_id=sample_id,
        task="ppg",
        turns=(
            ("user", user_template.format(expression=expression)),
            ("assistant", " ".join(parts)),
        ),
    )


def build_pqpp_record(
    sample_id: str,
    expression: str,
    boxes,
    point_answers,
    width: int,
    height: int,
    round1_template: str = PQPP_ROUND1_TEMPLATE,
    round2_template: str = PQPP_ROUND2_TEMPLATE,
) -> DialogRecord:
    """Two-round record: expression -> box(es), then batched point queries.

    `point_answers` is a sequence of PointAnswer in query order; the round-2
    assistant turn answers Yes/No per point, in that order.
    """
    box_text = " ".join(serialize_box(b, width, height) for b in boxes)
    query = format_query_points([(a.x, a.y) for a in point_answers], width, height)
    answers = format_answers(a.yes for a in point_answers)
    return DialogRecord(
        sample_id=sample_id,
        task="pqpp",
        turns=(
            ("user", round1_template.format(expression=expression)),
            ("assistant", box_text),
            ("user", round2_template.format(points=query)),
            ("assistant", answers),
        ),
    )


def build_no_target_record(
    sample_id: str,
    expression: str,
    task_template: str = PQPP_ROUND1_TEMPLATE,
) -> DialogRecord:
    """Record teaching the model to reject an absent referent."""
    return DialogRecord(
        sample_id=sample_id,
        task="no-target",
        turns=(
            ("user", task_template.format(expression=expression)),
            ("assistant", NO_TARGET_PHRASE),
        ),
    )
