"""End-to-end flows: training-record generation and expression-to-mask
inference, for both prompting styles.

Tasks are named by how the model supplies prompts:

* "ppg"  — the model emits box + labeled points in one reply.
* "pqpp" — the model emits a box, then answers yes/no membership queries for
  points sampled inside it; confident answers become the prompt.

Per-sample randomness derives from (config seed, sample id), so batches are
reproducible bit-for-bit at any worker count. Every per-sample error degrades
to a recorded failure; a run over N samples always yields N outcomes.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Protocol

from .codec import (
    NO_TARGET_PHRASE,
    DialogRecord,
    ParseError,
    PointAnswer,
    PQPP_ROUND1_TEMPLATE,
    PQPP_ROUND2_TEMPLATE,
    PPG_USER_TEMPLATE,
    SamPrompt,
    build_no_target_record,
    build_ppg_record,
    build_pqpp_record,
    format_query_points,
    parse_answers,
    parse_boxes,
    parse_no_target,
    parse_ppg_instances,
    serialize_box,
    serialize_points,
)
from .dataset import RESample
from .masks import BinaryMask, point_in_mask, tight_bbox, union_masks
from .metrics import EvalReport, accumulate
from .sampling import (
    NoNegativeCandidates,
    SamplingConfig,
    derive_rng,
    filter_by_confidence,
    grid_points,
    random_points_in_box,
    rank_groups,
    sample_point_groups,
    sample_pqpp_training_points,
    select_training_groups,
)
from .segmenter import Segmenter, SegmenterError, SegmentRequest

logger = logging.getLogger(__name__)

TASKS = ("ppg", "pqpp")


class ResponderError(RuntimeError):
    """The responder could not produce text for a sample."""


class SkipSample(RuntimeError):
    """A sample cannot yield a training record; carries a reason code."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


class Responder(Protocol):
    """The language-model stand-in: locates objects and judges points."""

    def respond(self, sample: RESample) -> str: ...

    def judge_points(self, sample: RESample, points) -> list[PointAnswer]: ...


class GtOracleResponder:
    """Answers every query from ground truth; the closure-test responder."""

    def __init__(self, mode: str, cfg: SamplingConfig):
        if mode not in TASKS:
            raise ValueError(f"unknown responder mode {mode!r}")
        self.mode = mode
        self.cfg = cfg

    def respond(self, sample: RESample) -> str:
        if sample.no_target:
            return NO_TARGET_PHRASE
        parts = []
        for i, target in enumerate(sample.targets):
            box = tight_bbox(target)
            if box is None:
                raise ResponderError(f"target {i} of {sample.sample_id} is empty")
            text = serialize_box(box, sample.width, sample.height)
            if self.mode == "ppg":
                rng = derive_rng(self.cfg.seed, f"{sample.sample_id}/{i}", "oracle-ppg")
                one = replace(self.cfg, K=1, keep=1, k=1)
                group = sample_point_groups(target, box, one, rng)[0]
                text += serialize_points(
                    group.labeled_points(), sample.width, sample.height
                )
            parts.append(text)
        return " ".join(parts)

    def judge_points(self, sample: RESample, points) -> list[PointAnswer]:
        union = union_masks(sample.targets, sample.width, sample.height)
        return [
            PointAnswer(x, y, yes=point_in_mask(union, x, y), confidence=1.0)
            for x, y in points
        ]


class ScriptedResponder:
    """Plays back fixture texts keyed by sample id.

    Fixture JSON: {sample_id: {"respond": str,
                               "judge": {"text": str, "confidences": [floats]}}}
    """

    def __init__(self, script: dict | str):
        if isinstance(script, str):
            with open(script, "r", encoding="utf-8") as fh:
                script = json.load(fh)
        self.script = script

    def _entry(self, sample_id: str) -> dict:
        try:
            return self.script[sample_id]
        except KeyError:
            raise ResponderError(f"no scripted entry for sample {sample_id!r}")

    def respond(self, sample: RESample) -> str:
        return str(self._entry(sample.sample_id)["respond"])

    def judge_points(self, sample: RESample, points) -> list[PointAnswer]:
        entry = self._entry(sample.sample_id)
        judge = entry.get("judge")
        if judge is None:
            raise ResponderError(f"no judge entry for sample {sample.sample_id!r}")
        verdicts = parse_answers(str(judge["text"]), expected=len(points))
        confidences = list(judge["confidences"])
        if len(confidences) != len(points):
            raise ParseError(
                "answer",
                f"{len(confidences)} confidences for {len(points)} points",
                str(judge["text"]),
            )
        return [
            PointAnswer(x, y, yes=v, confidence=float(c))
            for (x, y), v, c in zip(points, verdicts, confidences)
        ]


class RemoteResponder:
    """Chat-endpoint binding: POST {url}/v1/chat with the dialog so far.

    The service answers {"text": str, "token_confidences": [floats]} with one
    confidence per yes/no answer token.
    """

    def __init__(
        self,
        base_url: str,
        mode: str,
        timeout: float = 60.0,
        round1_template: str | None = None,
        round2_template: str = PQPP_ROUND2_TEMPLATE,
    ):
        import requests

        self.base_url = base_url.rstrip("/")
        self.mode = mode
        self.timeout = timeout
        self.round1_template = round1_template or (
            PPG_USER_TEMPLATE if mode == "ppg" else PQPP_ROUND1_TEMPLATE
        )
        self.round2_template = round2_template
        self._session = requests.Session()
        self._history: dict[str, list[dict]] = {}
        self._lock = threading.Lock()

    def _chat(self, turns: list[dict]) -> dict:
        import requests

        try:
            resp = self._session.post(
                self.base_url + "/v1/chat", json={"turns": turns}, timeout=self.timeout
            )
            resp.raise_for_status()
            return resp.json()
        except requests.RequestException as exc:
            raise ResponderError(f"chat endpoint failure: {exc}") from exc

    def respond(self, sample: RESample) -> str:
        user = self.round1_template.format(expression=sample.expression)
        body = self._chat([{"role": "user", "text": user}])
        text = str(body.get("text", ""))
        with self._lock:
            self._history[sample.sample_id] = [
                {"role": "user", "text": user},
                {"role": "assistant", "text": text},
            ]
        return text

    def judge_points(self, sample: RESample, points) -> list[PointAnswer]:
        query = self.round2_template.format(
            points=format_query_points(points, sample.width, sample.height)
        )
        with self._lock:
            turns = list(self._history.get(sample.sample_id, []))
        turns.append({"role": "user", "text": query})
        body = self._chat(turns)
        text = str(body.get("text", ""))
        verdicts = parse_answers(text, expected=len(points))
        confidences = list(body.get("token_confidences", []))
        if len(confidences) != len(verdicts):
            raise ParseError(
                "answer",
                f"{len(confidences)} token confidences for {len(verdicts)} answers",
                text,
            )
        return [
            PointAnswer(x, y, yes=v, confidence=float(c))
            for (x, y), v, c in zip(points, verdicts, confidences)
        ]


class CachingResponder:
    """Memoizes responder outputs so sweeps can replay answers instead of
    re-querying when only post-hoc filtering changes."""

    def __init__(self, inner: Responder):
        self.inner = inner
        self._respond: dict[str, str] = {}
        self._judge: dict[tuple, list[PointAnswer]] = {}
        self._lock = threading.Lock()

    def respond(self, sample: RESample) -> str:
        with self._lock:
            if sample.sample_id in self._respond:
                return self._respond[sample.sample_id]
        text = self.inner.respond(sample)
        with self._lock:
            self._respond[sample.sample_id] = text
        return text

    def judge_points(self, sample: RESample, points) -> list[PointAnswer]:
        key = (sample.sample_id, tuple(points))
        with self._lock:
            if key in self._judge:
                return self._judge[key]
        answers = self.inner.judge_points(sample, points)
        with self._lock:
            self._judge[key] = answers
        return answers


# ---------------------------------------------------------------------------
# Training-record generation


def generate_no_target_record(sample: RESample) -> DialogRecord:
    if not sample.no_target:
        raise ValueError(f"sample {sample.sample_id} has targets; not a no-target case")
    return build_no_target_record(sample.sample_id, sample.expression)


def generate_ppg_record(
    sample: RESample, segmenter: Segmenter, cfg: SamplingConfig
) -> DialogRecord:
    """Sample K groups per target, keep the segmenter's best, emit k of them."""
    if sample.no_target:
        raise ValueError("no-target samples are routed to generate_no_target_record")
    blocks = []
    for i, target in enumerate(sample.targets):
        box = tight_bbox(target)
        if box is None:
            raise SkipSample("empty-target", f"target {i} has no on-pixels")
        rng = derive_rng(cfg.seed, f"{sample.sample_id}/{i}", "gen-ppg")
        groups = sample_point_groups(target, box, cfg, rng)
        ranked = rank_groups(groups, box, target, segmenter, sample.image_id)
        for group in select_training_groups(ranked, cfg, rng):
            blocks.append((box, group.labeled_points()))
    return build_ppg_record(
        sample.sample_id, sample.expression, blocks, sample.width, sample.height
    )


def generate_pqpp_record(sample: RESample, cfg: SamplingConfig) -> DialogRecord:
    """Supervise the tight box(es), then yes/no for points sampled in the
    union's box and labeled against the union mask."""
    if sample.no_target:
        raise ValueError("no-target samples are routed to generate_no_target_record")
    boxes = []
    for i, target in enumerate(sample.targets):
        box = tight_bbox(target)
        if box is None:
            raise SkipSample("empty-target", f"target {i} has no on-pixels")
        boxes.append(box)
    union = union_masks(sample.targets, sample.width, sample.height)
    union_box = tight_bbox(union)
    rng = derive_rng(cfg.seed, sample.sample_id, "gen-pqpp")
    labeled = sample_pqpp_training_points(union, union_box, cfg, rng)
    answers = [
        PointAnswer(x, y, yes=on, confidence=1.0) for (x, y), on in labeled
    ]
    return build_pqpp_record(
        sample.sample_id, sample.expression, boxes, answers, sample.width, sample.height
    )


@dataclass(frozen=True)
class GenOutcome:
    sample_id: str
    task: str  # record task tag, or requested task when skipped
    record: DialogRecord | None
    skip: str | None = None


def generate_record(
    sample: RESample, task: str, segmenter: Segmenter, cfg: SamplingConfig
) -> GenOutcome:
    try:
        if sample.no_target:
            record = generate_no_target_record(sample)
        elif task == "ppg":
            record = generate_ppg_record(sample, segmenter, cfg)
        elif task == "pqpp":
            record = generate_pqpp_record(sample, cfg)
        else:
            raise ValueError(f"unknown task {task!r}")
        return GenOutcome(sample.sample_id, record.task, record)
    except SkipSample as exc:
        logger.warning("skipping sample %s: %s", sample.sample_id, exc)
        return GenOutcome(sample.sample_id, task, None, skip=exc.code)
    except NoNegativeCandidates:
        logger.warning("skipping sample %s: no negative candidates", sample.sample_id)
        return GenOutcome(sample.sample_id, task, None, skip="no-negative-candidates")
    except SegmenterError as exc:
        logger.warning("skipping sample %s: segmenter failure %s", sample.sample_id, exc)
        return GenOutcome(sample.sample_id, task, None, skip="segmenter")


def run_generation(
    samples, task: str, segmenter: Segmenter, cfg: SamplingConfig, workers: int = 1
) -> list[GenOutcome]:
    """One outcome per sample, in input order, regardless of worker count."""
    samples = list(samples)
    if workers <= 1:
        return [generate_record(s, task, segmenter, cfg) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: generate_record(s, task, segmenter, cfg), samples))


# ---------------------------------------------------------------------------
# Inference


@dataclass(frozen=True)
class InferenceOutcome:
    sample_id: str
    no_target: bool = False
    mask: BinaryMask | None = None
    failure: str | None = None
    retained: tuple | None = None  # per-box retained points, for sweep metadata


def infer_ppg(
    sample: RESample,
    responder: Responder,
    segmenter: Segmenter,
    cfg: SamplingConfig,
) -> InferenceOutcome:
    """One response carrying box + points per instance; masks are unioned."""
    sid = sample.sample_id
    try:
        text = responder.respond(sample)
    except (ResponderError, ParseError) as exc:
        return InferenceOutcome(sid, failure=f"responder:{exc}")
    if parse_no_target(text):
        return InferenceOutcome(sid, no_target=True)
    try:
        blocks = parse_ppg_instances(text, sample.width, sample.height, cfg.n1, cfg.n2)
    except ParseError as exc:
        return InferenceOutcome(sid, failure=f"parse:{exc.kind}")
    masks = []
    for box, points in blocks:
        request = SegmentRequest(
            image_id=sample.image_id,
            width=sample.width,
            height=sample.height,
            prompt=SamPrompt(box=box, points=points),
        )
        try:
            masks.append(segmenter.segment(request).mask)
        except SegmenterError:
            return InferenceOutcome(sid, failure="segmenter")
    return InferenceOutcome(
        sid, mask=union_masks(masks, sample.width, sample.height)
    )


def infer_pqpp(
    sample: RESample,
    responder: Responder,
    segmenter: Segmenter,
    cfg: SamplingConfig,
    threshold: float | None = None,
    point_source: str = "grid",
    random_n: int = 25,
) -> InferenceOutcome:
    """Box from round 1, membership queries over sampled points in round 2,
    confident answers fed to the segmenter. An emptied point set falls back
    to box-only prompting."""
    sid = sample.sample_id
    if threshold is None:
        threshold = cfg.confidence_threshold
    try:
        text = responder.respond(sample)
    except (ResponderError, ParseError) as exc:
        return InferenceOutcome(sid, failure=f"responder:{exc}")
    if parse_no_target(text):
        return InferenceOutcome(sid, no_target=True)
    try:
        boxes = parse_boxes(text, sample.width, sample.height)
    except ParseError as exc:
        return InferenceOutcome(sid, failure=f"parse:{exc.kind}")
    masks = []
    retained_trace = []
    for box_index, box in enumerate(boxes):
        if point_source == "grid":
            points = grid_points(box, cfg.grid_rows, cfg.grid_cols)
        elif point_source == "random":
            rng = derive_rng(cfg.seed, f"{sid}/{box_index}", "infer-random-points")
            points = random_points_in_box(box, random_n, rng)
        else:
            raise ValueError(f"unknown point source {point_source!r}")
        try:
            answers = responder.judge_points(sample, points)
        except (ResponderError, ParseError) as exc:
            return InferenceOutcome(sid, failure=f"responder:{exc}")
        retained = filter_by_confidence(answers, threshold)
        retained_trace.append(tuple(retained))
        request = SegmentRequest(
            image_id=sample.image_id,
            width=sample.width,
            height=sample.height,
            prompt=SamPrompt(box=box, points=tuple(retained)),
        )
        try:
            masks.append(segmenter.segment(request).mask)
        except SegmenterError:
            return InferenceOutcome(sid, failure="segmenter")
    return InferenceOutcome(
        sid,
        mask=union_masks(masks, sample.width, sample.height),
        retained=tuple(retained_trace),
    )


def infer_sample(
    sample: RESample,
    task: str,
    responder: Responder,
    segmenter: Segmenter,
    cfg: SamplingConfig,
    **pqpp_options,
) -> InferenceOutcome:
    if task == "ppg":
        return infer_ppg(sample, responder, segmenter, cfg)
    if task == "pqpp":
        return infer_pqpp(sample, responder, segmenter, cfg, **pqpp_options)
    raise ValueError(f"unknown task {task!r}")


def run_inference(
    samples,
    task: str,
    responder: Responder,
    segmenter: Segmenter,
    cfg: SamplingConfig,
    workers: int = 1,
    **pqpp_options,
) -> list[InferenceOutcome]:
    samples = list(samples)

    def one(sample: RESample) -> InferenceOutcome:
        return infer_sample(sample, task, responder, segmenter, cfg, **pqpp_options)

    if workers <= 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, samples))


def score_outcomes(samples, outcomes) -> EvalReport:
    """Fold inference outcomes into an EvalReport; failures score as empty
    predictions rather than being dropped."""
    report = EvalReport()
    for sample, outcome in zip(samples, outcomes):
        gt = (
            union_masks(sample.targets, sample.width, sample.height)
            if sample.targets
            else None
        )
        if outcome.no_target:
            pred = None
        elif outcome.mask is not None:
            pred = outcome.mask
        else:
            pred = BinaryMask.zeros(sample.width, sample.height)
        accumulate(report, sample.sample_id, gt, pred, failure=outcome.failure)
    return report
