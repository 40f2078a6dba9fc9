"""RES/GRES scoring: per-sample IoU, cumulative IoU, mean IoU and no-target
accuracy, with the no-target conventions used by generalized benchmarks:

* correct rejection scores IoU 1 and contributes nothing to cumulative sums;
* a mask predicted for a no-target sample (or vice versa) scores IoU 0 and
  its area counts toward the union sum.

Reports are mergeable, so shards scored on separate workers combine into the
same numbers as a single pass.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

from .masks import BinaryMask, iou as mask_iou


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    iou: float
    gt_no_target: bool
    pred_no_target: bool
    failure: str | None = None


@dataclass
class EvalReport:
    records: list[SampleScore] = field(default_factory=list)
    intersection_sum: int = 0
    union_sum: int = 0

    def __post_init__(self):
        if self.intersection_sum > self.union_sum:
            raise ValueError("intersection sum exceeds union sum")

    @property
    def n_samples(self) -> int:
        return len(self.records)

    @property
    def n_failures(self) -> int:
        return sum(1 for r in self.records if r.failure)

    def by_failure_code(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            if r.failure:
                out[r.failure] = out.get(r.failure, 0) + 1
        return dict(sorted(out.items()))


def accumulate(
    report: EvalReport,
    sample_id: str,
    gt: BinaryMask | None,
    pred: BinaryMask | None,
    failure: str | None = None,
) -> EvalReport:
    """Score one sample into the report. None stands for a no-target outcome."""
    if gt is None and pred is None:
        score = SampleScore(sample_id, 1.0, True, True, failure)
    elif gt is None:
        report.union_sum += pred.area
        score = SampleScore(sample_id, 0.0, True, False, failure)
    elif pred is None:
        report.union_sum += gt.area
        score = SampleScore(sample_id, 0.0, False, True, failure)
    else:
        if gt.bits.shape != pred.bits.shape:
            raise ValueError(
                f"gt is {gt.width}x{gt.height} but prediction is "
                f"{pred.width}x{pred.height}"
            )
        value = mask_iou(gt, pred)
        inter = int((gt.bits & pred.bits).sum())
        union = int((gt.bits | pred.bits).sum())
        report.intersection_sum += inter
        report.union_sum += union
        score = SampleScore(sample_id, value, False, False, failure)
    report.records.append(score)
    return report


def ciou(report: EvalReport) -> float:
    """Cumulative IoU: total intersection over total union pixels.

    Defined as 1.0 when the union sum is zero (every sample was a correct
    rejection, or the report is empty).
    """
    if report.union_sum == 0:
        return 1.0
    return report.intersection_sum / report.union_sum


def giou(report: EvalReport) -> float:
    """Mean of per-sample IoUs, correct rejections counting as 1.

    fsum keeps the mean exactly permutation-invariant, so shard-merged
    reports score identically to a monolithic pass.
    """
    if not report.records:
        raise ValueError("cannot average an empty report")
    return math.fsum(r.iou for r in report.records) / len(report.records)


def n_acc(report: EvalReport) -> float | None:
    """Fraction of no-target samples answered with no-target; None if the
    split has no such samples."""
    gts = [r for r in report.records if r.gt_no_target]
    if not gts:
        return None
    return sum(1 for r in gts if r.pred_no_target) / len(gts)


def merge(a: EvalReport, b: EvalReport) -> EvalReport:
    return EvalReport(
        records=list(a.records) + list(b.records),
        intersection_sum=a.intersection_sum + b.intersection_sum,
        union_sum=a.union_sum + b.union_sum,
    )


def summary(report: EvalReport) -> dict:
    acc = n_acc(report)
    return {
        "ciou": ciou(report),
        "giou": giou(report) if report.records else None,
        "n_acc": acc,
        "n_samples": report.n_samples,
        "n_failures": report.n_failures,
        "by_failure_code": report.by_failure_code(),
    }


def write_summary_json(report: EvalReport, path, extra: dict | None = None):
    obj = dict(extra or {})
    obj.update(summary(report))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_per_sample_csv(report: EvalReport, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "iou", "gt_no_target", "pred_no_target", "failure"])
        for r in report.records:
            writer.writerow(
                [
                    r.sample_id,
                    f"{r.iou:.6f}",
                    int(r.gt_no_target),
                    int(r.pred_no_target),
                    r.failure or "",
                ]
            )
