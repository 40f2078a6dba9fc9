"""Operator command line: dataset import, training-data generation,
evaluation, ablation sweeps, and prompt upper-bound analysis.

Exit codes: 0 success, 2 config error, 3 IO error, 4 remote service
unreachable, 5 per-sample failure rate above the --fail-threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .config import ConfigError, RunConfig, resolve_config
from .dataset import convert_coco_refs, load_manifest, load_samples
from .masks import tight_bbox, union_masks
from .metrics import ciou, giou, n_acc, summary, write_per_sample_csv
from .pipeline import (
    CachingResponder,
    GtOracleResponder,
    RemoteResponder,
    ScriptedResponder,
    run_generation,
    run_inference,
    score_outcomes,
)
from .sampling import derive_rng
from .segmenter import (
    IdentitySegmenter,
    RemoteSegmenter,
    SegmenterError,
    SyntheticSegmenter,
    scene_from_targets,
    upper_bound_iou,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_REMOTE = 4
EXIT_PARTIAL = 5

logger = logging.getLogger(__name__)


class RemoteUnreachable(RuntimeError):
    pass


def build_segmenter(cfg: RunConfig, samples):
    if cfg.backend == "identity":
        seg = IdentitySegmenter()
        for s in samples:
            if s.targets:
                seg.register(s.image_id, union_masks(s.targets, s.width, s.height))
        return seg
    if cfg.backend == "synthetic":
        seg = SyntheticSegmenter()
        for s in samples:
            seg.register(s.image_id, scene_from_targets(s.width, s.height, s.targets))
        return seg
    _check_remote(cfg.backend_url)
    return RemoteSegmenter(cfg.backend_url)


def build_responder(cfg: RunConfig, task: str):
    if cfg.responder == "gt-oracle":
        return GtOracleResponder(task, cfg.sampling)
    if cfg.responder == "scripted":
        return ScriptedResponder(cfg.responder_path)
    _check_remote(cfg.responder_path)
    return RemoteResponder(cfg.responder_path, task)


def _check_remote(url: str):
    import requests

    try:
        requests.get(url.rstrip("/") + "/v1/health", timeout=5)
    except requests.RequestException as exc:
        raise RemoteUnreachable(f"remote service at {url} unreachable: {exc}")


def _config_header(cfg: RunConfig, **extra) -> dict:
    header = {"tool": "promptseg", "version": __version__}
    header.update(extra)
    header.update(cfg.resolved())
    return header


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    return f"{value:.6f}"


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    manifest = load_manifest(args.manifest)
    samples = list(load_samples(manifest))
    segmenter = build_segmenter(cfg, samples)
    outcomes = run_generation(samples, args.task, segmenter, cfg.sampling, cfg.workers)

    header = _config_header(cfg, command="gen-data", task=args.task, manifest=str(args.manifest))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"config": header}, sort_keys=True, ensure_ascii=False))
        fh.write("\n")
        for outcome in outcomes:
            if outcome.record is not None:
                fh.write(outcome.record.to_json_line())
                fh.write("\n")

    by_task: dict[str, int] = {}
    by_skip: dict[str, int] = {}
    for o in outcomes:
        if o.record is not None:
            by_task[o.task] = by_task.get(o.task, 0) + 1
        else:
            by_skip[o.skip] = by_skip.get(o.skip, 0) + 1
    n_skipped = sum(by_skip.values())
    print(
        f"gen-data: {len(outcomes)} samples, "
        f"{len(outcomes) - n_skipped} records {json.dumps(by_task, sort_keys=True)}, "
        f"{n_skipped} skipped {json.dumps(by_skip, sort_keys=True)}"
    )
    if len(outcomes) and n_skipped / len(outcomes) > args.fail_threshold:
        return EXIT_PARTIAL
    return EXIT_OK


def _run_eval(samples, task, responder, segmenter, cfg, threshold=None, grid=None, random_n=None):
    sampling = cfg.sampling
    opts = {}
    if task == "pqpp":
        if threshold is not None:
            opts["threshold"] = threshold
        if random_n is not None:
            opts["point_source"] = "random"
            opts["random_n"] = random_n
        elif grid is not None:
            from dataclasses import replace

            sampling = replace(sampling, grid_rows=grid[0], grid_cols=grid[1])
    outcomes = run_inference(
        samples, task, responder, segmenter, sampling, cfg.workers, **opts
    )
    return outcomes, score_outcomes(samples, outcomes)


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    manifest = load_manifest(args.manifest)
    samples = list(load_samples(manifest))
    segmenter = build_segmenter(cfg, samples)
    responder = build_responder(cfg, args.task)
    _, report = _run_eval(samples, args.task, responder, segmenter, cfg)

    header = _config_header(cfg, command="eval", task=args.task, manifest=str(args.manifest))
    obj = {"config": header}
    obj.update(summary(report))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.csv:
        write_per_sample_csv(report, args.csv)
    print(
        f"eval: ciou={_fmt(ciou(report))} giou={_fmt(giou(report))} "
        f"n_acc={_fmt(n_acc(report))} samples={report.n_samples} "
        f"failures={report.n_failures}"
    )
    if report.n_samples and report.n_failures / report.n_samples > args.fail_threshold:
        return EXIT_PARTIAL
    return EXIT_OK


def _parse_axis_values(axis: str, raw: str):
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError("no sweep values given")
    if axis == "threshold":
        return [float(v) for v in values]
    if axis == "grid":
        out = []
        for v in values:
            rows, _, cols = v.partition("x")
            out.append((int(rows), int(cols)))
        return out
    if axis == "random_n":
        return [int(v) for v in values]
    raise ConfigError(f"unknown sweep axis {axis!r}")


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    values = _parse_axis_values(args.axis, args.values)
    manifest = load_manifest(args.manifest)
    samples = list(load_samples(manifest))
    segmenter = build_segmenter(cfg, samples)
    responder = CachingResponder(build_responder(cfg, args.task))

    rows = []
    nested = True
    previous_retained = None
    for value in values:
        if args.axis == "threshold":
            outcomes, report = _run_eval(
                samples, args.task, responder, segmenter, cfg, threshold=value
            )
            retained = {
                o.sample_id: frozenset(
                    (p.x, p.y, p.positive) for box in (o.retained or ()) for p in box
                )
                for o in outcomes
            }
            if previous_retained is not None:
                # thresholds ascend, so each retained set must shrink
                nested &= all(
                    retained[sid] <= previous_retained.get(sid, frozenset())
                    for sid in retained
                )
            previous_retained = retained
        elif args.axis == "grid":
            outcomes, report = _run_eval(
                samples, args.task, responder, segmenter, cfg, grid=value
            )
        else:
            outcomes, report = _run_eval(
                samples, args.task, responder, segmenter, cfg, random_n=value
            )
        rows.append((value, report))

    header = _config_header(
        cfg, command="sweep", task=args.task, manifest=str(args.manifest), axis=args.axis
    )
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
        if args.axis == "threshold":
            fh.write(f"# retained_nested: {str(nested).lower()}\n")
        fh.write("value\tciou\tgiou\tn_acc\tn_samples\tn_failures\n")
        for value, report in rows:
            label = f"{value[0]}x{value[1]}" if args.axis == "grid" else str(value)
            fh.write(
                f"{label}\t{_fmt(ciou(report))}\t{_fmt(giou(report))}\t"
                f"{_fmt(n_acc(report))}\t{report.n_samples}\t{report.n_failures}\n"
            )
    print(f"sweep: {len(rows)} rows over {args.axis} -> {args.out}")
    return EXIT_OK


def cmd_upper_bound(args) -> int:
    cfg = resolve_config(args)
    manifest = load_manifest(args.manifest)
    samples = list(load_samples(manifest))
    segmenter = build_segmenter(cfg, samples)

    results = []
    for sample in samples:
        if not sample.targets:
            continue  # only targeted samples bound prompt quality
        gt = union_masks(sample.targets, sample.width, sample.height)
        box = tight_bbox(gt)
        if box is None:
            continue
        rng = derive_rng(cfg.sampling.seed, sample.sample_id, "upper-bound")
        try:
            best, _ = upper_bound_iou(
                sample.image_id, gt, box, segmenter, cfg.sampling, rng
            )
            results.append((sample.sample_id, best, ""))
        except SegmenterError as exc:
            results.append((sample.sample_id, None, f"segmenter:{exc}"))

    scored = [iou for _, iou, _ in results if iou is not None]
    mean = sum(scored) / len(scored) if scored else None
    header = _config_header(cfg, command="upper-bound", manifest=str(args.manifest))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
        fh.write(f"# mean_iou: {_fmt(mean)}\n")
        fh.write("id,max_iou,failure\n")
        for sid, value, failure in results:
            fh.write(f"{sid},{_fmt(value) if value is not None else ''},{failure}\n")
    print(f"upper-bound: mean={_fmt(mean)} over {len(scored)} samples")
    failures = len(results) - len(scored)
    if results and failures / len(results) > args.fail_threshold:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_import(args) -> int:
    count = convert_coco_refs(args.src, args.out, source_tag=args.source, split=args.split)
    print(f"import: wrote {count} samples -> {args.out}")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser, needs_responder=False):
    parser.add_argument("manifest", help="dataset manifest JSON")
    parser.add_argument("--config", help="INI config file (PROMPTSEG_CONFIG overrides)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument(
        "--backend", default=None, help="identity | synthetic | remote:URL"
    )
    if needs_responder:
        parser.add_argument(
            "--responder", default=None, help="gt-oracle | scripted:PATH | remote:URL"
        )
    parser.add_argument("--out", required=True)
    parser.add_argument(
        "--fail-threshold",
        type=float,
        default=1.0,
        help="exit 5 when the per-sample failure fraction exceeds this",
    )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptseg",
        description="Prompt encoding, point sampling, and evaluation for promptable segmenters",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate dialog training records")
    _add_common(p)
    p.add_argument("--task", choices=("ppg", "pqpp"), required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("eval", help="run inference over a split and score it")
    _add_common(p, needs_responder=True)
    p.add_argument("--task", choices=("ppg", "pqpp"), required=True)
    p.add_argument("--csv", default=None, help="optional per-sample CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate along an ablation axis")
    _add_common(p, needs_responder=True)
    p.add_argument("--task", choices=("ppg", "pqpp"), default="pqpp")
    p.add_argument("--axis", choices=("threshold", "grid", "random_n"), required=True)
    p.add_argument("--values", required=True, help="e.g. 0.6,0.7,0.9 or 5x5,6x6 or 25,36")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("upper-bound", help="best reachable IoU from gt-sampled prompts")
    _add_common(p)
    p.set_defaults(func=cmd_upper_bound)

    p = sub.add_parser("import", help="convert an upstream dump to the native JSONL")
    p.add_argument("src")
    p.add_argument("--out", required=True)
    p.add_argument("--source", default="grefcoco", help="dataset family tag")
    p.add_argument("--split", default="", help="keep only refs with this split tag")
    p.set_defaults(func=cmd_import)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PROMPTSEG_LOGLEVEL", "WARNING"))
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RemoteUnreachable as exc:
        print(f"remote error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
