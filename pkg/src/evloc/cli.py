"""Command line interface.

Subcommands: ``synth`` (generate a synthetic dataset), ``train``, ``infer``,
``eval`` (metric table from proposals), ``fuse`` (combine evidence rows into
belief masses), and ``gradcheck``.  Every command takes ``--config`` and
``--seed``; the flag seed overrides the config seed, and all commands are
deterministic given both.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config_file
from .estimator import ActionLocalizer
from .evidence import combine_many, masses_from_evidence
from .gradcheck import run_gradient_suite
from .localization import evaluate
from .records import (load_manifest, load_samples, read_proposals, save_manifest,
                      write_loss_log, write_proposals)
from .synthetic import SynthConfig, synthesize_dataset
from .validation import ValidationError

__all__ = ["main"]


def _load_mapping(args) -> dict[str, str]:
    mapping = load_config_file(args.config) if args.config else {}
    known = RunConfig.known_keys() | SynthConfig.known_keys()
    unknown = set(mapping) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    return mapping


def _run_config(args) -> RunConfig:
    return RunConfig.from_mapping(_load_mapping(args))


def _cmd_synth(args) -> int:
    mapping = _load_mapping(args)
    synth = SynthConfig.from_mapping(mapping)
    seed = RunConfig.from_mapping(mapping).require_seed()
    train_path, test_path = synthesize_dataset(synth, args.out, seed)
    print(f"wrote {train_path} and {test_path}")
    return 0


def _cmd_train(args) -> int:
    config = _run_config(args)
    records = load_manifest(args.manifest)
    samples = load_samples(records, Path(args.manifest).parent)
    estimator = ActionLocalizer.from_config(config)
    estimator.fit(samples)
    estimator.save_checkpoint(args.checkpoint_out)
    if args.log_out:
        write_loss_log(args.log_out, estimator.loss_log_)
    last = estimator.loss_log_[-1] if estimator.loss_log_ else {"total": float("nan")}
    print(f"trained {config.iterations} iterations over {len(samples)} videos; "
          f"final total loss {last['total']:.6f}")
    print(f"checkpoint written to {args.checkpoint_out}")
    return 0


def _cmd_infer(args) -> int:
    config = _run_config(args)
    records = load_manifest(args.manifest)
    samples = load_samples(records, Path(args.manifest).parent)
    estimator = ActionLocalizer.from_config(config).load_checkpoint(args.checkpoint)
    for sample in samples:
        if sample.rgb.shape[0] != estimator.feature_dim:
            raise ValidationError(
                f"checkpoint expects {estimator.feature_dim} feature channels but "
                f"video {sample.video_id!r} provides {sample.rgb.shape[0]}")
    proposals = estimator.predict(samples)
    fps_by_video = {s.video_id: s.fps for s in samples}
    write_proposals(args.out, proposals, fps_by_video)
    print(f"wrote {len(proposals)} proposals to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    records = load_manifest(args.manifest)
    ground_truth = {}
    for record in records:
        if record.segments:
            from .localization import Segment
            ground_truth[record.video_id] = [
                (Segment(start, end), class_id)
                for start, end, class_id in record.segments]
    proposals = read_proposals(args.proposals)
    report = evaluate(proposals, ground_truth)
    table = report.format_table()
    print(table)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), sort_keys=True) + "\n")
        print(f"wrote report to {args.out}")
    return 0


def _cmd_fuse(args) -> int:
    lines_out = []
    for number, line in enumerate(Path(args.input).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows = json.loads(line)
            masses = [masses_from_evidence(np.asarray(row, dtype=float))
                      for row in rows]
        except (json.JSONDecodeError, TypeError) as exc:
            raise ValidationError(f"fuse input line {number} is invalid: {exc}") from exc
        fused = combine_many(masses)
        lines_out.append(json.dumps({
            "singletons": fused.singletons.tolist(),
            "theta": fused.theta,
        }, sort_keys=True))
    text = "\n".join(lines_out) + ("\n" if lines_out else "")
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(lines_out)} fused masses to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gradcheck(args) -> int:
    seed0 = args.seed if args.seed is not None else 0
    seeds = range(seed0, seed0 + args.seeds)
    results = run_gradient_suite(seeds, width=args.width,
                                 num_classes=args.classes,
                                 feature_dim=args.dim,
                                 include_end_to_end=not args.losses_only)
    worst = 0.0
    for result in results:
        print(f"{result.name:16s} seed={result.seed:<4d} "
              f"max relative error {result.max_relative_error:.3e}")
        worst = max(worst, result.max_relative_error)
    status = "PASS" if worst < args.tolerance else "FAIL"
    print(f"worst {worst:.3e} against tolerance {args.tolerance:g}: {status}")
    return 0 if status == "PASS" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evloc",
        description="Evidential two-stream temporal action localization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="overrides the config seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train and write a checkpoint")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--log-out", help="loss log path (JSON lines)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="generate proposals from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score proposals against a manifest")
    common(p)
    p.add_argument("--proposals", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("fuse", help="fuse evidence rows into belief masses")
    common(p)
    p.add_argument("--input", required=True,
                   help="JSON lines; each line is an array of evidence arrays")
    p.add_argument("--out", help="output path (defaults to stdout)")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    common(p)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds to run")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--losses-only", action="store_true",
                   help="skip the end-to-end parameter check")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
