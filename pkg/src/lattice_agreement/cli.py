"""Command line entry point: run, campaign, replay and generate."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional, Sequence

from .harness import Campaign, execute, labelled_points, rows_to_csv, run_campaign, run_experiment, summary_json
from .model import (
    ConfigError,
    DelayModel,
    ExperimentConfig,
    TraceParseError,
    decode_trace_file,
    encode_trace_file,
    validate_config,
)

EXIT_OK, EXIT_CONFIG, EXIT_VERDICT, EXIT_MISMATCH = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def load_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if seed is not None:
        raw["seed"] = seed
        if raw.get("delay", {}).get("kind") == "random":
            raw["delay"] = {**raw["delay"], "seed": seed}
    return ExperimentConfig.from_dict(raw)


def cmd_run(config_path: str, out: str = ".", trace: bool = False, seed: Optional[int] = None) -> int:
    try:
        config, report, events, verdict = run_experiment(load_config(config_path, seed))
    except ConfigError as e:
        for v in e.violations:
            _err(f"{v.code}: {v.message}")
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as e:
        _err(f"CONFIG_UNREADABLE: {e}")
        return EXIT_CONFIG
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(out, "verdict.json"), "w") as fh:
        fh.write(verdict.to_json() + "\n")
    if trace:
        with open(os.path.join(out, "trace.jsonl"), "wb") as fh:
            fh.write(encode_trace_file(config, events))
    print(f"{config.algorithm} n={config.n} f={config.f} status={report.status} "
          f"rounds={report.max_rounds_used()} messages={report.total_messages}")
    if verdict.passed:
        print("verdict: pass")
        return EXIT_OK
    for v in verdict.violations:
        _err(f"VIOLATION {v['property']}: {json.dumps(v['witness'], sort_keys=True)}")
    return EXIT_VERDICT


def load_campaign(path: str, seed: Optional[int] = None) -> Campaign:
    with open(path) as fh:
        raw = json.load(fh)
    c = Campaign.from_dict(raw)
    if seed is not None:
        # shift the seed range so the same file can be re-sampled
        c = dataclasses.replace(c, seeds=[s + seed for s in c.seeds])
    return c


def cmd_campaign(
    campaign_path: str, out: str = ".", workers: int = 1, trace: bool = False, seed: Optional[int] = None
) -> int:
    try:
        c = load_campaign(campaign_path, seed)
    except (OSError, ValueError, KeyError, TypeError) as e:
        _err(f"CAMPAIGN_INVALID: {e}")
        return EXIT_CONFIG
    os.makedirs(out, exist_ok=True)
    trace_dir = None
    if trace or c.traces:
        trace_dir = os.path.join(out, "traces")
        os.makedirs(trace_dir, exist_ok=True)
    try:
        rows = run_campaign(c, workers=workers, trace_dir=trace_dir)
    except ConfigError as e:
        _err(f"CAMPAIGN_INVALID: {e}")
        return EXIT_CONFIG
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write(rows_to_csv(rows))
    summary = summary_json(rows)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        fh.write(summary + "\n")
    failing = [r for r in rows if not r["passed"]]
    print(f"{len(rows)} runs, {len(rows) - len(failing)} passed")
    for r in failing:
        _err(f"FAIL {r['digest']} {r['violations']}")
    return EXIT_OK if not failing else EXIT_VERDICT


def replay_bytes(data: bytes) -> bytes:
    """Re-execute a recorded trace with its recorded delays and re-encode it."""
    config, events = decode_trace_file(data)
    table = {}
    for e in events:
        if e.kind == "send" and "deliver_t" in e.detail:
            table[(e.actor, e.detail["counter"])] = e.detail["deliver_t"] - e.t
    replayed = config
    if not config.synchronous:
        replayed = dataclasses.replace(config, delay=DelayModel("replay", table=table))
    replayed = validate_config(replayed)
    _, fresh = execute(replayed)
    return encode_trace_file(config, fresh)


def first_divergence(a: bytes, b: bytes) -> int:
    la, lb = a.splitlines(), b.splitlines()
    for i, (x, y) in enumerate(zip(la, lb), start=1):
        if x != y:
            return i
    return min(len(la), len(lb)) + 1


def cmd_replay(trace_path: str) -> int:
    try:
        with open(trace_path, "rb") as fh:
            data = fh.read()
        fresh = replay_bytes(data)
    except (OSError, TraceParseError, ConfigError) as e:
        _err(f"TRACE_PARSE_ERROR: {e}")
        return EXIT_CONFIG
    except KeyError as e:
        # an edited or missing delay entry means the recorded run cannot be reproduced
        _err(f"MISMATCH: replay needed an unrecorded delay {e}")
        return EXIT_MISMATCH
    if fresh == data:
        print("replay: identical")
        return EXIT_OK
    _err(f"MISMATCH: first divergent line {first_divergence(data, fresh)}")
    return EXIT_MISMATCH


def cmd_generate(campaign_path: str, out: str = ".", seed: Optional[int] = None) -> int:
    """Write every campaign point as a standalone config file."""
    try:
        c = load_campaign(campaign_path, seed)
        points = list(labelled_points(c))
    except (OSError, ValueError, KeyError, TypeError) as e:
        _err(f"CAMPAIGN_INVALID: {e}")
        return EXIT_CONFIG
    os.makedirs(out, exist_ok=True)
    for config, _ in points:
        with open(os.path.join(out, f"{config.digest()}.json"), "w") as fh:
            fh.write(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n")
    print(f"{len(points)} configs written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lattice-agreement", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one config and check it")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=".")
    run.add_argument("--trace", action="store_true", help="also write trace.jsonl")
    run.add_argument("--seed", type=int)

    camp = sub.add_parser("campaign", help="run a seeded sweep")
    camp.add_argument("--campaign", required=True)
    camp.add_argument("--out", default=".")
    camp.add_argument("--workers", type=int, default=1)
    camp.add_argument("--trace", action="store_true", help="write one trace per run under OUT/traces")
    camp.add_argument("--seed", type=int, help="offset added to every campaign seed")

    rep = sub.add_parser("replay", help="re-execute a trace and compare byte for byte")
    rep.add_argument("--replay", required=True, metavar="PATH")

    gen = sub.add_parser("generate", help="materialize campaign points as config files")
    gen.add_argument("--campaign", required=True)
    gen.add_argument("--out", default=".")
    gen.add_argument("--seed", type=int)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.trace, args.seed)
    if args.command == "campaign":
        return cmd_campaign(args.campaign, args.out, args.workers, args.trace, args.seed)
    if args.command == "replay":
        return cmd_replay(args.replay)
    return cmd_generate(args.campaign, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
