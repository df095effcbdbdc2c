"""Experiment execution: single runs, input/crash generators and seeded campaigns."""

from __future__ import annotations

import csv
import io
import itertools
import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from .async_engine import run_async
from .async_protocols import make_async_protocol
from .checker import Verdict, check_run, gamma_h_psi, lattice_height
from .model import (
    CrashSpec,
    DelayModel,
    ExperimentConfig,
    RunReport,
    TraceEvent,
    encode_trace_file,
    validate_config,
)
from .semilattice import LatticeValue, value
from .sync_engine import run_sync
from .sync_protocols import alpha_budget, gamma_phase_b_bound, make_sync_protocol

INPUT_GENERATORS = ("singletons", "chain", "randomSets")
CRASH_STRATEGIES = ("none", "random", "targeted")


def execute(config: ExperimentConfig) -> Tuple[RunReport, List[TraceEvent]]:
    """Run an already validated config on the matching engine."""
    if config.synchronous:
        return run_sync(config, make_sync_protocol(config))
    return run_async(config, make_async_protocol(config))


def run_experiment(config: ExperimentConfig) -> Tuple[ExperimentConfig, RunReport, List[TraceEvent], Verdict]:
    config = validate_config(config)
    report, trace = execute(config)
    return config, report, trace, check_run(config, report, trace)


# ---------------------------------------------------------------- generators


def gen_inputs(kind: str, n: int, rng: random.Random, universe: int = 8, density: float = 0.4) -> Dict[int, LatticeValue]:
    if kind == "singletons":
        return {p: value(f"e{p}") for p in range(1, n + 1)}
    if kind == "chain":
        lengths = list(range(1, n + 1))
        rng.shuffle(lengths)
        return {p: value(*(f"e{i}" for i in range(1, k + 1))) for p, k in zip(range(1, n + 1), lengths)}
    if kind == "randomSets":
        out = {}
        for p in range(1, n + 1):
            picked = [f"u{i}" for i in range(universe) if rng.random() < density]
            out[p] = value(*(picked or [f"u{rng.randrange(universe)}"]))
        return out
    raise ValueError(f"unknown input generator {kind!r}")


def gen_crashes(
    strategy: str, n: int, f: int, rng: random.Random, synchronous: bool, horizon: int
) -> Tuple[CrashSpec, ...]:
    """Crash schedules: ``random`` picks victims and times, ``targeted`` also
    hands sync victims a partial delivery subset for their last round."""
    if strategy not in CRASH_STRATEGIES:
        raise ValueError(f"unknown crash strategy {strategy!r}")
    if strategy == "none" or f == 0:
        return ()
    k = rng.randint(1, f)
    victims = sorted(rng.sample(range(1, n + 1), k))
    out = []
    for v in victims:
        if synchronous:
            at = rng.randint(1, max(1, horizon))
            deliver: frozenset = frozenset()
            if strategy == "targeted":
                others = [q for q in range(1, n + 1) if q != v]
                deliver = frozenset(q for q in others if rng.random() < 0.5)
            out.append(CrashSpec(v, at, deliver))
        else:
            lo = 0 if strategy == "random" else 1
            out.append(CrashSpec(v, rng.randint(lo, max(lo, horizon))))
    return tuple(out)


def gen_streams(
    n: int, rng: random.Random, count: int, max_tick: int
) -> Dict[int, Tuple[Tuple[int, LatticeValue], ...]]:
    streams: Dict[int, List[Tuple[int, LatticeValue]]] = {p: [] for p in range(1, n + 1)}
    for i in range(count):
        p = rng.randint(1, n)
        streams[p].append((rng.randint(0, max_tick), value(f"c{i}")))
    return {p: tuple(sorted(s, key=lambda tv: tv[0])) for p, s in streams.items() if s}


# ---------------------------------------------------------------- campaigns


@dataclass
class Campaign:
    """Sweep axes; every combination of the lists below is one run."""

    algorithm: str
    seeds: Sequence[int] = ()
    n_values: Sequence[int] = (3,)
    f_values: Sequence[Any] = ("max",)
    input_generators: Sequence[str] = ("singletons",)
    crash_strategies: Sequence[str] = ("none",)
    delays: Sequence[Mapping[str, Any]] = ({"kind": "unit"},)
    universe: int = 8
    density: float = 0.4
    clients: Tuple[int, int] = (10, 50)
    max_tick: int = 20
    mutant: Optional[str] = None
    round_trip_limit: Optional[int] = None
    traces: bool = False

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Campaign":
        seeds = d.get("seeds", [])
        if isinstance(seeds, Mapping):
            seeds = range(int(seeds.get("start", 0)), int(seeds.get("start", 0)) + int(seeds["count"]))
        elif isinstance(seeds, int):
            seeds = range(seeds)
        known = {
            "algorithm", "seeds", "n", "f", "inputs", "crashes", "delays", "universe", "density",
            "clients", "max_tick", "mutant", "round_trip_limit", "traces",
        }
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown campaign keys {unknown}")
        return cls(
            algorithm=d["algorithm"],
            seeds=list(seeds),
            n_values=list(d.get("n", [3])),
            f_values=list(d.get("f", ["max"])),
            input_generators=list(d.get("inputs", ["singletons"])),
            crash_strategies=list(d.get("crashes", ["none"])),
            delays=list(d.get("delays", [{"kind": "unit"}])),
            universe=int(d.get("universe", 8)),
            density=float(d.get("density", 0.4)),
            clients=tuple(d.get("clients", (10, 50))),
            max_tick=int(d.get("max_tick", 20)),
            mutant=d.get("mutant"),
            round_trip_limit=d.get("round_trip_limit"),
            traces=bool(d.get("traces", False)),
        )

    def resolve_f(self, n: int, f: Any) -> Optional[int]:
        sync = self.algorithm in ("alpha", "beta", "gamma")
        if f == "max":
            return n - 1 if sync else (n - 1) // 2
        f = int(f)
        if f < 0 or (sync and f >= n) or (not sync and 2 * f >= n):
            return None
        return f

    def points(self) -> Iterator[ExperimentConfig]:
        for config, _ in labelled_points(self):
            yield config

    def config_for(self, n: int, f: int, gen: str, strat: str, delay: Mapping, seed: int) -> ExperimentConfig:
        rng = random.Random(f"{self.algorithm}:{n}:{f}:{gen}:{strat}:{seed}")
        sync = self.algorithm in ("alpha", "beta", "gamma")
        inputs: Dict[int, LatticeValue] = {}
        streams: Dict = {}
        if self.algorithm == "gla":
            lo, hi = self.clients
            streams = gen_streams(n, rng, rng.randint(lo, hi), self.max_tick)
        else:
            inputs = gen_inputs(gen, n, rng, self.universe, self.density)
        if sync:
            horizon = {"alpha": alpha_budget(n), "beta": 1 + alpha_budget(max(f, 1))}.get(self.algorithm, 4)
        else:
            horizon = self.max_tick if self.algorithm == "gla" else 4
        crashes = gen_crashes(strat, n, f, rng, sync, horizon)
        dm = DelayModel.from_dict({**delay, "seed": seed} if delay.get("kind") == "random" else delay)
        return ExperimentConfig(
            n=n, f=f, algorithm=self.algorithm, inputs=inputs, streams=streams, crashes=crashes,
            delay=dm, seed=seed, mutant=self.mutant, round_trip_limit=self.round_trip_limit,
        )


def bounds_for(config: ExperimentConfig, trace: Sequence[TraceEvent]) -> Tuple[Optional[int], Optional[int]]:
    """(round bound, message bound) for one run; ``None`` where no bound applies."""
    n, f, alg = config.n, config.f, config.algorithm
    if alg == "alpha":
        return alpha_budget(config.H), None
    if alg == "beta":
        return 1 + alpha_budget(max(f, 1)), None
    if alg == "gamma":
        h = gamma_h_psi(trace)
        return (None if h is None else 1 + gamma_phase_b_bound(h)), None
    if alg == "delta":
        rt = min(lattice_height(config.inputs.values()), f + 1)
        return rt, 2 * n * n * rt
    return f + 1, None


ROW_FIELDS = (
    "digest", "algorithm", "n", "f", "seed", "inputs", "crashes", "delay", "mutant", "status",
    "passed", "violations", "max_rounds", "round_bound", "within_round_bound", "messages",
    "message_bound", "within_message_bound",
)


def run_point(args: Tuple[ExperimentConfig, Mapping[str, str], Optional[str]]) -> dict:
    config, labels, trace_dir = args
    config, report, trace, verdict = run_experiment(config)
    rb, mb = bounds_for(config, trace)
    if config.synchronous:
        mb = config.n * config.n * report.rounds_executed
    decided_rounds = [r.rounds_used for r in report.per_process.values() if r.decision is not None]
    max_rounds = max(decided_rounds, default=0)
    digest = config.digest()
    if trace_dir is not None:
        with open(f"{trace_dir}/{digest}.jsonl", "wb") as fh:
            fh.write(encode_trace_file(config, trace))
    return {
        "digest": digest,
        "algorithm": config.algorithm,
        "n": config.n,
        "f": config.f,
        "seed": config.seed,
        "inputs": labels.get("inputs", ""),
        "crashes": labels.get("crashes", ""),
        "delay": config.delay.kind,
        "mutant": config.mutant or "",
        "status": report.status,
        "passed": verdict.passed,
        "violations": ";".join(verdict.properties()),
        "max_rounds": max_rounds,
        "round_bound": rb,
        "within_round_bound": rb is None or max_rounds <= rb,
        "messages": report.total_messages,
        "message_bound": mb,
        "within_message_bound": mb is None or report.total_messages <= mb,
    }


def labelled_points(c: Campaign) -> Iterator[Tuple[ExperimentConfig, Dict[str, str]]]:
    axes = itertools.product(
        c.n_values, c.f_values, c.input_generators, c.crash_strategies, range(len(c.delays)), c.seeds
    )
    for n, f_raw, gen, strat, di, seed in axes:
        f = c.resolve_f(n, f_raw)
        if f is None:
            continue
        yield c.config_for(n, f, gen, strat, c.delays[di], seed), {"inputs": gen, "crashes": strat}


def run_campaign(c: Campaign, workers: int = 1, trace_dir: Optional[str] = None) -> List[dict]:
    """Every sweep point, rows sorted by config digest."""
    jobs = [(cfg, labels, trace_dir) for cfg, labels in labelled_points(c)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, jobs, chunksize=16))
    else:
        rows = [run_point(j) for j in jobs]
    return sorted(rows, key=lambda r: (r["digest"], r["seed"]))


def summarize(rows: Sequence[dict]) -> dict:
    groups: Dict[Tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault((r["algorithm"], r["n"], r["f"]), []).append(r)
    table = []
    for (alg, n, f), rs in sorted(groups.items()):
        table.append({
            "algorithm": alg,
            "n": n,
            "f": f,
            "runs": len(rs),
            "passed": sum(r["passed"] for r in rs),
            "max_rounds": max(r["max_rounds"] for r in rs),
            "round_bound": max((r["round_bound"] for r in rs if r["round_bound"] is not None), default=None),
            "rounds_within_bound": all(r["within_round_bound"] for r in rs),
            "max_messages": max(r["messages"] for r in rs),
            "messages_within_bound": all(r["within_message_bound"] for r in rs),
        })
    return {
        "runs": len(rows),
        "passed": sum(r["passed"] for r in rows),
        "all_passed": all(r["passed"] for r in rows),
        "failing": [r["digest"] for r in rows if not r["passed"]],
        "groups": table,
    }


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def summary_json(rows: Sequence[dict]) -> str:
    return json.dumps(summarize(rows), sort_keys=True, indent=2)
