"""Shared vocabulary: configs, crash schedules, envelopes, traces and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .semilattice import LatticeValue, decode_value, encode_value, height, join_all

SYNC_ALGORITHMS = ("alpha", "beta", "gamma")
ASYNC_ALGORITHMS = ("delta", "gla")
MUTANTS = ("inverted_classifier", "weak_tally")

TRACE_FORMAT = "la-trace/1"


class Algorithm(str, Enum):
    ALPHA = "alpha"
    BETA = "beta"
    GAMMA = "gamma"
    DELTA = "delta"
    GLA = "gla"

    @property
    def synchronous(self) -> bool:
        return self.value in SYNC_ALGORITHMS


class RunStatus(str, Enum):
    COMPLETED = "COMPLETED"
    BOUND_VIOLATION = "BOUND_VIOLATION"
    NON_QUIESCENT = "NON_QUIESCENT"


@dataclass(frozen=True)
class CrashSpec:
    victim: int
    at: int
    deliver_to: FrozenSet[int] = frozenset()

    def to_dict(self) -> dict:
        return {"victim": self.victim, "at": self.at, "deliver_to": sorted(self.deliver_to)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CrashSpec":
        return cls(int(d["victim"]), int(d["at"]), frozenset(int(p) for p in d.get("deliver_to", ())))


@dataclass(frozen=True)
class DelayModel:
    """How remote message delays are drawn.

    ``kind`` is one of ``unit``, ``random`` (seeded, uniform in
    ``[1, max_delay]``) or ``replay`` (delays looked up in ``table``, keyed by
    ``(sender, send counter)``).
    """

    kind: str = "unit"
    max_delay: int = 1
    seed: int = 0
    table: Optional[Mapping[Tuple[int, int], int]] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        d: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "random":
            d.update(max_delay=self.max_delay, seed=self.seed)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DelayModel":
        return cls(kind=d.get("kind", "unit"), max_delay=int(d.get("max_delay", 1)), seed=int(d.get("seed", 0)))


Stream = Tuple[Tuple[int, LatticeValue], ...]


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    f: int
    algorithm: str
    inputs: Mapping[int, LatticeValue] = field(default_factory=dict)
    streams: Mapping[int, Stream] = field(default_factory=dict)
    crashes: Tuple[CrashSpec, ...] = ()
    delay: DelayModel = DelayModel()
    seed: int = 0
    H: Optional[int] = None
    mutant: Optional[str] = None
    prune: bool = False
    round_trip_limit: Optional[int] = None
    event_cap: Optional[int] = None

    @property
    def pids(self) -> range:
        return range(1, self.n + 1)

    @property
    def synchronous(self) -> bool:
        return self.algorithm in SYNC_ALGORITHMS

    def crash_for(self, pid: int) -> Optional[CrashSpec]:
        for c in self.crashes:
            if c.victim == pid:
                return c
        return None

    def all_input_values(self) -> List[LatticeValue]:
        if self.algorithm == "gla":
            return [v for s in self.streams.values() for _, v in s]
        return [self.inputs[p] for p in sorted(self.inputs)]

    def to_dict(self) -> dict:
        d: Dict[str, Any] = {
            "n": self.n,
            "f": self.f,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "delay": self.delay.to_dict(),
            "crashes": [c.to_dict() for c in self.crashes],
        }
        if self.algorithm == "gla":
            d["streams"] = {
                str(p): [[t, encode_value(v)] for t, v in s] for p, s in sorted(self.streams.items())
            }
        else:
            d["inputs"] = {str(p): encode_value(v) for p, v in sorted(self.inputs.items())}
        optional = {
            "H": self.H,
            "mutant": self.mutant,
            "round_trip_limit": self.round_trip_limit,
            "event_cap": self.event_cap,
        }
        d.update({k: v for k, v in optional.items() if v is not None})
        if self.prune:
            d["prune"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        def per_process(raw) -> dict:
            if raw is None:
                return {}
            if isinstance(raw, list):
                return {i + 1: x for i, x in enumerate(raw)}
            return {int(k): x for k, x in raw.items()}

        inputs = {p: decode_value(v) for p, v in per_process(d.get("inputs")).items()}
        streams = {
            p: tuple((int(t), decode_value(v)) for t, v in s)
            for p, s in per_process(d.get("streams")).items()
        }
        return cls(
            n=int(d["n"]),
            f=int(d["f"]),
            algorithm=str(d["algorithm"]),
            inputs=inputs,
            streams=streams,
            crashes=tuple(CrashSpec.from_dict(c) for c in d.get("crashes", ())),
            delay=DelayModel.from_dict(d.get("delay", {})),
            seed=int(d.get("seed", 0)),
            H=None if d.get("H") is None else int(d["H"]),
            mutant=d.get("mutant"),
            prune=bool(d.get("prune", False)),
            round_trip_limit=None if d.get("round_trip_limit") is None else int(d["round_trip_limit"]),
            event_cap=None if d.get("event_cap") is None else int(d["event_cap"]),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


class ConfigError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(f"{v.code}: {v.message}" for v in self.violations))

    @property
    def codes(self) -> List[str]:
        return [v.code for v in self.violations]


def validate_config(c: ExperimentConfig) -> ExperimentConfig:
    """Check a config against the model invariants and return it normalized.

    Raises :class:`ConfigError` carrying every violation found.
    """
    out: List[Violation] = []

    def bad(code: str, msg: str) -> None:
        out.append(Violation(code, msg))

    if c.algorithm not in SYNC_ALGORITHMS + ASYNC_ALGORITHMS:
        bad("UNKNOWN_ALGORITHM", f"algorithm {c.algorithm!r} is not one of alpha/beta/gamma/delta/gla")
        raise ConfigError(out)
    if c.n < 1:
        bad("BAD_N", "n must be at least 1")
        raise ConfigError(out)
    if c.f < 0:
        bad("NEGATIVE_F", "f must be nonnegative")
    elif c.synchronous and c.f >= c.n:
        bad("SYNC_F_TOO_LARGE", f"synchronous algorithms need f < n (f={c.f}, n={c.n})")
    elif not c.synchronous and 2 * c.f >= c.n:
        bad("ASYNC_F_TOO_LARGE", f"asynchronous algorithms need f < n/2 (f={c.f}, n={c.n})")

    pids = set(c.pids)
    if c.algorithm == "gla":
        for p, stream in c.streams.items():
            if p not in pids:
                bad("UNKNOWN_PROCESS", f"stream for unknown process {p}")
            for t, v in stream:
                if t < 0:
                    bad("BAD_TICK", f"client value for p{p} at negative tick {t}")
                if not v:
                    bad("EMPTY_INPUT", f"empty client value for p{p}")
    else:
        if set(c.inputs) != pids:
            missing = sorted(pids - set(c.inputs))
            extra = sorted(set(c.inputs) - pids)
            bad("INPUT_COUNT_MISMATCH", f"inputs must cover exactly p1..p{c.n} (missing {missing}, unknown {extra})")
        for p, v in c.inputs.items():
            if not v:
                bad("EMPTY_INPUT", f"input of p{p} is empty")

    if len(c.crashes) > c.f:
        bad("TOO_MANY_CRASHES", f"{len(c.crashes)} crashes scheduled but f={c.f}")
    seen = set()
    for cr in c.crashes:
        if cr.victim not in pids:
            bad("UNKNOWN_PROCESS", f"crash victim p{cr.victim} is not a process")
        if cr.victim in seen:
            bad("DUPLICATE_CRASH", f"p{cr.victim} crashes more than once")
        seen.add(cr.victim)
        if not cr.deliver_to <= pids:
            bad("UNKNOWN_PROCESS", f"deliver_to of p{cr.victim} names unknown processes")
        if c.synchronous and cr.at < 1:
            bad("BAD_CRASH_TIME", "synchronous crashes happen at a round >= 1")
        if not c.synchronous and cr.at < 0:
            bad("BAD_CRASH_TIME", "asynchronous crashes happen at a tick >= 0")
        if not c.synchronous and cr.deliver_to:
            bad("DELIVER_TO_ASYNC", "deliver_to is only meaningful for synchronous runs")

    if c.delay.kind not in ("unit", "random", "replay"):
        bad("BAD_DELAY_MODEL", f"unknown delay model {c.delay.kind!r}")
    elif c.delay.kind == "random" and c.delay.max_delay < 1:
        bad("BAD_DELAY_MODEL", "random delays need max_delay >= 1")

    if c.mutant is not None and c.mutant not in MUTANTS:
        bad("UNKNOWN_MUTANT", f"unknown mutant {c.mutant!r}")
    if c.round_trip_limit is not None and c.round_trip_limit < 1:
        bad("BAD_ROUND_TRIP_LIMIT", "round_trip_limit must be >= 1")

    H = c.H
    if c.algorithm == "alpha" and not out:
        needed = height(join_all(c.inputs.values()))
        if H is None:
            H = needed
        elif H < needed:
            bad("H_TOO_SMALL", f"H={H} is below the height {needed} of the join of all inputs")
    elif c.H is not None and c.algorithm != "alpha":
        bad("H_NOT_APPLICABLE", "H is only used by alpha")

    if out:
        raise ConfigError(out)
    crashes = tuple(sorted(c.crashes, key=lambda cr: cr.victim))
    return ExperimentConfig(
        n=c.n,
        f=c.f,
        algorithm=c.algorithm,
        inputs=dict(sorted(c.inputs.items())),
        streams={p: tuple(sorted(s, key=lambda tv: tv[0])) for p, s in sorted(c.streams.items())},
        crashes=crashes,
        delay=c.delay,
        seed=c.seed,
        H=H,
        mutant=c.mutant,
        prune=c.prune,
        round_trip_limit=c.round_trip_limit,
        event_cap=c.event_cap,
    )


@dataclass(frozen=True)
class Envelope:
    src: int
    dst: int
    send_time: int
    deliver_time: int
    payload: Mapping[str, Any]
    tags: Tuple = ()
    counter: int = 0


def jsonable(x: Any) -> Any:
    if isinstance(x, frozenset):
        return encode_value(x)
    if isinstance(x, Mapping):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    return x


@dataclass(frozen=True)
class TraceEvent:
    t: int
    kind: str
    actor: int
    detail: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"t": self.t, "kind": self.kind, "actor": self.actor, "detail": jsonable(self.detail)}


def _line(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def encode_trace(events: Iterable[TraceEvent]) -> bytes:
    """One JSON object per line with sorted keys."""
    return b"".join(_line(e.to_dict()) for e in events)


def decode_events(lines: Iterable[bytes]) -> List[TraceEvent]:
    out = []
    for raw in lines:
        d = json.loads(raw)
        out.append(TraceEvent(d["t"], d["kind"], d["actor"], d["detail"]))
    return out


def encode_trace_file(config: ExperimentConfig, events: Iterable[TraceEvent]) -> bytes:
    header = {"format": TRACE_FORMAT, "config": config.to_dict()}
    return _line(header) + encode_trace(events)


class TraceParseError(ValueError):
    pass


def decode_trace_file(data: bytes) -> Tuple[ExperimentConfig, List[TraceEvent]]:
    if data and not data.endswith(b"\n"):
        raise TraceParseError("trace does not end with a newline (truncated?)")
    lines = data.splitlines()
    if not lines:
        raise TraceParseError("empty trace file")
    try:
        header = json.loads(lines[0])
        if header.get("format") != TRACE_FORMAT:
            raise TraceParseError(f"unknown trace format {header.get('format')!r}")
        config = ExperimentConfig.from_dict(header["config"])
        events = decode_events(lines[1:])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        if isinstance(e, TraceParseError):
            raise
        raise TraceParseError(str(e)) from e
    return config, events


@dataclass
class ProcessReport:
    decision: Optional[LatticeValue] = None
    rounds_used: int = 0
    crashed: bool = False

    def to_dict(self) -> dict:
        return {
            "decision": None if self.decision is None else encode_value(self.decision),
            "rounds_used": self.rounds_used,
            "crashed": self.crashed,
        }


@dataclass
class RunReport:
    """Outcome of one run.

    ``rounds_used`` is synchronous rounds for alpha/beta/gamma and
    round-trips for delta (for gla, the most round-trips any Agree took).
    """

    algorithm: str
    n: int
    f: int
    per_process: Dict[int, ProcessReport]
    total_messages: int = 0
    clock_at_quiescence: int = 0
    rounds_executed: int = 0
    status: str = RunStatus.COMPLETED.value
    learned_sequences: Dict[int, List[LatticeValue]] = field(default_factory=dict)
    findings: List[str] = field(default_factory=list)

    def correct(self) -> List[int]:
        return [p for p, r in sorted(self.per_process.items()) if not r.crashed]

    def decisions(self) -> Dict[int, LatticeValue]:
        return {p: r.decision for p, r in sorted(self.per_process.items()) if r.decision is not None}

    def max_rounds_used(self) -> int:
        return max((r.rounds_used for r in self.per_process.values()), default=0)

    def to_dict(self) -> dict:
        d = {
            "algorithm": self.algorithm,
            "n": self.n,
            "f": self.f,
            "status": self.status,
            "total_messages": self.total_messages,
            "clock_at_quiescence": self.clock_at_quiescence,
            "rounds_executed": self.rounds_executed,
            "per_process": {str(p): r.to_dict() for p, r in sorted(self.per_process.items())},
            "findings": list(self.findings),
        }
        if self.algorithm == "gla":
            d["learned_sequences"] = {
                str(p): [encode_value(v) for v in seq] for p, seq in sorted(self.learned_sequences.items())
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    CSV_FIELDS = (
        "algorithm", "n", "f", "status", "max_rounds_used", "total_messages",
        "clock_at_quiescence", "crashed", "decided",
    )

    def csv_row(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "n": self.n,
            "f": self.f,
            "status": self.status,
            "max_rounds_used": self.max_rounds_used(),
            "total_messages": self.total_messages,
            "clock_at_quiescence": self.clock_at_quiescence,
            "crashed": sum(r.crashed for r in self.per_process.values()),
            "decided": sum(r.decision is not None for r in self.per_process.values()),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()
