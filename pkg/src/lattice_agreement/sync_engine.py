"""Lockstep synchronous round simulator with a crash adversary."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Protocol, Sequence, Tuple

from .model import (
    CrashSpec,
    Envelope,
    ExperimentConfig,
    ProcessReport,
    RunReport,
    RunStatus,
    TraceEvent,
)
from .semilattice import LatticeValue


@dataclass(frozen=True)
class Outgoing:
    """A payload emitted in a round; ``to=None`` means every process, self included."""

    payload: Mapping[str, Any]
    tags: Tuple
    to: Optional[FrozenSet[int]] = None


@dataclass(frozen=True)
class Absorbed:
    state: Any
    decision: Optional[LatticeValue] = None
    notes: Tuple[Tuple[str, Mapping[str, Any]], ...] = ()


class SyncProtocol(Protocol):
    name: str

    def init(self, pid: int, config: ExperimentConfig) -> Any: ...

    def emit(self, state: Any, rnd: int) -> Sequence[Outgoing]: ...

    def listen(self, state: Any, rnd: int) -> Optional[Tuple]: ...

    def absorb(self, state: Any, rnd: int, inbox: Sequence[Envelope], foreign: FrozenSet[int]) -> Absorbed: ...

    def round_budget(self, config: ExperimentConfig) -> int: ...


@dataclass
class SyncRun:
    n: int
    round: int = 1
    states: Dict[int, Any] = field(default_factory=dict)
    alive: FrozenSet[int] = frozenset()
    decided: Dict[int, LatticeValue] = field(default_factory=dict)
    decided_at: Dict[int, int] = field(default_factory=dict)
    messages: int = 0
    trace: List[TraceEvent] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(p in self.decided for p in self.alive)


def start_run(config: ExperimentConfig, proto: SyncProtocol) -> SyncRun:
    return SyncRun(
        n=config.n,
        states={p: proto.init(p, config) for p in config.pids},
        alive=frozenset(config.pids),
    )


def step_round(run: SyncRun, proto: SyncProtocol, adversary: Sequence[CrashSpec]) -> SyncRun:
    """Execute one lockstep round and return the successor run.

    Live undecided processes emit; a process whose crash is scheduled for this
    round sends only to its ``deliver_to`` subset and then stops. Every
    delivered message is filtered by the receiver's listening tags before
    ``absorb`` sees it.
    """
    r = run.round
    trace = run.trace
    crashing = {c.victim: c for c in adversary if c.at == r and c.victim in run.alive}
    everyone = frozenset(range(1, run.n + 1))
    envelopes: List[Envelope] = []
    messages = run.messages

    for p in sorted(run.alive):
        if p not in run.decided:
            counter = 0
            for out in proto.emit(run.states[p], r):
                targets = everyone if out.to is None else out.to
                if p in crashing:
                    targets = targets & crashing[p].deliver_to
                for q in sorted(targets):
                    env = Envelope(p, q, r, r, out.payload, out.tags, counter)
                    counter += 1
                    envelopes.append(env)
                    trace.append(TraceEvent(r, "send", p, {"to": q, "tags": list(out.tags), "payload": out.payload}))
                    messages += 1
        if p in crashing:
            trace.append(TraceEvent(r, "crash", p, {"deliver_to": sorted(crashing[p].deliver_to)}))

    alive = run.alive - set(crashing)
    inboxes: Dict[int, List[Envelope]] = {p: [] for p in alive}
    for env in envelopes:
        if env.dst in alive:
            trace.append(TraceEvent(r, "deliver", env.dst, {"from": env.src, "tags": list(env.tags)}))
            inboxes[env.dst].append(env)
        else:
            trace.append(TraceEvent(r, "drop", env.dst, {"from": env.src, "reason": "receiver crashed"}))

    states = dict(run.states)
    decided = dict(run.decided)
    decided_at = dict(run.decided_at)
    for p in sorted(alive):
        if p in decided:
            continue
        want = proto.listen(states[p], r)
        inbox = [e for e in inboxes[p] if e.tags == want]
        foreign = frozenset(
            e.src for e in inboxes[p] if want is not None and e.tags[:2] == want[:2] and e.tags != want
        )
        res = proto.absorb(states[p], r, inbox, foreign)
        states[p] = res.state
        for kind, detail in res.notes:
            trace.append(TraceEvent(r, kind, p, detail))
        if res.decision is not None:
            decided[p] = res.decision
            decided_at[p] = r
            trace.append(TraceEvent(r, "decide", p, {"value": res.decision}))

    return replace(
        run,
        round=r + 1,
        states=states,
        alive=alive,
        decided=decided,
        decided_at=decided_at,
        messages=messages,
        trace=trace,
    )


def run_sync(config: ExperimentConfig, proto: SyncProtocol) -> Tuple[RunReport, List[TraceEvent]]:
    """Run rounds until every live process has decided or the budget is spent."""
    if not config.synchronous:
        raise ValueError(f"run_sync cannot execute {config.algorithm!r}")
    budget = proto.round_budget(config)
    run = start_run(config, proto)
    crashes = list(config.crashes)
    while not run.complete and run.round <= budget:
        run = step_round(run, proto, crashes)
    # scheduled crashes of already-decided processes still take effect
    late = [c for c in crashes if c.victim in run.alive and c.at >= run.round]
    for c in sorted(late, key=lambda c: (c.at, c.victim)):
        run.trace.append(TraceEvent(c.at, "crash", c.victim, {"deliver_to": sorted(c.deliver_to)}))
    crashed = (frozenset(config.pids) - run.alive) | {c.victim for c in late}

    status = RunStatus.COMPLETED.value if run.complete else RunStatus.BOUND_VIOLATION.value
    per_process = {
        p: ProcessReport(
            decision=run.decided.get(p),
            rounds_used=run.decided_at.get(p, 0),
            crashed=p in crashed,
        )
        for p in config.pids
    }
    findings = []
    if not run.complete:
        stuck = sorted(p for p in run.alive if p not in run.decided)
        findings.append(f"BOUND_VIOLATION: {stuck} undecided after {budget} rounds")
    report = RunReport(
        algorithm=config.algorithm,
        n=config.n,
        f=config.f,
        per_process=per_process,
        total_messages=run.messages,
        clock_at_quiescence=run.round - 1,
        rounds_executed=run.round - 1,
        status=status,
        findings=findings,
    )
    return report, run.trace
