"""Deterministic discrete-event simulator for asynchronous runs."""

from __future__ import annotations

import heapq
import os
import random
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

from .model import (
    DelayModel,
    Envelope,
    ExperimentConfig,
    ProcessReport,
    RunReport,
    RunStatus,
    TraceEvent,
)
from .semilattice import LatticeValue

DEFAULT_EVENT_CAP = 1_000_000

# ordering of simultaneous events: crashes, then self-deliveries, then client
# injections, then remote deliveries
_CRASH, _SELF, _CLIENT, _REMOTE = range(4)


@dataclass(frozen=True)
class Send:
    """Outgoing message; ``to=None`` broadcasts to every process, self included."""

    payload: Mapping[str, Any]
    to: Optional[int] = None


Step = Tuple[Any, Sequence[Send], Sequence[Tuple[str, Mapping[str, Any]]]]


class AsyncProtocol(Protocol):
    name: str

    def init(self, pid: int, config: ExperimentConfig) -> Any: ...

    def on_start(self, state: Any) -> Step: ...

    def on_deliver(self, state: Any, env: Envelope) -> Step: ...

    def on_client(self, state: Any, v: LatticeValue) -> Step: ...

    def quiescent(self, state: Any) -> bool: ...

    def decision(self, state: Any) -> Optional[LatticeValue]: ...

    def round_trips(self, state: Any) -> int: ...


class ReplayMissing(KeyError):
    pass


def assign_delay(model: DelayModel, src: int, dst: int, counter: int) -> int:
    if src == dst:
        return 0
    if model.kind == "unit":
        return 1
    if model.kind == "random":
        return random.Random(f"{model.seed}:{src}:{counter}").randint(1, model.max_delay)
    if model.kind == "replay":
        try:
            return model.table[(src, counter)]
        except (KeyError, TypeError):
            raise ReplayMissing((src, counter)) from None
    raise ValueError(f"unknown delay model {model.kind!r}")


def event_cap(config: ExperimentConfig) -> int:
    env = os.environ.get("LA_EVENT_CAP")
    if env:
        return int(env)
    return config.event_cap or DEFAULT_EVENT_CAP


def run_async(config: ExperimentConfig, proto: AsyncProtocol) -> Tuple[RunReport, List[TraceEvent]]:
    """Run the event loop until no events remain (or the event cap is hit)."""
    if config.synchronous:
        raise ValueError(f"run_async cannot execute {config.algorithm!r}")
    n = config.n
    trace: List[TraceEvent] = []
    states = {p: proto.init(p, config) for p in config.pids}
    crashed: Dict[int, int] = {}
    counters = {p: 0 for p in config.pids}
    queue: list = []
    seq = 0
    messages = 0
    now = 0

    def push(t: int, rank: int, src: int, counter: int, item) -> None:
        nonlocal seq
        heapq.heappush(queue, (t, rank, src, counter, seq, item))
        seq += 1

    def dispatch(p: int, step: Step) -> None:
        nonlocal messages
        state, sends, notes = step
        states[p] = state
        for kind, detail in notes:
            trace.append(TraceEvent(now, kind, p, detail))
        for s in sends:
            targets = config.pids if s.to is None else (s.to,)
            for q in targets:
                c = counters[p]
                counters[p] += 1
                d = assign_delay(config.delay, p, q, c)
                env = Envelope(p, q, now, now + d, s.payload, (), c)
                messages += 1
                trace.append(
                    TraceEvent(now, "send", p, {"to": q, "counter": c, "deliver_t": now + d, "payload": s.payload})
                )
                push(now + d, _SELF if p == q else _REMOTE, p, c, env)

    for cr in config.crashes:
        push(cr.at, _CRASH, cr.victim, 0, ("crash", cr.victim))
    for p, stream in config.streams.items():
        for i, (t, v) in enumerate(stream):
            push(t, _CLIENT, p, i, ("client", p, v))

    # crashes scheduled at tick 0 take effect before anyone starts
    while queue and queue[0][0] == 0 and queue[0][1] == _CRASH:
        _, _, victim, _, _, _ = heapq.heappop(queue)
        crashed[victim] = 0
        trace.append(TraceEvent(0, "crash", victim, {}))
    for p in config.pids:
        if p not in crashed:
            dispatch(p, proto.on_start(states[p]))

    cap = event_cap(config)
    processed = 0
    status = RunStatus.COMPLETED.value
    findings: List[str] = []
    while queue:
        if processed >= cap:
            status = RunStatus.NON_QUIESCENT.value
            findings.append(f"NON_QUIESCENT: event cap {cap} reached at t={now}")
            break
        t, rank, src, counter, _, item = heapq.heappop(queue)
        now = t
        processed += 1
        if isinstance(item, Envelope):
            if item.dst in crashed:
                trace.append(TraceEvent(t, "drop", item.dst, {"from": src, "counter": counter}))
                continue
            trace.append(TraceEvent(t, "deliver", item.dst, {"from": src, "counter": counter}))
            dispatch(item.dst, proto.on_deliver(states[item.dst], item))
        elif item[0] == "crash":
            if src not in crashed:
                crashed[src] = t
                trace.append(TraceEvent(t, "crash", src, {}))
        else:
            _, p, v = item
            if p in crashed:
                trace.append(TraceEvent(t, "drop", p, {"client": v}))
                continue
            trace.append(TraceEvent(t, "client", p, {"value": v}))
            dispatch(p, proto.on_client(states[p], v))

    if status == RunStatus.COMPLETED.value:
        stuck = [p for p in config.pids if p not in crashed and not proto.quiescent(states[p])]
        if stuck:
            status = RunStatus.NON_QUIESCENT.value
            findings.append(f"NON_QUIESCENT: {stuck} not quiescent with an empty event queue")

    per_process = {
        p: ProcessReport(
            decision=proto.decision(states[p]),
            rounds_used=proto.round_trips(states[p]),
            crashed=p in crashed,
        )
        for p in config.pids
    }
    report = RunReport(
        algorithm=config.algorithm,
        n=n,
        f=config.f,
        per_process=per_process,
        total_messages=messages,
        clock_at_quiescence=now,
        status=status,
        findings=findings,
    )
    extra = getattr(proto, "finalize", None)
    if extra is not None:
        extra(states, report)
    return report, trace
