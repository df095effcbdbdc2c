"""Round-trip based asynchronous lattice agreement (delta) and its generalized form (gla)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from .async_engine import Send, Step
from .model import Envelope, ExperimentConfig, RunReport, RunStatus
from .semilattice import BOTTOM, LatticeValue, join_all

ACCEPT, REJECT, DECIDE = "accept", "reject", "decide"


def majority(tally: int, n: int, weak: bool = False) -> bool:
    """``tally > n/2``; the weak variant (``>=``) is a deliberately broken negative control."""
    return 2 * tally >= n if weak else 2 * tally > n


def prop(v: LatticeValue, r: int, s: Optional[int] = None) -> dict:
    d = {"type": "prop", "v": v, "r": r}
    if s is not None:
        d["s"] = s
    return d


def ack(verdict: str, v: Optional[LatticeValue], r: int, s: Optional[int] = None) -> dict:
    d = {"type": "ack", "verdict": verdict, "value": v, "r": r}
    if s is not None:
        d["s"] = s
    return d


@dataclass(frozen=True)
class DeltaState:
    pid: int
    n: int
    f: int
    accept_val: LatticeValue
    limit: int
    r: int = 1
    val: LatticeValue = BOTTOM
    acks: Tuple[Tuple[str, Optional[LatticeValue]], ...] = ()
    learned: Optional[LatticeValue] = None
    done: bool = False
    exhausted: bool = False


def delta_on_prop(st: DeltaState, src: int, v: LatticeValue, r: int) -> Tuple[DeltaState, dict]:
    if st.accept_val <= v:
        return replace(st, accept_val=v), ack(ACCEPT, None, r)
    return st, ack(REJECT, st.accept_val, r)


def delta_on_ack(
    st: DeltaState, verdict: str, v: Optional[LatticeValue], r: int, weak: bool = False
) -> Tuple[DeltaState, List[Send], List[tuple]]:
    if st.done or r != st.r:
        return st, [], [("stale", {"r": r, "current": st.r})]
    acks = st.acks + ((verdict, v),)
    if len(acks) < st.n - st.f:
        return replace(st, acks=acks), [], []
    tally = sum(1 for verdict, _ in acks if verdict == ACCEPT)
    if majority(tally, st.n, weak):
        st = replace(st, acks=acks, learned=st.val, done=True)
        return st, [], [("learn", {"value": st.val, "round_trips": st.r})]
    rejected = [val for verdict, val in acks if verdict == REJECT]
    grown = join_all([st.accept_val] + rejected)
    notes: List[tuple] = []
    if grown != st.accept_val:
        notes.append(("acceptVal", {"value": grown}))
    if st.r >= st.limit:
        st = replace(st, accept_val=grown, acks=acks, done=True, exhausted=True)
        notes.append(("exhausted", {"round_trips": st.r, "val": st.val}))
        return st, [], notes
    st = replace(st, accept_val=grown, r=st.r + 1, val=grown, acks=())
    notes.append(("propose", {"r": st.r, "val": grown}))
    return st, [Send(prop(grown, st.r))], notes


class LaDelta:
    """Asynchronous lattice agreement in round-trips of one broadcast and n-f acknowledgements."""

    name = "delta"

    def __init__(self, weak_tally: bool = False):
        self.weak = weak_tally

    def init(self, pid: int, config: ExperimentConfig) -> DeltaState:
        limit = config.round_trip_limit or config.f + 1
        return DeltaState(pid, config.n, config.f, config.inputs[pid], limit)

    def on_start(self, st: DeltaState) -> Step:
        st = replace(st, val=st.accept_val)
        return st, [Send(prop(st.val, 1))], [("propose", {"r": 1, "val": st.val})]

    def on_deliver(self, st: DeltaState, env: Envelope) -> Step:
        m = env.payload
        if m["type"] == "prop":
            before = st.accept_val
            st, reply = delta_on_prop(st, env.src, m["v"], m["r"])
            notes = [("acceptVal", {"value": st.accept_val})] if st.accept_val != before else []
            return st, [Send(reply, env.src)], notes
        return delta_on_ack(st, m["verdict"], m["value"], m["r"], self.weak)

    def on_client(self, st: DeltaState, v: LatticeValue) -> Step:
        raise ValueError("delta takes no client values")

    def quiescent(self, st: DeltaState) -> bool:
        return st.done

    def decision(self, st: DeltaState) -> Optional[LatticeValue]:
        return st.learned

    def round_trips(self, st: DeltaState) -> int:
        return st.r

    def finalize(self, states: Dict[int, DeltaState], report: RunReport) -> None:
        stuck = [p for p, st in sorted(states.items()) if st.exhausted and not report.per_process[p].crashed]
        if stuck and report.status == RunStatus.COMPLETED.value:
            report.status = RunStatus.BOUND_VIOLATION.value
            report.findings.append(f"BOUND_VIOLATION: {stuck} ran out of round-trips without learning")


@dataclass(frozen=True)
class GlaState:
    pid: int
    n: int
    f: int
    limit: int
    s: int = 0
    max_seq: int = -1
    buff: LatticeValue = BOTTOM
    lv: Tuple[LatticeValue, ...] = ()
    accept_val: LatticeValue = BOTTOM
    active: bool = False
    r: int = 0
    val: LatticeValue = BOTTOM
    acks: Tuple[Tuple[str, Optional[LatticeValue]], ...] = ()
    deferred: Tuple[Envelope, ...] = ()
    max_round_trips: int = 0


def gla_agree_guard(st: GlaState) -> bool:
    return not st.active and (bool(st.buff) or st.max_seq >= st.s)


def gla_on_client_value(st: GlaState, v: LatticeValue) -> Tuple[GlaState, List[Send]]:
    return replace(st, buff=st.buff | v), [Send({"type": "server", "v": v})]


def _acceptor(st: GlaState, v: LatticeValue, r: int, s: int) -> Tuple[GlaState, dict, list]:
    if st.accept_val <= v:
        notes = [("acceptVal", {"value": v})] if v != st.accept_val else []
        return replace(st, accept_val=v), ack(ACCEPT, None, r, s), notes
    return st, ack(REJECT, st.accept_val, r, s), []


def gla_on_prop(st: GlaState, env: Envelope) -> Tuple[GlaState, List[Send], list]:
    m = env.payload
    s2 = m["s"]
    if s2 < st.s:
        return st, [Send(ack(DECIDE, st.lv[s2], m["r"], s2), env.src)], []
    if s2 > st.s:
        st = replace(st, max_seq=max(s2, st.max_seq), deferred=st.deferred + (env,))
        return st, [], [("defer", {"from": env.src, "s": s2})]
    st, reply, notes = _acceptor(st, m["v"], m["r"], s2)
    return st, [Send(reply, env.src)], notes


def _start_agree(st: GlaState) -> Tuple[GlaState, List[Send], list]:
    grown = st.buff | st.accept_val
    notes: list = [("agreeStart", {"s": st.s})]
    if grown != st.accept_val:
        notes.append(("acceptVal", {"value": grown}))
    st = replace(st, active=True, accept_val=grown, buff=BOTTOM, r=1, val=grown, acks=())
    notes.append(("propose", {"r": 1, "s": st.s, "val": grown}))
    return st, [Send(prop(grown, 1, st.s))], notes


def _end_agree(st: GlaState, val: LatticeValue, via: str) -> Tuple[GlaState, List[Send], list]:
    s = st.s
    notes: list = [
        ("agreeEnd", {"s": s, "val": val, "via": via, "acceptVal": st.accept_val, "round_trips": st.r}),
        ("learn", {"s": s, "value": val}),
    ]
    st = replace(
        st,
        lv=st.lv + (val,),
        s=s + 1,
        active=False,
        acks=(),
        max_round_trips=max(st.max_round_trips, st.r),
    )
    sends: List[Send] = []
    matured = [e for e in st.deferred if e.payload["s"] == st.s]
    st = replace(st, deferred=tuple(e for e in st.deferred if e.payload["s"] != st.s))
    for env in matured:
        st, reply, more = _acceptor(st, env.payload["v"], env.payload["r"], st.s)
        sends.append(Send(reply, env.src))
        notes.extend(more)
    return st, sends, notes


def gla_on_ack(st: GlaState, env: Envelope, weak: bool = False) -> Tuple[GlaState, List[Send], list]:
    m = env.payload
    if not st.active or m["s"] != st.s or m["r"] != st.r:
        return st, [], [("stale", {"r": m["r"], "s": m["s"]})]
    acks = st.acks + ((m["verdict"], m["value"]),)
    if len(acks) < st.n - st.f:
        return replace(st, acks=acks), [], []
    st = replace(st, acks=acks)
    decided = [v for verdict, v in acks if verdict == DECIDE]
    if decided:
        return _end_agree(st, join_all(decided), DECIDE)
    tally = sum(1 for verdict, _ in acks if verdict == ACCEPT)
    if majority(tally, st.n, weak):
        return _end_agree(st, st.val, "majority")
    rejected = [v for verdict, v in acks if verdict == REJECT]
    grown = join_all([st.accept_val] + rejected)
    notes: list = []
    if grown != st.accept_val:
        notes.append(("acceptVal", {"value": grown}))
    if st.r >= st.limit:
        # the round-trip loop ran out: the learned value is the last proposal
        st = replace(st, accept_val=grown)
        notes.append(("exhausted", {"s": st.s, "round_trips": st.r, "val": st.val}))
        st, sends, more = _end_agree(st, st.val, "exhausted")
        return st, sends, notes + more
    st = replace(st, accept_val=grown, r=st.r + 1, val=grown, acks=())
    notes.append(("propose", {"r": st.r, "s": st.s, "val": grown}))
    return st, [Send(prop(grown, st.r, st.s))], notes


class Gla:
    """Generalized lattice agreement: repeated delta instances keyed by sequence number."""

    name = "gla"

    def __init__(self, weak_tally: bool = False):
        self.weak = weak_tally

    def init(self, pid: int, config: ExperimentConfig) -> GlaState:
        limit = config.round_trip_limit or config.f + 1
        return GlaState(pid, config.n, config.f, limit)

    def _guard(self, st: GlaState, sends: List[Send], notes: list) -> Step:
        if gla_agree_guard(st):
            st, more_sends, more_notes = _start_agree(st)
            sends = sends + more_sends
            notes = notes + more_notes
        return st, sends, notes

    def on_start(self, st: GlaState) -> Step:
        return self._guard(st, [], [])

    def on_client(self, st: GlaState, v: LatticeValue) -> Step:
        st, sends = gla_on_client_value(st, v)
        return self._guard(st, sends, [])

    def on_deliver(self, st: GlaState, env: Envelope) -> Step:
        m = env.payload
        kind = m["type"]
        if kind == "server":
            return self._guard(replace(st, buff=st.buff | m["v"]), [], [])
        if kind == "prop":
            st, sends, notes = gla_on_prop(st, env)
        else:
            st, sends, notes = gla_on_ack(st, env, self.weak)
        return self._guard(st, sends, notes)

    def quiescent(self, st: GlaState) -> bool:
        return not st.active and not st.buff and st.max_seq < st.s and not st.deferred

    def decision(self, st: GlaState) -> Optional[LatticeValue]:
        return st.lv[-1] if st.lv else None

    def round_trips(self, st: GlaState) -> int:
        return st.max_round_trips

    def finalize(self, states: Dict[int, GlaState], report: RunReport) -> None:
        report.learned_sequences = {p: list(st.lv) for p, st in sorted(states.items())}


def make_async_protocol(config: ExperimentConfig):
    weak = config.mutant == "weak_tally"
    return {"delta": LaDelta, "gla": Gla}[config.algorithm](weak_tally=weak)
