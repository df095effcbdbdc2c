"""Property verification over run reports and traces.

Every check returns a :class:`Verdict`; none of them mutate their inputs.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .model import ExperimentConfig, RunReport, RunStatus, TraceEvent, jsonable
from .semilattice import (
    LatticeValue,
    decode_value,
    depth_to_top,
    height,
    join_all,
    join_closure,
)
from .sync_protocols import SCALE, alpha_budget, gamma_phase_b_bound


@dataclass
class Verdict:
    violations: List[dict] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def fail(self, prop: str, **witness: Any) -> None:
        self.violations.append({"property": prop, "witness": jsonable(witness)})

    def extend(self, other: "Verdict") -> "Verdict":
        self.violations.extend(other.violations)
        self.notes.extend(other.notes)
        return self

    def properties(self) -> List[str]:
        return sorted({v["property"] for v in self.violations})

    def to_dict(self) -> dict:
        return {"passed": self.passed, "violations": self.violations, "notes": self.notes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def comparability_oracle(values: Iterable[LatticeValue]) -> bool:
    vs = list(values)
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            if not (vs[i] <= vs[j] or vs[j] <= vs[i]):
                return False
    return True


def _as_value(x) -> LatticeValue:
    return x if isinstance(x, frozenset) else decode_value(x)


def check_la(inputs: Mapping[int, LatticeValue], report: RunReport) -> Verdict:
    """Downward-Validity, Upward-Validity and Comparability of LA decisions."""
    v = Verdict()
    top = join_all(inputs.values())
    decided = report.decisions()
    for p in report.correct():
        y = decided.get(p)
        if y is None:
            v.fail("Termination", process=p)
            continue
        if not inputs[p] <= y:
            v.fail("Downward-Validity", process=p, input=inputs[p], decision=y)
        if not y <= top:
            v.fail("Upward-Validity", process=p, decision=y, join_of_inputs=top)
    for (p, yp), (q, yq) in combinations(sorted(decided.items()), 2):
        if not (yp <= yq or yq <= yp):
            v.fail("Comparability", processes=[p, q], values=[yp, yq])
    return v


def check_status(report: RunReport) -> Verdict:
    v = Verdict()
    if report.status == RunStatus.NON_QUIESCENT.value:
        v.fail("Inconclusive-NonQuiescent", findings=report.findings)
    elif report.status == RunStatus.BOUND_VIOLATION.value:
        v.fail("Round-Budget", findings=report.findings)
    return v


# ---------------------------------------------------------------- classifier rounds


def _classifier_rounds(trace: Sequence[TraceEvent]):
    """Group observations by (instance, local round, scaled label)."""
    sent: Dict[Tuple, Dict[int, LatticeValue]] = defaultdict(dict)
    classified: Dict[Tuple, Dict[int, dict]] = defaultdict(dict)
    hprime: Dict[str, int] = {}
    for e in trace:
        if e.kind == "send":
            payload = e.detail["payload"]
            if "k" in payload:
                inst, r, k = e.detail["tags"]
                sent[(inst, r, k)][e.actor] = _as_value(payload["v"])
        elif e.kind == "classify":
            d = e.detail
            hprime[d["inst"]] = d["hprime"]
            classified[(d["inst"], d["r"], d["k"])][e.actor] = d
    return sent, classified, hprime


def check_classifier_rounds(trace: Sequence[TraceEvent]) -> Verdict:
    """Per-round Classifier inequalities on scaled integer labels.

    The height-window inequalities are only asserted on alpha instances whose
    height bound covers the join of their round-1 values; the unconditional
    parts (threshold side, slave-join bound, master dominance, label/path
    consistency) are asserted everywhere.
    """
    v = Verdict()
    sent, classified, hprime = _classifier_rounds(trace)
    covered: Dict[str, bool] = {}
    for (inst, r, k), members in sent.items():
        if r == 1:
            vals = list(members.values())
            ok = height(join_all(vals)) <= hprime.get(inst, 0) if vals else True
            covered[inst] = covered.get(inst, True) and ok
    skipped = sorted(i for i, ok in covered.items() if not ok)
    if skipped:
        v.notes.append(f"height-window checks skipped for under-guessed instances {skipped}")

    for key in sorted(set(sent) | set(classified), key=lambda t: (t[0], t[1], t[2])):
        inst, r, k = key
        if inst not in hprime:
            continue
        window = (SCALE * hprime[inst]) >> r
        lo, hi = k - window, k + window
        windowed = covered.get(inst, False)
        members = sent.get(key, {})
        wit = {"inst": inst, "round": r, "k": k}
        if windowed and members:
            for p, val in sorted(members.items()):
                s = SCALE * height(val)
                if s > hi or (val and s <= lo):
                    v.fail("GroupWindow-Value", process=p, scaled_height=s, window=[lo, hi], **wit)
            s = SCALE * height(join_all(members.values()))
            if s > hi:
                v.fail("GroupWindow-Join", scaled_height=s, bound=hi, **wit)

        outs = classified.get(key, {})
        masters = {p: _as_value(d["out"]) for p, d in outs.items() if d["class"] == "master"}
        slaves = {p: _as_value(d["out"]) for p, d in outs.items() if d["class"] == "slave"}
        for p, val in masters.items():
            s = SCALE * height(val)
            if s <= k or (windowed and s > hi):
                v.fail("Classifier-MasterHeight", process=p, scaled_height=s, bounds=[k, hi], **wit)
        for p, val in slaves.items():
            s = SCALE * height(val)
            if s > k or (windowed and val and s <= lo):
                v.fail("Classifier-SlaveHeight", process=p, scaled_height=s, bounds=[lo, k], **wit)
        if masters and windowed and SCALE * height(join_all(masters.values())) > hi:
            v.fail("Classifier-MasterJoin", **wit)
        if slaves:
            sj = join_all(slaves.values())
            if SCALE * height(sj) > k:
                v.fail("Classifier-SlaveJoin", scaled_height=SCALE * height(sj), **wit)
            for p, val in masters.items():
                if not sj <= val:
                    v.fail("Classifier-MasterDominates", process=p, master=val, slave_join=sj, **wit)

    # a label identifies one root-to-node path of the classification tree
    by_proc: Dict[Tuple[str, int], List[Tuple[int, int, str]]] = defaultdict(list)
    for (inst, r, k), outs in classified.items():
        for p, d in outs.items():
            by_proc[(inst, p)].append((r, k, d["class"]))
    label_paths: Dict[Tuple[str, int, int], set] = defaultdict(set)
    for (inst, p), steps in by_proc.items():
        path: Tuple[str, ...] = ()
        for r, k, klass in sorted(steps):
            label_paths[(inst, r, k)].add(path)
            path = path + (klass,)
    for (inst, r, k), ps in label_paths.items():
        if len(ps) > 1:
            v.fail("Distinct-Labels", inst=inst, round=r, k=k, paths=sorted(ps))
    return v


def gamma_h_psi(trace: Sequence[TraceEvent]) -> Optional[int]:
    """Height of the join of the values that entered the first guessing iteration."""
    vals = [
        _as_value(e.detail["payload"]["v"])
        for e in trace
        if e.kind == "send" and list(e.detail["tags"][:2]) == ["gamma/1", 1]
    ]
    return height(join_all(vals)) if vals else None


def lattice_height(inputs: Iterable[LatticeValue]) -> int:
    return height(join_all(inputs))


def check_bounds(report: RunReport, c: ExperimentConfig, trace: Sequence[TraceEvent] = ()) -> Verdict:
    """Rounds / round-trips / messages against the algorithm's analytical bound."""
    v = Verdict()
    n = c.n
    alg = c.algorithm
    decided = {p: r for p, r in report.per_process.items() if r.decision is not None}
    if alg in ("alpha", "beta", "gamma"):
        if report.total_messages > n * n * report.rounds_executed:
            v.fail("Message-Bound", messages=report.total_messages, bound=n * n * report.rounds_executed)
    if alg == "alpha":
        bound = alpha_budget(c.H)
        for p, r in decided.items():
            if r.rounds_used > bound:
                v.fail("Round-Bound", process=p, rounds=r.rounds_used, bound=bound)
    elif alg == "beta":
        bound = 1 + alpha_budget(max(c.f, 1))
        for p, r in decided.items():
            if r.rounds_used > bound:
                v.fail("Round-Bound", process=p, rounds=r.rounds_used, bound=bound)
    elif alg == "gamma":
        h_psi = gamma_h_psi(trace)
        if h_psi is not None:
            bound = gamma_phase_b_bound(h_psi)
            for p, r in decided.items():
                if r.rounds_used - 1 > bound:
                    v.fail("Round-Bound", process=p, phase_b_rounds=r.rounds_used - 1, bound=bound, h_psi=h_psi)
    elif alg == "delta":
        rt = min(lattice_height(c.inputs.values()), c.f + 1)
        for p, r in report.per_process.items():
            if r.crashed:
                continue
            if r.decision is None:
                v.fail("RoundTrip-Bound", process=p, round_trips=r.rounds_used, decided=False, bound=rt)
            elif r.rounds_used > rt:
                v.fail("RoundTrip-Bound", process=p, round_trips=r.rounds_used, bound=rt)
        mbound = 2 * n * n * rt
        if report.total_messages > mbound:
            v.fail("Message-Bound", messages=report.total_messages, bound=mbound)
    elif alg == "gla":
        for p, r in report.per_process.items():
            if r.rounds_used > c.f + 1:
                v.fail("RoundTrip-Bound", process=p, round_trips=r.rounds_used, bound=c.f + 1)
    return v


# ---------------------------------------------------------------- async checks


def check_accept_monotone(trace: Sequence[TraceEvent], initial: Mapping[int, LatticeValue]) -> Verdict:
    v = Verdict()
    last = dict(initial)
    for i, e in enumerate(trace):
        if e.kind == "acceptVal":
            new = _as_value(e.detail["value"])
            old = last.get(e.actor, frozenset())
            if not old <= new:
                v.fail("AcceptVal-Monotone", process=e.actor, event=i, before=old, after=new)
            last[e.actor] = new
    return v


def check_height_descent(trace: Sequence[TraceEvent], inputs: Iterable[LatticeValue]) -> Verdict:
    """Join-closure height of the round-trip-r proposals strictly decreases in r.

    Heights are literal longest chains inside the input closure, measured
    from each proposal up to the top.
    """
    v = Verdict()
    depth = depth_to_top(join_closure(inputs))
    wave: Dict[int, int] = {}
    for i, e in enumerate(trace):
        if e.kind == "propose":
            val = _as_value(e.detail["val"])
            if val not in depth:
                v.fail("HeightDescent-Closure", process=e.actor, event=i, value=val)
                continue
            r = e.detail["r"]
            wave[r] = max(wave.get(r, 0), depth[val])
    rs = sorted(wave)
    for a, b in zip(rs, rs[1:]):
        if not wave[b] < wave[a]:
            v.fail("HeightDescent", round_trip=b, height=wave[b], previous=wave[a])
    return v


def injected_values(trace: Sequence[TraceEvent]) -> Dict[int, List[LatticeValue]]:
    out: Dict[int, List[LatticeValue]] = defaultdict(list)
    for e in trace:
        if e.kind == "client":
            out[e.actor].append(_as_value(e.detail["value"]))
    return dict(out)


def check_gla(
    report: RunReport,
    trace: Sequence[TraceEvent],
    injected: Optional[Mapping[int, Sequence[LatticeValue]]] = None,
) -> Verdict:
    """Validity, Stability, Comparability, Liveness-at-quiescence and the per-sequence invariants."""
    v = Verdict()
    if injected is None:
        injected = injected_values(trace)
    if report.status != RunStatus.COMPLETED.value:
        v.fail("Inconclusive-NonQuiescent", findings=report.findings)
        return v
    correct = set(report.correct())
    lv = report.learned_sequences
    all_inj = [x for xs in injected.values() for x in xs]

    for p, seq in sorted(lv.items()):
        for s, y in enumerate(seq):
            parts = [x for x in all_inj if x <= y]
            if (frozenset().union(*parts) if parts else frozenset()) != y:
                v.fail("Validity", process=p, seq=s, value=y)
        for s in range(len(seq) - 1):
            if not seq[s] <= seq[s + 1]:
                v.fail("Stability", process=p, seq=s, values=[seq[s], seq[s + 1]])

    flat = [(p, s, y) for p, seq in sorted(lv.items()) for s, y in enumerate(seq)]
    for (p, s, y), (q, t, z) in combinations(flat, 2):
        if not (y <= z or z <= y):
            prop = "SameSequence-Comparability" if s == t else "Comparability"
            v.fail(prop, pairs=[[p, s], [q, t]], values=[y, z])

    for p in sorted(correct):
        final = lv.get(p, [])
        for src, xs in sorted(injected.items()):
            if src not in correct:
                continue
            for x in xs:
                if not final or not x <= final[-1]:
                    v.fail("Liveness", process=p, injected_at=src, value=x, final=final[-1] if final else None)

    # per-sequence invariants: m_s carried by a majority, and below every later learned value
    n = report.n
    max_s = max((len(seq) for seq in lv.values()), default=0)
    end_accept: Dict[Tuple[int, int], LatticeValue] = {}
    final_accept: Dict[int, LatticeValue] = {}
    for e in trace:
        if e.kind == "agreeEnd":
            end_accept[(e.actor, e.detail["s"])] = _as_value(e.detail["acceptVal"])
        elif e.kind == "acceptVal":
            final_accept[e.actor] = _as_value(e.detail["value"])
    for s in range(max_s):
        learned = [seq[s] for seq in lv.values() if len(seq) > s]
        m_s = join_all(learned)
        lp = [
            p
            for p in range(1, n + 1)
            if m_s <= end_accept.get((p, s), final_accept.get(p, frozenset()))
        ]
        if not 2 * len(lp) > n:
            v.fail("Majority-CarryOver", seq=s, m_s=m_s, carriers=lp)
        for p, seq in sorted(lv.items()):
            if len(seq) > s + 1 and not m_s <= seq[s + 1]:
                v.fail("NextSequence-Dominance", process=p, seq=s + 1, m_s=m_s, value=seq[s + 1])

    for e in trace:
        if e.kind == "exhausted":
            v.fail("RoundTrip-Exhausted", process=e.actor, seq=e.detail.get("s"), round_trips=e.detail["round_trips"])
    return v


def check_exhaustion(trace: Sequence[TraceEvent]) -> Verdict:
    v = Verdict()
    for e in trace:
        if e.kind == "exhausted":
            v.fail("RoundTrip-Exhausted", process=e.actor, round_trips=e.detail["round_trips"])
    return v


def check_run(config: ExperimentConfig, report: RunReport, trace: Sequence[TraceEvent]) -> Verdict:
    """Every applicable check for one completed run."""
    v = check_status(report)
    alg = config.algorithm
    if alg == "gla":
        v.extend(check_gla(report, trace))
        v.extend(check_accept_monotone(trace, {}))
        v.extend(check_bounds(report, config, trace))
        return v
    v.extend(check_la(config.inputs, report))
    v.extend(check_bounds(report, config, trace))
    if config.synchronous:
        v.extend(check_classifier_rounds(trace))
    else:
        v.extend(check_exhaustion(trace))
        v.extend(check_accept_monotone(trace, config.inputs))
        if config.delay.kind == "unit":
            v.extend(check_height_descent(trace, config.inputs.values()))
    return v
