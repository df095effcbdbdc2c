from dataclasses import replace

from lattice_agreement.async_engine import run_async
from lattice_agreement.async_protocols import (
    ACCEPT,
    DECIDE,
    REJECT,
    DeltaState,
    Gla,
    GlaState,
    LaDelta,
    ack,
    delta_on_ack,
    delta_on_prop,
    gla_agree_guard,
    gla_on_ack,
    gla_on_client_value,
    gla_on_prop,
    majority,
    prop,
)
from lattice_agreement.checker import check_accept_monotone, check_gla, check_la, comparability_oracle
from lattice_agreement.model import CrashSpec, Envelope, ExperimentConfig, validate_config
from lattice_agreement.semilattice import value

A, B, C, AB = value("a"), value("b"), value("c"), value("a", "b")


def dstate(n=3, f=1, accept=A, **kw):
    return DeltaState(1, n, f, accept, f + 1, **kw)


def test_delta_on_prop():
    st, reply = delta_on_prop(dstate(), 2, AB, 1)
    assert reply["verdict"] == ACCEPT and st.accept_val == AB
    st, reply = delta_on_prop(dstate(), 2, B, 1)
    assert reply == ack(REJECT, A, 1) and st.accept_val == A
    st, reply = delta_on_prop(dstate(), 2, A, 1)
    assert reply["verdict"] == ACCEPT


def test_majority():
    assert majority(2, 3) and not majority(1, 3)
    assert not majority(2, 5) and majority(3, 5)
    assert not majority(2, 4) and majority(2, 4, weak=True)


def test_delta_on_ack_learns_on_majority():
    st = dstate(val=A)
    st, _, _ = delta_on_ack(st, ACCEPT, None, 1)
    st, sends, notes = delta_on_ack(st, ACCEPT, None, 1)
    assert st.learned == A and st.done and not sends


def test_delta_on_ack_rejection_grows_and_reproposes():
    st = dstate(val=A)
    st, _, _ = delta_on_ack(st, ACCEPT, None, 1)
    st, sends, _ = delta_on_ack(st, REJECT, B, 1)
    assert st.learned is None and st.accept_val == AB and st.r == 2
    assert sends[0].payload == prop(AB, 2)


def test_delta_on_ack_n5():
    st = dstate(n=5, f=2, val=A)
    for verdict, v in ((ACCEPT, None), (ACCEPT, None), (REJECT, B)):
        st, sends, _ = delta_on_ack(st, verdict, v, 1)
    assert st.r == 2 and st.learned is None and sends


def test_delta_ignores_other_rounds():
    st, sends, notes = delta_on_ack(dstate(val=A), ACCEPT, None, 3)
    assert not st.acks and notes[0][0] == "stale"


def delta_run(inputs, f=1, **kw):
    c = validate_config(ExperimentConfig(n=len(inputs), f=f, algorithm="delta", inputs=dict(enumerate(inputs, 1)), **kw))
    report, trace = run_async(c, LaDelta())
    return c, report, trace


def test_delta_equal_inputs():
    c, report, _ = delta_run([A, A, A])
    assert check_la(c.inputs, report).passed
    assert report.max_rounds_used() == 1


def test_delta_loop_bound_counterexample():
    # three singleton inputs under unit delays: p3 proposes {a,c} in round-trip 2
    # against acceptors already holding {a,b} and runs out of round-trips
    c, report, trace = delta_run([A, B, C])
    assert report.per_process[1].decision == AB and report.per_process[2].decision == AB
    assert report.per_process[3].decision is None
    assert report.status == "BOUND_VIOLATION"
    assert [e.actor for e in trace if e.kind == "exhausted"] == [3]
    verdict = check_la(c.inputs, report)
    assert verdict.properties() == ["Termination"]


def test_delta_with_one_extra_round_trip():
    c, report, _ = delta_run([A, B, C], round_trip_limit=3)
    assert check_la(c.inputs, report).passed
    assert report.per_process[3].decision == value("a", "b", "c")
    assert report.per_process[3].rounds_used == 3
    assert report.clock_at_quiescence == 6


def test_delta_crashed_from_start():
    inputs = [value(f"e{i}") for i in range(5)]
    c, report, trace = delta_run(inputs, f=2, crashes=(CrashSpec(5, 0),), round_trip_limit=5)
    assert check_la(c.inputs, report).passed
    assert check_accept_monotone(trace, c.inputs).passed


def gstate(**kw):
    return replace(GlaState(1, 3, 1, 2), **kw)


def env(payload, src=2):
    return Envelope(src, 1, 0, 1, payload)


def test_gla_client_value():
    st, sends = gla_on_client_value(gstate(), A)
    assert st.buff == A and len(sends) == 1 and sends[0].to is None
    st, sends = gla_on_client_value(st, A)
    assert st.buff == A and sends
    st, _ = gla_on_client_value(st, B)
    assert st.buff == AB


def test_gla_on_prop():
    st = gstate(s=2, lv=(A, AB))
    _, sends, _ = gla_on_prop(st, env(prop(B, 1, 0)))
    assert sends[0].payload == ack(DECIDE, A, 1, 0)
    st, sends, _ = gla_on_prop(gstate(), env(prop(B, 1, 3)))
    assert not sends and st.max_seq == 3 and len(st.deferred) == 1
    st, sends, _ = gla_on_prop(gstate(accept_val=A), env(prop(AB, 1, 0)))
    assert sends[0].payload["verdict"] == ACCEPT and st.accept_val == AB


def test_gla_guard():
    assert gla_agree_guard(gstate(buff=A))
    assert not gla_agree_guard(gstate(buff=A, active=True))
    assert gla_agree_guard(gstate(max_seq=2, s=1))
    assert not gla_agree_guard(gstate())


def test_gla_on_ack_decide_values():
    st = gstate(active=True, r=1, val=A)
    st, _, _ = gla_on_ack(st, env(ack(DECIDE, A, 1, 0)))
    st, _, _ = gla_on_ack(st, env(ack(DECIDE, AB, 1, 0), src=3))
    assert st.lv == (AB,) and st.s == 1 and not st.active


def test_gla_on_ack_majority_and_reject():
    st = gstate(active=True, r=1, val=A, accept_val=A)
    st, _, _ = gla_on_ack(st, env(ack(ACCEPT, None, 1, 0)))
    done, _, _ = gla_on_ack(st, env(ack(ACCEPT, None, 1, 0), src=3))
    assert done.lv == (A,)
    grown, sends, _ = gla_on_ack(st, env(ack(REJECT, C, 1, 0), src=3))
    assert grown.accept_val == value("a", "c") and grown.r == 2 and sends


def gla_run(n, f, streams, **kw):
    c = validate_config(ExperimentConfig(n=n, f=f, algorithm="gla", streams=streams, **kw))
    report, trace = run_async(c, Gla())
    return c, report, trace


def test_gla_single_value():
    _, report, trace = gla_run(3, 1, {1: ((0, A),)})
    assert check_gla(report, trace).passed
    assert all(seq[-1] >= A for seq in report.learned_sequences.values())


def test_gla_two_concurrent_adds():
    _, report, trace = gla_run(3, 1, {1: ((0, A),), 2: ((0, B),)})
    assert check_gla(report, trace).passed
    learned = [v for seq in report.learned_sequences.values() for v in seq]
    assert comparability_oracle(learned)
    assert all(seq[-1] >= AB for seq in report.learned_sequences.values())


def test_gla_crash_mid_run():
    streams = {p: tuple((2 * i + p, value(f"c{p}{i}")) for i in range(2)) for p in range(1, 6)}
    _, report, trace = gla_run(5, 2, streams, crashes=(CrashSpec(4, 3),), round_trip_limit=5)
    assert report.status == "COMPLETED"
    assert check_gla(report, trace).passed
