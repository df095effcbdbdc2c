import pytest

from lattice_agreement.async_engine import ReplayMissing, assign_delay, run_async
from lattice_agreement.async_protocols import LaDelta
from lattice_agreement.model import CrashSpec, DelayModel, ExperimentConfig, validate_config
from lattice_agreement.semilattice import value


def delta(inputs, f=1, **kw):
    c = validate_config(ExperimentConfig(n=len(inputs), f=f, algorithm="delta", inputs=dict(enumerate(inputs, 1)), **kw))
    return run_async(c, LaDelta())


def test_assign_delay():
    assert assign_delay(DelayModel(), 1, 2, 0) == 1
    for m in (DelayModel(), DelayModel("random", 5, 3)):
        assert assign_delay(m, 2, 2, 7) == 0
    m = DelayModel("random", 5, 3)
    draws = [assign_delay(m, 1, 2, c) for c in range(50)]
    assert draws == [assign_delay(m, 1, 2, c) for c in range(50)]
    assert set(draws) <= set(range(1, 6)) and len(set(draws)) > 1


def test_replay_table_lookup():
    m = DelayModel("replay", table={(1, 0): 4})
    assert assign_delay(m, 1, 2, 0) == 4
    with pytest.raises(ReplayMissing):
        assign_delay(m, 1, 2, 1)


def test_single_process_self_quorum():
    report, _ = delta([value("a")], f=0)
    assert report.per_process[1].decision == value("a")
    assert report.per_process[1].rounds_used == 1
    # self-messages cost nothing, so the whole run happens at tick 0
    assert report.clock_at_quiescence == 0


def test_equal_inputs_one_round_trip():
    report, _ = delta([value("a")] * 3)
    assert all(r.decision == value("a") and r.rounds_used == 1 for r in report.per_process.values())
    assert report.clock_at_quiescence == 2


def test_self_delivery_precedes_remote_at_same_tick():
    _, trace = delta([value("a")] * 3)
    first = [e for e in trace if e.kind == "deliver" and e.actor == 1]
    assert first[0].detail["from"] == 1 and first[0].t == 0


def test_remote_messages_take_time():
    _, trace = delta([value("a"), value("b"), value("c")], delay=DelayModel("random", 5, 9))
    for e in trace:
        if e.kind == "send" and e.detail["to"] != e.actor:
            assert e.detail["deliver_t"] > e.t


def test_non_fifo_reordering_pinned():
    _, trace = delta([value("a"), value("b"), value("c")], delay=DelayModel("random", 5, 0))
    sends = {e.detail["counter"]: e for e in trace if e.kind == "send" and e.actor == 1 and e.detail["to"] == 2}
    early, late = sends[1], sends[4]
    assert early.t < late.t and late.detail["deliver_t"] < early.detail["deliver_t"]
    order = [e.detail["counter"] for e in trace if e.kind == "deliver" and e.actor == 2 and e.detail["from"] == 1]
    assert order.index(4) < order.index(1)


def test_messages_to_crashed_process_are_dropped():
    report, trace = delta([value("a"), value("b"), value("c")], crashes=(CrashSpec(3, 1),))
    assert report.per_process[3].crashed
    assert not [e for e in trace if e.kind == "deliver" and e.actor == 3 and e.t >= 1]
    assert [e for e in trace if e.kind == "drop" and e.actor == 3]


def test_crash_at_zero_never_starts():
    _, trace = delta([value("a")] * 5, f=2, crashes=(CrashSpec(5, 0),))
    assert not [e for e in trace if e.actor == 5 and e.kind == "send"]


def test_event_cap_reports_non_quiescent(monkeypatch):
    monkeypatch.setenv("LA_EVENT_CAP", "5")
    report, _ = delta([value("a"), value("b"), value("c")])
    assert report.status == "NON_QUIESCENT"


def test_run_async_rejects_sync_algorithms():
    c = validate_config(ExperimentConfig(n=1, f=0, algorithm="alpha", inputs={1: value("a")}))
    with pytest.raises(ValueError):
        run_async(c, LaDelta())
