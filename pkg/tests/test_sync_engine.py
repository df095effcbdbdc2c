from lattice_agreement.model import CrashSpec, ExperimentConfig, validate_config
from lattice_agreement.semilattice import value
from lattice_agreement.sync_engine import Absorbed, Outgoing, run_sync, start_run, step_round
from lattice_agreement.sync_protocols import LaAlpha


class Echo:
    """Broadcast the input once, decide on whatever arrived."""

    name = "echo"

    def init(self, pid, config):
        return config.inputs[pid]

    def emit(self, st, rnd):
        return [Outgoing({"v": st}, ("echo", rnd))]

    def listen(self, st, rnd):
        return ("echo", rnd)

    def absorb(self, st, rnd, inbox, foreign):
        return Absorbed(st, frozenset(str(e.src) for e in inbox))

    def round_budget(self, config):
        return 1


def alpha_cfg(n=3, f=0, inputs=None, H=4, crashes=()):
    inputs = inputs or {p: value("abc"[p - 1]) for p in range(1, n + 1)}
    return validate_config(ExperimentConfig(n=n, f=f, algorithm="alpha", inputs=inputs, H=H, crashes=crashes))


def inbox_senders(trace, dst):
    return sorted(e.detail["from"] for e in trace if e.kind == "deliver" and e.actor == dst)


def test_full_delivery_without_crashes():
    c = validate_config(ExperimentConfig(n=2, f=0, algorithm="alpha", inputs={1: value("a"), 2: value("b")}))
    run = step_round(start_run(c, Echo()), Echo(), [])
    assert run.decided == {1: value("1", "2"), 2: value("1", "2")}


def test_deliver_to_subset():
    c = validate_config(
        ExperimentConfig(
            n=3, f=1, algorithm="alpha",
            inputs={p: value("a") for p in range(1, 4)},
            crashes=(CrashSpec(3, 1, frozenset({1})),),
        )
    )
    run = step_round(start_run(c, Echo()), Echo(), c.crashes)
    assert run.decided[1] == value("1", "2", "3")
    assert run.decided[2] == value("1", "2")
    assert 3 not in run.alive


def test_crashed_process_stays_silent():
    c = alpha_cfg(f=1, crashes=(CrashSpec(3, 1),))
    proto = LaAlpha()
    run = step_round(start_run(c, proto), proto, c.crashes)
    run = step_round(run, proto, c.crashes)
    assert not [e for e in run.trace if e.kind == "send" and e.actor == 3]


def test_single_process():
    c = alpha_cfg(n=1, H=1, inputs={1: value("a")})
    report, _ = run_sync(c, LaAlpha())
    assert report.per_process[1].decision == value("a")
    assert report.per_process[1].rounds_used == 1


def test_three_singletons_hand_trace():
    report, trace = run_sync(alpha_cfg(), LaAlpha())
    assert report.decisions() == {p: value("a", "b", "c") for p in (1, 2, 3)}
    assert report.max_rounds_used() == 2
    first = [e.detail["class"] for e in trace if e.kind == "classify" and e.detail["r"] == 1]
    assert first == ["master"] * 3


def test_crash_without_delivery():
    report, _ = run_sync(alpha_cfg(f=1, crashes=(CrashSpec(3, 1),)), LaAlpha())
    d = report.decisions()
    assert set(d) == {1, 2}
    assert d[1] <= d[2] or d[2] <= d[1]


def test_messages_stay_in_their_round_and_respect_n_squared():
    report, trace = run_sync(alpha_cfg(n=3, inputs={1: value("a"), 2: value("b", "c"), 3: value("d")}, H=4), LaAlpha())
    sends = [e for e in trace if e.kind == "send"]
    delivers = [e for e in trace if e.kind == "deliver"]
    assert all(e.detail["tags"][1] == e.t for e in sends + delivers)
    for r in set(e.t for e in sends):
        per = {}
        for e in sends:
            if e.t == r:
                per[e.actor] = per.get(e.actor, 0) + 1
        assert max(per.values()) <= 3
    assert report.total_messages <= 9 * report.rounds_executed


def test_identical_inboxes_without_crashes():
    _, trace = run_sync(alpha_cfg(), LaAlpha())
    r1 = {p: inbox_senders([e for e in trace if e.t == 1], p) for p in (1, 2, 3)}
    assert r1[1] == r1[2] == r1[3] == [1, 2, 3]
