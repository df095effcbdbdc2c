"""Classifier-based synchronous lattice agreement: alpha, beta and gamma.

Labels are kept as integers scaled by ``SCALE`` so that every label update
stays exact through the final round.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .model import Envelope, ExperimentConfig
from .semilattice import LatticeValue, height, join_all
from .sync_engine import Absorbed, Outgoing

SCALE = 4


def pow2_ceil(h: int) -> int:
    """Smallest power of two >= h (1 for h <= 1)."""
    return 1 if h <= 1 else 1 << (h - 1).bit_length()


def log2_exact(h: int) -> int:
    return h.bit_length() - 1


def alpha_budget(H: int) -> int:
    return log2_exact(pow2_ceil(H)) + 1


@dataclass(frozen=True)
class ScaledLabel:
    lhat: int
    hprime: int

    @classmethod
    def initial(cls, H: int) -> "ScaledLabel":
        hp = pow2_ceil(H)
        return cls(2 * hp, hp)

    def step(self, r: int) -> int:
        num = SCALE * self.hprime
        den = 1 << (r + 1)
        if num % den:
            raise ValueError(f"label step at round {r} is not integral for H'={self.hprime}")
        return num // den

    def promote(self, r: int) -> "ScaledLabel":
        return replace(self, lhat=self.lhat + self.step(r))

    def demote(self, r: int) -> "ScaledLabel":
        return replace(self, lhat=self.lhat - self.step(r))


class Klass(str, Enum):
    MASTER = "master"
    SLAVE = "slave"
    NONE = "none"


@dataclass(frozen=True)
class ClassifierOutcome:
    value: LatticeValue
    klass: Klass
    decided: bool


def classifier_round(
    v: LatticeValue, lhat: int, inbox: Iterable[LatticeValue], inverted: bool = False
) -> ClassifierOutcome:
    """One Classifier invocation on an already tag-filtered inbox.

    ``inverted`` flips the threshold test; it exists only as a negative control.
    """
    U = list(inbox)
    if not U or all(v <= u or u <= v for u in U):
        return ClassifierOutcome(v, Klass.NONE, True)
    w = join_all(U)
    above = SCALE * height(w) > lhat
    if above != inverted:
        return ClassifierOutcome(w, Klass.MASTER, False)
    return ClassifierOutcome(v, Klass.SLAVE, False)


@dataclass(frozen=True)
class AlphaState:
    pid: int
    n: int
    v: LatticeValue
    label: ScaledLabel
    inst: str
    r: int = 1
    budget: int = 1
    decided: bool = False
    prune: bool = False
    excluded: FrozenSet[int] = frozenset()


def alpha_init(pid: int, n: int, x: LatticeValue, H: int, inst: str, prune: bool = False) -> AlphaState:
    return AlphaState(pid, n, x, ScaledLabel.initial(H), inst, 1, alpha_budget(H), prune=prune)


def alpha_tags(st: AlphaState) -> Tuple:
    return (st.inst, st.r, st.label.lhat)


def alpha_emit(st: AlphaState) -> List[Outgoing]:
    if st.decided:
        return []
    to = None
    if st.excluded:
        to = frozenset(range(1, st.n + 1)) - st.excluded
    return [Outgoing({"v": st.v, "k": st.label.lhat}, alpha_tags(st), to)]


def alpha_absorb(
    st: AlphaState, inbox: Sequence[Envelope], foreign: FrozenSet[int] = frozenset(), inverted: bool = False
) -> Tuple[AlphaState, Optional[LatticeValue], dict]:
    out = classifier_round(st.v, st.label.lhat, [e.payload["v"] for e in inbox], inverted)
    note = {
        "inst": st.inst,
        "r": st.r,
        "k": st.label.lhat,
        "hprime": st.label.hprime,
        "v": st.v,
        "out": out.value,
        "class": out.klass.value,
    }
    excluded = st.excluded | foreign if st.prune else st.excluded
    if out.decided:
        return replace(st, decided=True, excluded=excluded), out.value, note
    label = st.label.promote(st.r) if out.klass is Klass.MASTER else st.label.demote(st.r)
    return replace(st, v=out.value, label=label, r=st.r + 1, excluded=excluded), None, note


class LaAlpha:
    """Lattice agreement with a known height bound ``H``."""

    name = "alpha"

    def __init__(self, inverted: bool = False):
        self.inverted = inverted

    def init(self, pid: int, config: ExperimentConfig) -> AlphaState:
        return alpha_init(pid, config.n, config.inputs[pid], config.H, "alpha", config.prune)

    def emit(self, st: AlphaState, rnd: int) -> List[Outgoing]:
        return alpha_emit(st)

    def listen(self, st: AlphaState, rnd: int) -> Tuple:
        return alpha_tags(st)

    def absorb(self, st: AlphaState, rnd: int, inbox: Sequence[Envelope], foreign: FrozenSet[int]) -> Absorbed:
        st, decision, note = alpha_absorb(st, inbox, foreign, self.inverted)
        return Absorbed(st, decision, (("classify", note),))

    def round_budget(self, config: ExperimentConfig) -> int:
        return alpha_budget(config.H)


def failure_token(pid: int) -> str:
    return f"p{pid}"


@dataclass(frozen=True)
class BetaState:
    pid: int
    n: int
    f: int
    x: LatticeValue
    phase: str = "A"
    values_by_sender: Tuple[Tuple[int, LatticeValue], ...] = ()
    F: LatticeValue = frozenset()
    inner: Optional[AlphaState] = None


class LaBeta:
    """Exchange inputs once, agree on failure sets with alpha (H = f), drop faulty values."""

    name = "beta"
    PHASE_A = ("beta/A", 1)

    def __init__(self, inverted: bool = False):
        self.inverted = inverted

    def init(self, pid: int, config: ExperimentConfig) -> BetaState:
        return BetaState(pid, config.n, config.f, config.inputs[pid])

    def emit(self, st: BetaState, rnd: int) -> List[Outgoing]:
        if st.phase == "A":
            return [Outgoing({"v": st.x}, self.PHASE_A)]
        if st.phase == "B":
            return alpha_emit(st.inner)
        return []

    def listen(self, st: BetaState, rnd: int) -> Tuple:
        return self.PHASE_A if st.phase == "A" else alpha_tags(st.inner)

    def absorb(self, st: BetaState, rnd: int, inbox: Sequence[Envelope], foreign: FrozenSet[int]) -> Absorbed:
        if st.phase == "A":
            got = tuple((e.src, e.payload["v"]) for e in inbox)
            senders = {p for p, _ in got}
            F = frozenset(failure_token(j) for j in range(1, st.n + 1) if j not in senders)
            inner = alpha_init(st.pid, st.n, F, max(st.f, 1), "beta/B")
            st = replace(st, phase="B", values_by_sender=got, F=F, inner=inner)
            return Absorbed(st, None, (("phaseA", {"F": F}),))
        inner, agreed, note = alpha_absorb(st.inner, inbox, foreign, self.inverted)
        notes = [("classify", note)]
        if agreed is None:
            return Absorbed(replace(st, inner=inner), None, tuple(notes))
        kept = [v for p, v in st.values_by_sender if failure_token(p) not in agreed]
        y = join_all(kept)
        notes.append(("phaseB", {"F'": agreed}))
        return Absorbed(replace(st, phase="done", inner=inner), y, tuple(notes))

    def round_budget(self, config: ExperimentConfig) -> int:
        return 1 + alpha_budget(max(config.f, 1))


@dataclass(frozen=True)
class GammaState:
    pid: int
    n: int
    v: LatticeValue
    iteration: int = 0
    inner: Optional[AlphaState] = None

    @property
    def guess(self) -> int:
        return 1 << self.iteration


def gamma_iteration_start(i: int) -> int:
    """Global round at which Phase-B iteration ``i`` begins (iteration i lasts i+1 rounds)."""
    return 2 + sum(j + 1 for j in range(1, i))


def gamma_phase_b_bound(h_psi: int) -> int:
    iterations = max(1, log2_exact(pow2_ceil(h_psi)))
    return sum(i + 1 for i in range(1, iterations + 1))


class LaGamma:
    """Exchange inputs once, then run alpha with guessed heights 2, 4, 8, ...

    Iteration boundaries depend only on the iteration index, so processes stay
    in lockstep without extra communication.
    """

    name = "gamma"
    PHASE_A = ("gamma/A", 1)

    def __init__(self, inverted: bool = False):
        self.inverted = inverted

    def init(self, pid: int, config: ExperimentConfig) -> GammaState:
        return GammaState(pid, config.n, config.inputs[pid])

    def _fresh(self, st: GammaState, v: LatticeValue, i: int) -> GammaState:
        return replace(st, v=v, iteration=i, inner=alpha_init(st.pid, st.n, v, 1 << i, f"gamma/{i}"))

    def emit(self, st: GammaState, rnd: int) -> List[Outgoing]:
        if st.inner is None:
            return [Outgoing({"v": st.v}, self.PHASE_A)]
        return alpha_emit(st.inner)

    def listen(self, st: GammaState, rnd: int) -> Tuple:
        return self.PHASE_A if st.inner is None else alpha_tags(st.inner)

    def absorb(self, st: GammaState, rnd: int, inbox: Sequence[Envelope], foreign: FrozenSet[int]) -> Absorbed:
        if st.inner is None:
            w = join_all([st.v] + [e.payload["v"] for e in inbox])
            return Absorbed(self._fresh(st, w, 1), None, (("phaseA", {"w": w}),))
        inner, decision, note = alpha_absorb(st.inner, inbox, foreign, self.inverted)
        notes = (("classify", note),)
        if decision is not None:
            return Absorbed(replace(st, v=decision, inner=inner), decision, notes)
        if inner.r > inner.budget:
            return Absorbed(self._fresh(st, inner.v, st.iteration + 1), None, notes)
        return Absorbed(replace(st, v=inner.v, inner=inner), None, notes)

    def round_budget(self, config: ExperimentConfig) -> int:
        top = height(join_all(config.inputs.values()))
        m = log2_exact(pow2_ceil(max(config.n, top))) + 1
        return 1 + sum(i + 1 for i in range(1, m + 1))


def make_sync_protocol(config: ExperimentConfig):
    inverted = config.mutant == "inverted_classifier"
    return {"alpha": LaAlpha, "beta": LaBeta, "gamma": LaGamma}[config.algorithm](inverted=inverted)
