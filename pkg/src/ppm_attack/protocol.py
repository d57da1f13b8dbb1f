"""Two-party synchronization of permutation parity machines.

Each inner round publishes a random input matrix and index matrix.  Parties A
and B compute their outputs; when the outputs agree, each stores the state of
its first hidden unit in a private buffer.  Once the buffers hold G bits an
outer round ends and every buffer replaces its owner's state vector.

Observers (the attacker, a referee) see the public transcript only: they get
every :class:`RoundRecord` through ``on_round`` and a notification through
``on_outer_commit`` when an outer round ends.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from ppm_attack.core import PpmConfig, evaluate

CAP_REACHED = "cap_reached"
ANTIPARALLEL = "antiparallel"


class ProtocolError(RuntimeError):
    """Protocol steps executed out of order (e.g. a missed or premature commit)."""


class ObserverError(RuntimeError):
    """An observer raised while consuming the transcript."""


@dataclass
class Party:
    state: np.ndarray
    label: str = "A"
    buffer: list = field(default_factory=list)

    @property
    def G(self) -> int:
        return self.state.shape[0]


@dataclass(frozen=True)
class RoundInput:
    """Public data of one inner round. ``pi`` is zero-based."""

    x: np.ndarray
    pi: np.ndarray
    outer_index: int
    inner_index: int


@dataclass(frozen=True)
class RoundRecord:
    input: RoundInput
    tau_a: int
    tau_b: int
    agreed: bool
    buffer_len_after: int


@dataclass(frozen=True)
class RunOutcome:
    t_s: Optional[int]
    aborted: bool
    abort_reason: Optional[str]
    total_inner_rounds: int


class RoundObserver(Protocol):
    def on_round(self, record: RoundRecord) -> None: ...

    def on_outer_commit(self, outer_index: int) -> None: ...


def init_party(config: PpmConfig, rng: np.random.Generator, label: str = "A") -> Party:
    state = rng.integers(0, 2, size=config.G, dtype=np.uint8)
    return Party(state=state, label=label)


def generate_round(config: PpmConfig, rng: np.random.Generator, outer_index: int, inner_index: int) -> RoundInput:
    # index entries are drawn with replacement; duplicates are legal
    pi = rng.integers(0, config.G, size=config.shape, dtype=np.int64)
    x = rng.integers(0, 2, size=config.shape, dtype=np.uint8)
    return RoundInput(x=x, pi=pi, outer_index=outer_index, inner_index=inner_index)


def inner_round(a: Party, b: Party, round_input: RoundInput, config: PpmConfig) -> RoundRecord:
    if len(a.buffer) >= config.G or len(b.buffer) >= config.G:
        raise ProtocolError("buffer already holds G bits; the outer round must be committed first")
    ev_a = evaluate(a.state, round_input.x, round_input.pi, config)
    ev_b = evaluate(b.state, round_input.x, round_input.pi, config)
    agreed = ev_a.output == ev_b.output
    if agreed:
        a.buffer.append(int(ev_a.hidden_states[0]))
        b.buffer.append(int(ev_b.hidden_states[0]))
    return RoundRecord(
        input=round_input,
        tau_a=ev_a.output,
        tau_b=ev_b.output,
        agreed=agreed,
        buffer_len_after=len(a.buffer),
    )


def outer_round_commit(p: Party) -> Party:
    """Replace the state with the full buffer, in arrival order."""
    if len(p.buffer) != p.G:
        raise ProtocolError(
            f"cannot commit party {p.label}: buffer holds {len(p.buffer)} of {p.G} bits"
        )
    p.state = np.array(p.buffer, dtype=np.uint8)
    p.buffer = []
    return p


def is_synchronized(a: Party, b: Party) -> bool:
    return bool(np.array_equal(a.state, b.state))


def is_antiparallel(a: Party, b: Party) -> bool:
    return bool(np.array_equal(a.state, 1 - b.state))


class _CallableObserver:
    def __init__(self, fn: Callable[[RoundRecord], None]):
        self._fn = fn

    def on_round(self, record):
        self._fn(record)

    def on_outer_commit(self, outer_index):
        pass


def _as_observers(observer) -> list:
    if observer is None:
        return []
    if isinstance(observer, (list, tuple)):
        return [o for ob in observer for o in _as_observers(ob)]
    if not hasattr(observer, "on_round") and callable(observer):
        return [_CallableObserver(observer)]
    return [observer]


class KeyExchange:
    """Drives one synchronization run between parties A and B.

    The random stream is consumed in a fixed order (A's state, B's state, then
    the inner rounds), so a seed fully determines the transcript.
    """

    def __init__(self, config: PpmConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.a = init_party(config, rng, "A")
        self.b = init_party(config, rng, "B")
        self.outer_index = 1
        self.inner_index = 0
        self.total_inner_rounds = 0

    def step(self) -> RoundRecord:
        self.inner_index += 1
        self.total_inner_rounds += 1
        round_input = generate_round(self.config, self.rng, self.outer_index, self.inner_index)
        return inner_round(self.a, self.b, round_input, self.config)

    def commit(self) -> None:
        outer_round_commit(self.a)
        outer_round_commit(self.b)
        self.outer_index += 1
        self.inner_index = 0

    def run(self, max_outer: int = 30, observer=None, stop_on_antiparallel: bool = True) -> RunOutcome:
        if max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        observers = _as_observers(observer)
        G = self.config.G
        # with odd K, complementary states never agree, so no commit would ever happen
        if stop_on_antiparallel and is_antiparallel(self.a, self.b):
            return RunOutcome(None, True, ANTIPARALLEL, self.total_inner_rounds)
        while True:
            record = self.step()
            _notify(observers, "on_round", record)
            if record.buffer_len_after < G:
                continue
            completed = self.outer_index
            self.commit()
            _notify(observers, "on_outer_commit", completed)
            if is_synchronized(self.a, self.b):
                return RunOutcome(completed, False, None, self.total_inner_rounds)
            if stop_on_antiparallel and is_antiparallel(self.a, self.b):
                return RunOutcome(None, True, ANTIPARALLEL, self.total_inner_rounds)
            if completed >= max_outer:
                return RunOutcome(None, True, CAP_REACHED, self.total_inner_rounds)


def _notify(observers, method: str, arg) -> None:
    for ob in observers:
        try:
            getattr(ob, method)(arg)
        except Exception as exc:
            raise ObserverError(f"observer {type(ob).__name__}.{method} failed: {exc}") from exc


def run_key_exchange(config: PpmConfig, rng: np.random.Generator, max_outer: int = 30, observer=None) -> RunOutcome:
    return KeyExchange(config, rng).run(max_outer, observer)


def transcript_header(config: PpmConfig) -> list[str]:
    cells = [f"{i}_{j}" for i in range(1, config.N + 1) for j in range(1, config.K + 1)]
    return (
        ["outer_index", "inner_index", "tau_a", "tau_b", "agreed"]
        + [f"pi_{c}" for c in cells]
        + [f"x_{c}" for c in cells]
    )


def transcript_row(record: RoundRecord) -> list:
    inp = record.input
    return (
        [inp.outer_index, inp.inner_index, record.tau_a, record.tau_b, "true" if record.agreed else "false"]
        + (inp.pi.ravel() + 1).tolist()
        + inp.x.ravel().tolist()
    )


class TranscriptWriter:
    """Observer that streams the transcript to a CSV file."""

    def __init__(self, fh, config: PpmConfig):
        self._writer = csv.writer(fh, lineterminator="\n")
        self._writer.writerow(transcript_header(config))

    def on_round(self, record: RoundRecord) -> None:
        self._writer.writerow(transcript_row(record))

    def on_outer_commit(self, outer_index: int) -> None:
        pass


def read_transcript(path, config: PpmConfig) -> list[RoundRecord]:
    """Parse a transcript file back into records (buffer lengths are recomputed)."""
    nk = config.N * config.K
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != transcript_header(config):
            raise ValueError(f"{path}: transcript header does not match N={config.N}, K={config.K}")
        buffered = 0
        for row in reader:
            outer, inner, tau_a, tau_b = (int(v) for v in row[:4])
            agreed = row[4] == "true"
            pi = np.array([int(v) - 1 for v in row[5 : 5 + nk]], dtype=np.int64).reshape(config.shape)
            x = np.array([int(v) for v in row[5 + nk : 5 + 2 * nk]], dtype=np.uint8).reshape(config.shape)
            if inner == 1:
                buffered = 0
            buffered += agreed
            records.append(RoundRecord(RoundInput(x, pi, outer, inner), tau_a, tau_b, agreed, buffered))
    return records
