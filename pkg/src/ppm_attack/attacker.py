"""Probabilistic attack on PPM key exchange.

The attacker keeps a belief vector ``p`` with ``p[i] ~ P(s_A[i] = 0 | data)``.
In every inner round it draws candidate weights from the belief, keeps those
that reproduce A's public output, and replaces the belief of every selected
bit by its frequency of zeros among the kept candidates.  At the end of an
outer round the belief about A's next state (the buffered first-unit states)
is computed analytically from a binomial approximation of the local field.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from ppm_attack.core import PpmConfig, batch_outputs
from ppm_attack.protocol import ProtocolError, RoundInput, RoundRecord

GLOBAL = "global"
SELECTED = "selected"

_BATCH_MIN = 64
_BATCH_MAX = 1 << 16
# free bits up to this count are enumerated exactly when checking if A's output is reachable
_ENUMERATE_LIMIT = 12


@dataclass(frozen=True)
class AttackerConfig:
    m_samples: int = 1000
    max_attempts: int = 1_000_000
    reset_scope: str = GLOBAL
    # skip hopeless sampling when A's output is provably unreachable under the belief
    shortcuts: bool = True

    def __post_init__(self):
        if self.m_samples < 1:
            raise ValueError("m_samples must be at least 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.reset_scope not in (GLOBAL, SELECTED):
            raise ValueError(f"reset_scope must be {GLOBAL!r} or {SELECTED!r}")


@dataclass
class BreakReport:
    t_b: Optional[int] = None
    guessed: Optional[np.ndarray] = None


@dataclass
class AttackerState:
    belief: np.ndarray
    agreed_rounds: list = field(default_factory=list)
    resets_performed: int = 0
    report: BreakReport = field(default_factory=BreakReport)


@dataclass(frozen=True)
class SampleSet:
    """Accepted candidates restricted to the distinct indices of one round.

    ``bits[m, u]`` is the value of state bit ``indices[u]`` in candidate m.
    """

    indices: np.ndarray
    bits: np.ndarray
    attempts: int


def init_belief(G: int) -> np.ndarray:
    if G < 1:
        raise ValueError("G must be at least 1")
    return np.full(G, 0.5)


def _draw(p: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    # bit is 0 with probability p
    return (rng.random((size, p.shape[0])) >= p).astype(np.uint8)


def sample_candidate(belief, pi, rng: np.random.Generator) -> dict[int, int]:
    """Draw one bit per distinct index of ``pi``; returns ``{index: bit}``."""
    indices = np.unique(np.asarray(pi).ravel())
    bits = _draw(np.asarray(belief)[indices], 1, rng)[0]
    return dict(zip(indices.tolist(), bits.tolist()))


def _output_reachable(p_w: np.ndarray, x: np.ndarray, tau: int) -> bool:
    """Whether some weights with nonzero probability could produce ``tau``.

    Treats every uncertain weight entry independently, which can only enlarge
    the reachable set, so a False answer is always correct.
    """
    n = x.shape[0]
    certain_one = ((p_w == 1.0) & (x == 1)) | ((p_w == 0.0) & (x == 0))
    free = (p_w > 0.0) & (p_w < 1.0)
    low = certain_one.sum(axis=0)
    high = low + free.sum(axis=0)
    can_be_0 = 2 * low <= n
    can_be_1 = 2 * high > n
    if (can_be_0 & can_be_1).any():
        return True
    return int(np.count_nonzero(can_be_1) & 1) == tau


def _output_reachable_exact(p: np.ndarray, inverse: np.ndarray, x: np.ndarray, tau: int) -> bool:
    free = np.flatnonzero((p > 0.0) & (p < 1.0))
    base = (p == 0.0).astype(np.uint8)
    combos = np.array(list(itertools.product((0, 1), repeat=free.size)), dtype=np.uint8)
    cands = np.repeat(base[None, :], combos.shape[0], axis=0)
    cands[:, free] = combos
    w = cands[:, inverse].reshape((-1,) + x.shape)
    return bool((batch_outputs(w, x) == tau).any())


def collect_valid_samples(
    belief,
    round_input: RoundInput,
    tau_a: int,
    cfg: AttackerConfig,
    config: PpmConfig,
    rng: np.random.Generator,
) -> Optional[SampleSet]:
    """Rejection-sample ``cfg.m_samples`` candidates whose output equals ``tau_a``.

    Returns None when ``cfg.max_attempts`` consecutive candidates were
    rejected, which tells the caller to reset part of the belief.  Candidates
    are drawn in batches but consumed strictly in order, so the result is the
    same as a one-at-a-time loop over the same random numbers.
    """
    belief = np.asarray(belief)
    x = round_input.x
    indices, inverse = np.unique(round_input.pi.ravel(), return_inverse=True)
    p = belief[indices]
    M = cfg.m_samples

    if cfg.shortcuts:
        p_w = p[inverse].reshape(x.shape)
        if not _output_reachable(p_w, x, tau_a):
            return None
        n_free = int(np.count_nonzero((p > 0.0) & (p < 1.0)))
        if n_free == 0:
            # candidate is deterministic and reachable, so every draw is accepted
            bits = np.repeat((p == 0.0).astype(np.uint8)[None, :], M, axis=0)
            return SampleSet(indices, bits, M)
        if n_free <= _ENUMERATE_LIMIT and indices.size < inverse.size:
            if not _output_reachable_exact(p, inverse, x, tau_a):
                return None

    chunks = []
    n_acc = 0
    fails = 0
    attempts = 0
    while n_acc < M:
        rate = (n_acc + 1) / (attempts + 2)
        batch = int(min(max((M - n_acc) / rate * 1.1 + 32, _BATCH_MIN), _BATCH_MAX))
        bits = _draw(p, batch, rng)
        w = bits[:, inverse].reshape((batch,) + x.shape)
        pos = np.flatnonzero(batch_outputs(w, x) == tau_a)[: M - n_acc]
        if pos.size == 0:
            fails += batch
            attempts += batch
            if fails >= cfg.max_attempts:
                return None
            continue
        gaps = np.diff(pos, prepend=-1) - 1
        gaps[0] += fails
        if gaps.max() >= cfg.max_attempts:
            return None
        chunks.append(bits[pos])
        n_acc += pos.size
        if n_acc == M:
            attempts += int(pos[-1]) + 1
            break
        fails = batch - 1 - int(pos[-1])
        attempts += batch
        if fails >= cfg.max_attempts:
            return None
    return SampleSet(indices, np.concatenate(chunks), attempts)


def update_marginals(belief, samples: SampleSet, pi=None) -> np.ndarray:
    """Set each selected entry to the fraction of samples in which the bit is 0."""
    if samples.bits.shape[0] == 0:
        raise ValueError("cannot update from an empty sample set")
    if pi is not None:
        missing = np.setdiff1d(np.asarray(pi).ravel(), samples.indices)
        if missing.size:
            raise ValueError(f"samples do not cover selected indices {missing.tolist()}")
    new = np.array(belief, dtype=float)
    new[samples.indices] = 1.0 - samples.bits.mean(axis=0)
    return new


def reset_most_collapsed(belief, candidates=None) -> tuple[np.ndarray, int]:
    """Reset the entry farthest from 1/2 to 1/2; ties go to the lowest index.

    ``candidates`` restricts the search to the given indices.
    """
    new = np.array(belief, dtype=float)
    if candidates is None:
        i = int(np.argmax(np.abs(new - 0.5)))
    else:
        candidates = np.unique(np.asarray(candidates).ravel())
        i = int(candidates[np.argmax(np.abs(new[candidates] - 0.5))])
    new[i] = 0.5
    return new, i


def most_probable_state(belief) -> np.ndarray:
    return (np.asarray(belief) <= 0.5).astype(np.uint8)


def mean_field_prob(belief, x_col, pi_col) -> float:
    """Average probability that an entry of the vector local field is 1."""
    p = np.asarray(belief)[np.asarray(pi_col)]
    x = np.asarray(x_col)
    return float(np.mean(np.where(x == 1, p, 1.0 - p)))


def hidden_zero_prob(q, N: int):
    """P(hidden unit inactive) when the local field is Binomial(N, q).

    Sums the binomial terms for n = 0 .. floor(N/2) in log space.  Accepts a
    scalar or an array of ``q``.
    """
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr < 0.0) | (q_arr > 1.0)) or np.any(np.isnan(q_arr)):
        raise ValueError("q must lie in [0, 1]")
    n = np.arange(N // 2 + 1, dtype=float)
    log_comb = gammaln(N + 1.0) - gammaln(n + 1.0) - gammaln(N - n + 1.0)
    qe = q_arr[..., None]
    with np.errstate(divide="ignore"):
        log_terms = log_comb + xlogy(n, qe) + xlog1py(N - n, -qe)
    total = np.clip(np.exp(log_terms).sum(axis=-1), 0.0, 1.0)
    return float(total) if total.ndim == 0 else total


def transfer_outer(belief_minus, agreed_rounds, config: PpmConfig) -> np.ndarray:
    """Belief about the next state vector, one entry per agreeing inner round."""
    if len(agreed_rounds) != config.G:
        raise ProtocolError(
            f"transfer needs {config.G} agreeing rounds, got {len(agreed_rounds)}"
        )
    p = np.asarray(belief_minus)
    x = np.stack([r.x[:, 0] for r in agreed_rounds])
    pi = np.stack([r.pi[:, 0] for r in agreed_rounds])
    pw = p[pi]
    q = np.where(x == 1, pw, 1.0 - pw).mean(axis=1)
    return hidden_zero_prob(q, config.N)


def process_round(
    state: AttackerState,
    record: RoundRecord,
    cfg: AttackerConfig,
    config: PpmConfig,
    rng: np.random.Generator,
) -> AttackerState:
    """Condition the belief on one inner round, resetting entries as needed."""
    round_input = record.input
    while True:
        samples = collect_valid_samples(state.belief, round_input, record.tau_a, cfg, config, rng)
        if samples is not None:
            break
        scope = round_input.pi if cfg.reset_scope == SELECTED else None
        if scope is None:
            neutral = bool(np.all(state.belief == 0.5))
        else:
            neutral = bool(np.all(state.belief[round_input.pi] == 0.5))
        if neutral:
            raise RuntimeError(
                f"round {round_input.outer_index}.{round_input.inner_index}: "
                "observed output is unreachable even from a neutral belief"
            )
        state.belief, _ = reset_most_collapsed(state.belief, scope)
        state.resets_performed += 1
    state.belief = update_marginals(state.belief, samples)
    if record.agreed:
        state.agreed_rounds.append(round_input)
    return state


def end_outer_round(state: AttackerState, config: PpmConfig) -> AttackerState:
    state.belief = transfer_outer(state.belief, state.agreed_rounds, config)
    state.agreed_rounds = []
    return state


def check_break(state: AttackerState, true_state, outer_index: int) -> BreakReport:
    """Record the break time the first time the thresholded belief equals ``true_state``."""
    if state.report.t_b is None:
        guess = most_probable_state(state.belief)
        if np.array_equal(guess, true_state):
            state.report = BreakReport(t_b=outer_index, guessed=guess)
    return state.report


class Attacker:
    """Transcript observer running the attack.

    It only consumes public records; break detection is done by a referee
    that also knows A's state (see :func:`check_break`).
    """

    def __init__(self, config: PpmConfig, cfg: AttackerConfig, rng: np.random.Generator, belief_log=None):
        self.config = config
        self.cfg = cfg
        self.rng = rng
        self.state = AttackerState(init_belief(config.G))
        self.belief_log = belief_log
        self.active = True

    def on_round(self, record: RoundRecord) -> None:
        if self.active:
            process_round(self.state, record, self.cfg, self.config, self.rng)

    def on_outer_commit(self, outer_index: int) -> None:
        if not self.active:
            return
        end_outer_round(self.state, self.config)
        if self.belief_log is not None:
            self.belief_log.write(outer_index, self.state.belief)


class BeliefLogWriter:
    """One line per outer-round boundary: outer index then the G probabilities."""

    def __init__(self, fh):
        self._fh = fh

    def write(self, outer_index: int, belief) -> None:
        self._fh.write(",".join([str(outer_index)] + [format(float(v), ".12g") for v in belief]) + "\n")
