import io
import itertools
import warnings

import numpy as np
import pytest
from scipy import stats

from ppm_attack.core import PpmConfig, evaluate
from ppm_attack.protocol import (
    ANTIPARALLEL,
    CAP_REACHED,
    KeyExchange,
    ObserverError,
    Party,
    ProtocolError,
    RoundInput,
    TranscriptWriter,
    generate_round,
    init_party,
    inner_round,
    is_antiparallel,
    is_synchronized,
    outer_round_commit,
    read_transcript,
    run_key_exchange,
)


def cfg(n, k, g):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return PpmConfig(n, k, g)


def rng(seed=0):
    return np.random.default_rng(seed)


class Recorder:
    def __init__(self):
        self.records = []
        self.commits = []

    def on_round(self, record):
        self.records.append(record)

    def on_outer_commit(self, outer_index):
        self.commits.append((outer_index, len(self.records)))


class TestInitParty:
    def test_deterministic(self):
        c = cfg(2, 2, 4)
        assert init_party(c, rng(3)).state.tolist() == init_party(c, rng(3)).state.tolist()

    def test_single_bit(self):
        p = init_party(cfg(1, 1, 1), rng(1))
        assert p.state.shape == (1,) and p.state[0] in (0, 1) and p.buffer == []

    def test_independent_parties(self):
        # agreement per bit between independently drawn parties is Bernoulli(1/2)
        c = cfg(1, 1, 100)
        g = rng(9)
        agree = 0
        draws = 0
        for _ in range(200):
            a, b = init_party(c, g), init_party(c, g)
            agree += int((a.state == b.state).sum())
            draws += c.G
        chi2 = (agree - draws / 2) ** 2 / (draws / 2) + ((draws - agree) - draws / 2) ** 2 / (draws / 2)
        assert stats.chi2.sf(chi2, df=1) > 1e-4


class TestGenerateRound:
    def test_uniform_marginals(self):
        c = cfg(2, 2, 8)
        g = rng(17)
        draws = 100_000
        pi_counts = np.zeros(8)
        x_ones = 0
        for _ in range(draws):
            r = generate_round(c, g, 1, 1)
            pi_counts[r.pi[1, 0]] += 1
            x_ones += int(r.x[0, 1])
        assert r.pi.min() >= 0 and r.pi.max() < 8
        sigma = np.sqrt(draws * (1 / 8) * (7 / 8))
        assert np.all(np.abs(pi_counts - draws / 8) < 4 * sigma)
        assert abs(x_ones - draws / 2) < 4 * np.sqrt(draws / 4)

    def test_reproducible(self):
        c = cfg(3, 2, 32)
        a = [generate_round(c, g, 1, i) for g in [rng(4)] for i in range(5)]
        b = [generate_round(c, g, 1, i) for g in [rng(4)] for i in range(5)]
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.x, rb.x) and np.array_equal(ra.pi, rb.pi)


class TestInnerRound:
    def test_identical_machines_always_agree(self):
        c = cfg(3, 2, 16)
        g = rng(2)
        a = init_party(c, g)
        b = Party(a.state.copy(), "B")
        for i in range(16):
            rec = inner_round(a, b, generate_round(c, g, 1, i + 1), c)
            assert rec.agreed and rec.tau_a == rec.tau_b
        assert a.buffer == b.buffer and len(a.buffer) == 16

    @pytest.mark.parametrize("n", [1, 3])
    def test_complement_states_odd_n(self, n):
        c = cfg(n, 2, 2 * n)
        pi = np.arange(2 * n).reshape(n, 2)
        for s in itertools.product((0, 1), repeat=2 * n):
            for xs in itertools.product((0, 1), repeat=2 * n):
                a = Party(np.array(s, dtype=np.uint8), "A")
                b = Party(1 - a.state, "B")
                x = np.array(xs, dtype=np.uint8).reshape(n, 2)
                rec = inner_round(a, b, RoundInput(x, pi, 1, 1), c)
                ea, eb = evaluate(a.state, x, pi, c), evaluate(b.state, x, pi, c)
                assert (rec.tau_a, rec.tau_b) == (ea.output, eb.output)
                # with K = 2 and odd N both hidden states flip, so outputs agree
                assert rec.agreed
                assert a.buffer == [int(ea.hidden_states[0])]
                assert b.buffer == [1 - a.buffer[0]]

    def test_disagreement_leaves_buffers(self):
        c = cfg(1, 1, 2)
        a = Party(np.array([0, 0], dtype=np.uint8), "A")
        b = Party(np.array([1, 1], dtype=np.uint8), "B")
        rec = inner_round(a, b, RoundInput(np.array([[0]], np.uint8), np.array([[0]]), 1, 1), c)
        assert not rec.agreed and rec.tau_a != rec.tau_b
        assert a.buffer == [] and b.buffer == [] and rec.buffer_len_after == 0

    def test_full_buffer_rejected(self):
        c = cfg(1, 1, 2)
        a = Party(np.zeros(2, np.uint8), "A", [0, 0])
        b = Party(np.zeros(2, np.uint8), "B", [0, 0])
        with pytest.raises(ProtocolError):
            inner_round(a, b, RoundInput(np.zeros((1, 1), np.uint8), np.zeros((1, 1), int), 1, 1), c)


class TestCommit:
    def test_substitution(self):
        p = outer_round_commit(Party(np.zeros(4, np.uint8), "A", [1, 0, 1, 1]))
        assert p.state.tolist() == [1, 0, 1, 1] and p.buffer == []

    def test_single_bit(self):
        p = Party(np.array([0], np.uint8), "A", [1])
        assert outer_round_commit(p).state.tolist() == [1]

    def test_premature(self):
        with pytest.raises(ProtocolError):
            outer_round_commit(Party(np.zeros(4, np.uint8), "A", [1, 0, 1]))


class TestStateRelations:
    def p(self, bits):
        return Party(np.array(bits, dtype=np.uint8))

    def test_synchronized(self):
        assert is_synchronized(self.p([1, 0, 1]), self.p([1, 0, 1]))
        assert not is_synchronized(self.p([1, 0, 1]), self.p([1, 1, 1]))
        assert not is_synchronized(self.p([1, 0]), self.p([0, 1]))

    def test_antiparallel(self):
        assert is_antiparallel(self.p([1, 0]), self.p([0, 1]))
        assert not is_antiparallel(self.p([1, 0]), self.p([1, 0]))
        assert not is_antiparallel(self.p([0, 1]), self.p([1, 1]))


class TestRun:
    def test_identical_initial_states_sync_after_one_round(self):
        c = cfg(4, 2, 64)
        ex = KeyExchange(c, rng(8))
        ex.b.state = ex.a.state.copy()
        out = ex.run(30)
        assert out.t_s == 1 and not out.aborted and out.total_inner_rounds == 64

    def test_transcript_invariants(self):
        c = cfg(4, 2, 32)
        rec = Recorder()
        out = run_key_exchange(c, rng(21), 30, rec)
        assert out.t_s is not None
        assert len(rec.records) == out.total_inner_rounds
        assert [o for o, _ in rec.commits] == list(range(1, out.t_s + 1))
        prev = 0
        for r in rec.records:
            assert r.agreed == (r.tau_a == r.tau_b)
            expected = prev + 1 if r.agreed else prev
            assert r.buffer_len_after == expected
            prev = 0 if r.buffer_len_after == c.G else r.buffer_len_after
        for outer in range(1, out.t_s + 1):
            rounds = [r for r in rec.records if r.input.outer_index == outer]
            assert sum(r.agreed for r in rounds) == c.G
            assert rounds[-1].buffer_len_after == c.G
            assert [r.input.inner_index for r in rounds] == list(range(1, len(rounds) + 1))

    def test_synchronization_is_absorbing(self):
        c = cfg(4, 2, 32)
        ex = KeyExchange(c, rng(5))
        out = ex.run(30)
        assert out.t_s is not None
        for _ in range(3):
            while len(ex.a.buffer) < c.G:
                rec = ex.step()
                assert rec.agreed
            ex.commit()
            assert is_synchronized(ex.a, ex.b)

    def test_replay_determinism(self):
        c = cfg(2, 2, 16)

        def transcript(seed):
            fh = io.StringIO()
            out = run_key_exchange(c, rng(seed), 30, TranscriptWriter(fh, c))
            return out, fh.getvalue()

        assert transcript(13) == transcript(13)
        assert transcript(13)[1] != transcript(14)[1]

    def test_cap_reached(self):
        c = cfg(4, 2, 128)
        out = run_key_exchange(c, rng(0), 1)
        assert out.aborted and out.abort_reason == CAP_REACHED and out.t_s is None

    def test_antiparallel_abort(self):
        c = cfg(3, 2, 64)
        ex = KeyExchange(c, rng(6))
        ex.b.state = 1 - ex.a.state
        out = ex.run(30)
        assert out.aborted and out.abort_reason == ANTIPARALLEL and out.total_inner_rounds == 0

    def test_antiparallel_is_stable_for_odd_n(self):
        c = cfg(3, 2, 64)
        ex = KeyExchange(c, rng(6))
        ex.b.state = 1 - ex.a.state
        out = ex.run(3, stop_on_antiparallel=False)
        assert out.abort_reason == CAP_REACHED and out.total_inner_rounds == 3 * 64
        assert is_antiparallel(ex.a, ex.b)

    def test_observer_failure_propagates(self):
        def boom(record):
            raise KeyError("sink closed")

        with pytest.raises(ObserverError, match="sink closed"):
            run_key_exchange(cfg(2, 2, 16), rng(0), 5, boom)

    def test_rejects_bad_cap(self):
        with pytest.raises(ValueError):
            run_key_exchange(cfg(2, 2, 16), rng(0), 0)


def test_transcript_round_trip(tmp_path):
    c = cfg(3, 2, 24)
    path = tmp_path / "t.csv"
    rec = Recorder()
    with open(path, "w", newline="") as fh:
        run_key_exchange(c, rng(31), 30, [TranscriptWriter(fh, c), rec])
    lines = path.read_text().splitlines()
    assert lines[0].startswith("outer_index,inner_index,tau_a,tau_b,agreed,pi_1_1,pi_1_2,pi_2_1")
    assert len(lines) == len(rec.records) + 1
    first = lines[1].split(",")
    pi = rec.records[0].input.pi
    # one-based, row-major
    assert [int(v) for v in first[5:11]] == (pi.ravel() + 1).tolist()
    back = read_transcript(path, c)
    for a, b in zip(back, rec.records):
        assert np.array_equal(a.input.pi, b.input.pi) and np.array_equal(a.input.x, b.input.x)
        assert (a.tau_a, a.tau_b, a.agreed, a.buffer_len_after) == (b.tau_a, b.tau_b, b.agreed, b.buffer_len_after)


def test_initial_antiparallel_with_odd_k_aborts_immediately():
    # outputs of complementary machines always differ when K is odd
    c = cfg(1, 1, 1)
    ex = KeyExchange(c, rng(0))
    ex.b.state = 1 - ex.a.state
    out = ex.run(30)
    assert out.abort_reason == ANTIPARALLEL and out.total_inner_rounds == 0
