"""Trials, seeded ensembles, statistics and CSV output.

Seeds
-----
A trial with seed ``s`` splits its stream with
``np.random.SeedSequence(s).spawn(2)``: the first child drives the key
exchange, the second the attacker.  The exchange therefore produces the same
transcript whether or not an attacker listens.

Ensemble member ``i`` of base seed ``b`` gets the 64-bit seed
``SeedSequence(b, spawn_key=(i,)).generate_state(1, np.uint64)[0]``.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ppm_attack.attacker import Attacker, AttackerConfig, check_break
from ppm_attack.core import ConfigurationError, PpmConfig
from ppm_attack.protocol import KeyExchange

AT_OR_BEFORE = "at-or-before"
STRICTLY_BEFORE = "strictly-before"
SUCCESS_RULES = (AT_OR_BEFORE, STRICTLY_BEFORE)

RESULT_COLUMNS = [
    "run_id", "N", "K", "G", "M", "max_outer", "seed", "t_s", "t_b",
    "success", "aborted", "abort_reason", "inner_rounds_total",
]


@dataclass(frozen=True)
class TrialConfig:
    ppm: PpmConfig
    attack: AttackerConfig = field(default_factory=AttackerConfig)
    max_outer: int = 30
    seed: int = 0
    success_rule: str = AT_OR_BEFORE

    def __post_init__(self):
        if self.max_outer < 1:
            raise ConfigurationError("max_outer must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.success_rule not in SUCCESS_RULES:
            raise ConfigurationError(f"success_rule must be one of {SUCCESS_RULES}")


@dataclass(frozen=True)
class TrialResult:
    t_s: Optional[int]
    t_b: Optional[int]
    success: bool
    aborted: bool
    abort_reason: Optional[str]
    seed: int
    elapsed: float = 0.0
    inner_rounds_total: int = 0
    run_id: int = 0
    N: int = 0
    K: int = 0
    G: int = 0
    M: int = 0
    max_outer: int = 0

    @property
    def discarded(self) -> bool:
        return self.aborted and self.t_b is None


@dataclass(frozen=True)
class EnsembleStats:
    n_runs: int
    n_discarded: int
    mean_ts: float
    std_ts: float
    mean_tb: float
    std_tb: float
    p_success: float


@dataclass(frozen=True)
class RegressionFit:
    a: float
    b: float
    stderr_a: float
    stderr_b: float


def trial_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    exchange_ss, attack_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(exchange_ss), np.random.default_rng(attack_ss)


def trial_seed(base_seed: int, trial_index: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(trial_index,))
    return int(ss.generate_state(1, np.uint64)[0])


def is_success(t_s: Optional[int], t_b: Optional[int], rule: str = AT_OR_BEFORE) -> bool:
    if t_b is None:
        return False
    if t_s is None:
        return True
    return t_b <= t_s if rule == AT_OR_BEFORE else t_b < t_s


class _Referee:
    """Omniscient observer: feeds the attacker, then compares its guess with A's state."""

    def __init__(self, exchange: KeyExchange, attacker: Attacker):
        self.exchange = exchange
        self.attacker = attacker

    def on_round(self, record):
        if not self.attacker.active:
            return
        self.attacker.on_round(record)
        check_break(self.attacker.state, self.exchange.a.state, record.input.outer_index)

    def on_outer_commit(self, outer_index):
        if not self.attacker.active:
            return
        self.attacker.on_outer_commit(outer_index)
        # the transferred belief is about the state A holds after this commit
        report = check_break(self.attacker.state, self.exchange.a.state, outer_index)
        if report.t_b is not None:
            self.attacker.active = False


def run_trial(cfg: TrialConfig, transcript=None, belief_log=None, run_id: int = 0) -> TrialResult:
    """Run the key exchange with the attacker listening.

    The attacker stops working once it has broken A's state, since success is
    then settled; the exchange continues until synchronization or abort.
    """
    start = time.perf_counter()
    exchange_rng, attack_rng = trial_streams(cfg.seed)
    exchange = KeyExchange(cfg.ppm, exchange_rng)
    attacker = Attacker(cfg.ppm, cfg.attack, attack_rng, belief_log=belief_log)
    observers = [_Referee(exchange, attacker)]
    if transcript is not None:
        observers.append(transcript)
    outcome = exchange.run(cfg.max_outer, observers)
    t_b = attacker.state.report.t_b
    return TrialResult(
        t_s=outcome.t_s,
        t_b=t_b,
        success=is_success(outcome.t_s, t_b, cfg.success_rule),
        aborted=outcome.aborted,
        abort_reason=outcome.abort_reason,
        seed=cfg.seed,
        elapsed=time.perf_counter() - start,
        inner_rounds_total=outcome.total_inner_rounds,
        run_id=run_id,
        N=cfg.ppm.N,
        K=cfg.ppm.K,
        G=cfg.ppm.G,
        M=cfg.attack.m_samples,
        max_outer=cfg.max_outer,
    )


def _run_indexed(args):
    cfg, run_id = args
    return run_trial(cfg, run_id=run_id)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else math.nan
    return float(arr.mean()), std


def summarize(results: Sequence[TrialResult]) -> EnsembleStats:
    """Statistics over non-discarded runs.

    A run is discarded when the exchange was aborted and the attacker had not
    broken A by then.  Time means use the runs in which the event happened.
    """
    kept = [r for r in results if not r.discarded]
    mean_ts, std_ts = _mean_std([r.t_s for r in kept if r.t_s is not None])
    mean_tb, std_tb = _mean_std([r.t_b for r in kept if r.t_b is not None])
    p_success = sum(r.success for r in kept) / len(kept) if kept else math.nan
    return EnsembleStats(
        n_runs=len(results),
        n_discarded=len(results) - len(kept),
        mean_ts=mean_ts,
        std_ts=std_ts,
        mean_tb=mean_tb,
        std_tb=std_tb,
        p_success=p_success,
    )


def run_ensemble(
    template: TrialConfig,
    runs: int,
    base_seed: int,
    workers: int = 1,
    first_run_id: int = 0,
) -> tuple[list[TrialResult], EnsembleStats]:
    if runs < 1:
        raise ConfigurationError("runs must be at least 1")
    jobs = [
        (replace(template, seed=trial_seed(base_seed, i)), first_run_id + i)
        for i in range(runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_indexed, jobs))
    else:
        results = [_run_indexed(job) for job in jobs]
    results.sort(key=lambda r: r.run_id)
    return results, summarize(results)


def fit_linear(points) -> RegressionFit:
    """Ordinary least squares fit of t = a N + b."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n_vals, t_vals = pts[:, 0], pts[:, 1]
    if np.unique(n_vals).size < 2:
        raise ValueError("linear fit needs at least two distinct N values")
    res = stats.linregress(n_vals, t_vals)
    if pts.shape[0] > 2:
        stderr_a, stderr_b = float(res.stderr), float(res.intercept_stderr)
    else:
        stderr_a = stderr_b = math.nan
    return RegressionFit(float(res.slope), float(res.intercept), stderr_a, stderr_b)


def mean_points(results: Sequence[TrialResult], column: str = "ts") -> list[tuple[int, float]]:
    """(N, mean time) per N over non-discarded runs, for regression."""
    attr = {"ts": "t_s", "tb": "t_b"}[column]
    by_n: dict[int, list[int]] = {}
    for r in results:
        value = getattr(r, attr)
        if not r.discarded and value is not None:
            by_n.setdefault(r.N, []).append(value)
    return [(n, float(np.mean(v))) for n, v in sorted(by_n.items())]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def write_results(results: Sequence[TrialResult], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULT_COLUMNS)
            for r in results:
                writer.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc


def _parse_opt_int(text: str) -> Optional[int]:
    return int(text) if text else None


def read_results(path) -> list[TrialResult]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(
                TrialResult(
                    t_s=_parse_opt_int(row["t_s"]),
                    t_b=_parse_opt_int(row["t_b"]),
                    success=row["success"] == "true",
                    aborted=row["aborted"] == "true",
                    abort_reason=row["abort_reason"] or None,
                    seed=int(row["seed"]),
                    inner_rounds_total=int(row["inner_rounds_total"]),
                    run_id=int(row["run_id"]),
                    N=int(row["N"]),
                    K=int(row["K"]),
                    G=int(row["G"]),
                    M=int(row["M"]),
                    max_outer=int(row["max_outer"]),
                )
            )
    return out
