"""Command line interface.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 invalid configuration.
"""

from __future__ import annotations

import argparse
import sys

from ppm_attack.attacker import GLOBAL, SELECTED, AttackerConfig, BeliefLogWriter
from ppm_attack.core import ConfigurationError, PpmConfig
from ppm_attack.harness import (
    SUCCESS_RULES,
    AT_OR_BEFORE,
    TrialConfig,
    fit_linear,
    mean_points,
    read_results,
    run_ensemble,
    run_trial,
    trial_streams,
    write_results,
)
from ppm_attack.protocol import KeyExchange, TranscriptWriter

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _n_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_machine_flags(p, n_list: bool = False):
    if n_list:
        p.add_argument("--n", type=_n_list, required=True, help="comma-separated list of N (inputs per hidden unit)")
    else:
        p.add_argument("--n", type=int, required=True, help="inputs per hidden unit N")
    p.add_argument("--k", type=int, default=2, help="hidden units K (default 2)")
    p.add_argument("--g", type=int, default=128, help="state vector length G (default 128)")
    p.add_argument("--seed", type=int, default=0, help="random seed, 64-bit unsigned (default 0)")
    p.add_argument("--max-outer", type=int, default=30, help="outer-round cap before a run is aborted (default 30)")


def _add_attack_flags(p):
    p.add_argument("--samples", type=int, default=1000, help="valid candidates M per inner round (default 1000)")
    p.add_argument(
        "--max-attempts", type=int, default=1_000_000,
        help="consecutive rejected candidates before a belief reset (default 1000000)",
    )
    p.add_argument(
        "--reset-scope", choices=(GLOBAL, SELECTED), default=GLOBAL,
        help="search all entries, or only the current round's indices, for the entry to reset (default global)",
    )
    p.add_argument(
        "--success-rule", choices=SUCCESS_RULES, default=AT_OR_BEFORE,
        help="count a run as broken if t_b <= t_s (at-or-before, default) or t_b < t_s (strictly-before)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ppm-attack", description="PPM key exchange and probabilistic attack simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("exchange", help="run A/B synchronization only")
    _add_machine_flags(p)
    p.add_argument("--transcript", help="write the public transcript CSV to this path")

    p = sub.add_parser("attack", help="run one key exchange with the attacker listening")
    _add_machine_flags(p)
    _add_attack_flags(p)
    p.add_argument("--transcript", help="write the public transcript CSV to this path")
    p.add_argument("--belief-log", help="write the attacker belief at every outer-round boundary to this path")
    p.add_argument("--out", help="write the trial result CSV to this path")

    p = sub.add_parser("sweep", help="run ensembles over a list of N")
    _add_machine_flags(p, n_list=True)
    _add_attack_flags(p)
    p.add_argument("--runs", type=int, default=100, help="trials per N (default 100)")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1); output does not depend on it")

    p = sub.add_parser("regress", help="fit t = a N + b to per-N means from a sweep CSV")
    p.add_argument("--in", dest="inp", required=True, help="results CSV written by sweep")
    p.add_argument("--column", choices=("ts", "tb"), default="ts", help="time to fit (default ts)")
    return parser


def _validate(args):
    ns = args.n if isinstance(args.n, list) else [args.n]
    if not ns:
        raise ConfigurationError("--n needs at least one value")
    for n in ns:
        PpmConfig(n, args.k, args.g)
    if args.max_outer < 1:
        raise ConfigurationError("--max-outer must be at least 1")
    if not 0 <= args.seed < 2**64:
        raise ConfigurationError("--seed must be a 64-bit unsigned integer")
    if getattr(args, "runs", 1) < 1:
        raise ConfigurationError("--runs must be at least 1")
    if getattr(args, "workers", 1) < 1:
        raise ConfigurationError("--workers must be at least 1")


def _attack_config(args) -> AttackerConfig:
    return AttackerConfig(args.samples, args.max_attempts, reset_scope=args.reset_scope)


def _opt(v) -> str:
    return "-" if v is None else str(v)


def _cmd_exchange(args) -> int:
    config = PpmConfig(args.n, args.k, args.g)
    exchange_rng, _ = trial_streams(args.seed)
    exchange = KeyExchange(config, exchange_rng)
    if args.transcript:
        with open(args.transcript, "w", newline="") as fh:
            outcome = exchange.run(args.max_outer, TranscriptWriter(fh, config))
    else:
        outcome = exchange.run(args.max_outer)
    print(
        f"t_s={_opt(outcome.t_s)} aborted={str(outcome.aborted).lower()} "
        f"abort_reason={_opt(outcome.abort_reason)} inner_rounds={outcome.total_inner_rounds}"
    )
    return 0


def _cmd_attack(args) -> int:
    cfg = TrialConfig(PpmConfig(args.n, args.k, args.g), _attack_config(args), args.max_outer, args.seed, args.success_rule)
    config = cfg.ppm
    handles = []
    try:
        transcript = belief_log = None
        if args.transcript:
            handles.append(open(args.transcript, "w", newline=""))
            transcript = TranscriptWriter(handles[-1], config)
        if args.belief_log:
            handles.append(open(args.belief_log, "w", newline=""))
            belief_log = BeliefLogWriter(handles[-1])
        result = run_trial(cfg, transcript=transcript, belief_log=belief_log)
    finally:
        for fh in handles:
            fh.close()
    if args.out:
        write_results([result], args.out)
    print(
        f"t_s={_opt(result.t_s)} t_b={_opt(result.t_b)} success={str(result.success).lower()} "
        f"aborted={str(result.aborted).lower()} abort_reason={_opt(result.abort_reason)} "
        f"inner_rounds={result.inner_rounds_total}"
    )
    return 0


def _cmd_sweep(args) -> int:
    results = []
    for n in args.n:
        template = TrialConfig(PpmConfig(n, args.k, args.g), _attack_config(args), args.max_outer, 0, args.success_rule)
        res, st = run_ensemble(template, args.runs, args.seed, workers=args.workers, first_run_id=len(results))
        results.extend(res)
        print(
            f"N={n} runs={st.n_runs} discarded={st.n_discarded} "
            f"t_s={st.mean_ts:.3f}+-{st.std_ts:.3f} t_b={st.mean_tb:.3f}+-{st.std_tb:.3f} "
            f"P_s={st.p_success:.3f}"
        )
    write_results(results, args.out)
    return 0


def _cmd_regress(args) -> int:
    try:
        results = read_results(args.inp)
    except ValueError as exc:
        raise OSError(str(exc)) from exc
    fit = fit_linear(mean_points(results, args.column))
    print(f"a={fit.a:.6g} stderr_a={fit.stderr_a:.6g} b={fit.b:.6g} stderr_b={fit.stderr_b:.6g}")
    return 0


COMMANDS = {
    "exchange": _cmd_exchange,
    "attack": _cmd_attack,
    "sweep": _cmd_sweep,
    "regress": _cmd_regress,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    prog = f"ppm-attack {args.command}"
    try:
        if args.command != "regress":
            _validate(args)
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"{prog}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"{prog}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"{prog}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
