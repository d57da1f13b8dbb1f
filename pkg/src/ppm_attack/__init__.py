"""Permutation parity machine key exchange and a probabilistic attack on it."""

from ppm_attack.core import ConfigurationError, Evaluation, PpmConfig, evaluate
from ppm_attack.protocol import KeyExchange, RoundInput, RoundRecord, RunOutcome, run_key_exchange
from ppm_attack.attacker import Attacker, AttackerConfig
from ppm_attack.harness import TrialConfig, TrialResult, run_ensemble, run_trial

__all__ = [
    "Attacker",
    "AttackerConfig",
    "ConfigurationError",
    "Evaluation",
    "KeyExchange",
    "PpmConfig",
    "RoundInput",
    "RoundRecord",
    "RunOutcome",
    "TrialConfig",
    "TrialResult",
    "evaluate",
    "run_ensemble",
    "run_key_exchange",
    "run_trial",
]
