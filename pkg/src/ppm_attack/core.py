"""Evaluation of a permutation parity machine (PPM).

A PPM has K hidden units with N binary inputs each.  Its weights are not
stored directly: every round a public index matrix ``pi`` picks N*K bits out
of a private G-bit state vector.  Index matrices are zero-based inside this
package; files written for humans use one-based indices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Invalid machine parameters or corrupt index data."""


@dataclass(frozen=True)
class PpmConfig:
    N: int
    K: int
    G: int

    def __post_init__(self):
        for name in ("N", "K", "G"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.G <= self.K * self.N:
            warnings.warn(
                f"G={self.G} is not larger than K*N={self.K * self.N}; "
                "the state vector should be much longer than one weight draw",
                stacklevel=3,
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.K)


@dataclass(frozen=True)
class Evaluation:
    weights: np.ndarray
    vector_fields: np.ndarray
    scalar_fields: np.ndarray
    hidden_states: np.ndarray
    output: int


def as_bits(values, name: str = "bits") -> np.ndarray:
    arr = np.asarray(values)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8, copy=False)


def select_weights(s, pi) -> np.ndarray:
    """Return the weight grid ``w[i, j] = s[pi[i, j]]`` for a zero-based ``pi``."""
    s = np.asarray(s, dtype=np.uint8)
    pi = np.asarray(pi)
    if pi.size and (pi.min() < 0 or pi.max() >= s.shape[0]):
        raise ConfigurationError(
            f"index matrix has entries outside [0, {s.shape[0] - 1}]"
        )
    return s[pi]


def hidden_unit_state(x_col, w_col) -> tuple[int, int]:
    """Scalar local field and state of one hidden unit."""
    x_col = np.asarray(x_col, dtype=np.uint8)
    w_col = np.asarray(w_col, dtype=np.uint8)
    if x_col.shape != w_col.shape or x_col.ndim != 1:
        raise ValueError(
            f"input and weight columns must be equal-length vectors, got {x_col.shape} and {w_col.shape}"
        )
    h = int(np.count_nonzero(x_col ^ w_col))
    # Heaviside with theta(0) = 0, so a tie h == N/2 stays inactive
    return h, int(2 * h > x_col.shape[0])


def ppm_output(hidden_states) -> int:
    return int(np.bitwise_xor.reduce(np.asarray(hidden_states, dtype=np.uint8), initial=0))


def evaluate(s, x, pi, config: PpmConfig) -> Evaluation:
    """Evaluate a PPM with state ``s`` on inputs ``x`` and index matrix ``pi``.

    ``x`` and ``pi`` have shape (N, K); column j feeds hidden unit j.
    """
    s = np.asarray(s, dtype=np.uint8)
    x = np.asarray(x, dtype=np.uint8)
    pi = np.asarray(pi)
    if s.shape != (config.G,):
        raise ValueError(f"state vector must have length {config.G}, got shape {s.shape}")
    if x.shape != config.shape or pi.shape != config.shape:
        raise ValueError(
            f"inputs and index matrix must have shape {config.shape}, got {x.shape} and {pi.shape}"
        )
    w = select_weights(s, pi)
    h = x ^ w
    scalar = h.sum(axis=0, dtype=np.int64)
    sigma = (2 * scalar > config.N).astype(np.uint8)
    return Evaluation(
        weights=w,
        vector_fields=h,
        scalar_fields=scalar,
        hidden_states=sigma,
        output=ppm_output(sigma),
    )


def batch_outputs(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Outputs of many machines at once.

    ``weights`` has shape (B, N, K) and ``x`` shape (N, K); returns B output bits.
    """
    n = x.shape[0]
    scalar = np.count_nonzero(weights != x, axis=1)
    sigma = 2 * scalar > n
    return (np.count_nonzero(sigma, axis=1) & 1).astype(np.uint8)
