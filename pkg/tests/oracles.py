"""Independent brute-force reference implementations used by the tests.

Pure Python loops over lists; nothing here imports the package.
"""

import itertools
from fractions import Fraction


def naive_output(x_rows, w_rows):
    """PPM output for row-major nested lists x[i][j], w[i][j]."""
    n = len(x_rows)
    k = len(x_rows[0])
    taus = 0
    sigmas = []
    for j in range(k):
        ones = 0
        for i in range(n):
            if x_rows[i][j] != w_rows[i][j]:
                ones += 1
        sigma = 1 if ones * 2 > n else 0
        sigmas.append(sigma)
        taus += sigma
    return sigmas, taus % 2


def exact_posterior(belief, x_rows, pi_rows, tau):
    """P(s_i = 0 | tau) for every i, enumerating all 2^G states weighted by the belief."""
    g = len(belief)
    num = [0.0] * g
    den = 0.0
    for state in itertools.product((0, 1), repeat=g):
        weight = 1.0
        for i, bit in enumerate(state):
            weight *= belief[i] if bit == 0 else 1.0 - belief[i]
        if weight == 0.0:
            continue
        w_rows = [[state[idx] for idx in row] for row in pi_rows]
        if naive_output(x_rows, w_rows)[1] != tau:
            continue
        den += weight
        for i, bit in enumerate(state):
            if bit == 0:
                num[i] += weight
    return [v / den for v in num]


def poisson_binomial_at_most(probs, limit):
    """P(sum of independent Bernoulli(probs) <= limit) by enumerating all outcomes."""
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=len(probs)):
        if sum(outcome) > limit:
            continue
        weight = 1.0
        for o, p in zip(outcome, probs):
            weight *= p if o else 1.0 - p
        total += weight
    return total


def binomial_tail_exact(q: Fraction, n: int) -> Fraction:
    """Exact rational P(Binomial(n, q) <= n // 2)."""
    total = Fraction(0)
    for outcome in itertools.product((0, 1), repeat=n):
        if sum(outcome) * 2 > n:
            continue
        weight = Fraction(1)
        for o in outcome:
            weight *= q if o else 1 - q
        total += weight
    return total
