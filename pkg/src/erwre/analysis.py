"""Closed-form quenched probabilities, oracles, tests and regime classifiers."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .env_model import CoinSource, EnvironmentWindow, rho
from .walk_engine import kernel_env_args, window_left_exits


class RegimeLabel(enum.Enum):
    LEFT_TRANSIENT = "LeftTransient"
    RECURRENT = "Recurrent"
    RIGHT_TRANSIENT = "RightTransient"
    INDETERMINATE = "Indeterminate"

    def __str__(self):
        return self.value


class UnsupportedRegimeError(ValueError):
    """The classifier's theorem does not cover the given drift."""


@dataclass(frozen=True)
class TailDescriptor:
    log_moment_finite: bool
    tail_liminf: float
    tail_limsup: float

    def __post_init__(self):
        if self.tail_liminf > self.tail_limsup:
            raise ValueError("tail_liminf must not exceed tail_limsup")
        if self.log_moment_finite and self.tail_limsup != 0:
            raise ValueError("a finite log-moment forces a zero tail limit")


# --------------------------------------------------------------------------
# hitting probabilities

def _log_rho(env, z):
    return math.log(rho(env.site(z).p))


def _log_tail_sum(env, z, k):
    """log of sum_{l=-z+1}^{k} prod_{j=l}^{k} rho_{-j}; -inf for an empty sum."""
    lo = -z + 1
    if k < lo:
        return -math.inf
    # suffix sums of log rho_{-j}, j = k, k-1, ..., lo
    terms = np.empty(k - lo + 1)
    acc = 0.0
    for idx, j in enumerate(range(k, lo - 1, -1)):
        acc += _log_rho(env, -j)
        terms[idx] = acc
    top = terms.max()
    return top + math.log(np.exp(terms - top).sum())


def _log_escape(log_s):
    """log(1 - 1/(1+S)) = log(S/(1+S)) given log S."""
    if log_s == -math.inf:
        return -math.inf
    return -np.logaddexp(0.0, -log_s)


def hit_prob_closed(env, z: int, k: int) -> float:
    """Quenched probability that a cookie-free walk from -k hits -k-1 before z."""
    if k < 1:
        raise ValueError("k must be positive")
    if -k >= z:
        raise ValueError("need -k < z")
    return math.exp(_log_escape(_log_tail_sum(env, z, k)))


def hitting_profile(env, z: int, k: int) -> np.ndarray:
    """h(x) = P_x[hit -k-1 before z] for x = -k-1, ..., z by first-step analysis.

    Solves h(x) = p_x h(x+1) + (1-p_x) h(x-1) on -k <= x <= z-1 with
    h(-k-1) = 1, h(z) = 0 by forward elimination and back substitution.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if -k >= z:
        raise ValueError("need -k < z")
    xs = list(range(-k, z))
    n = len(xs)
    # row j: -(1-p) h[j-1] + h[j] - p h[j+1] = 0, boundary terms moved right
    sub = np.array([-(1 - env.site(x).p) for x in xs])
    diag = np.ones(n)
    sup = np.array([-env.site(x).p for x in xs])
    rhs = np.zeros(n)
    rhs[0] = 1 - env.site(xs[0]).p      # from h(-k-1) = 1
    c = np.zeros(n)
    d = np.zeros(n)
    c[0] = sup[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for j in range(1, n):
        denom = diag[j] - sub[j] * c[j - 1]
        c[j] = sup[j] / denom
        d[j] = (rhs[j] - sub[j] * d[j - 1]) / denom
    h = np.zeros(n)
    h[-1] = d[-1]
    for j in range(n - 2, -1, -1):
        h[j] = d[j] - c[j] * h[j + 1]
    return np.concatenate(([1.0], h, [0.0]))


def hit_prob_oracle(env, z: int, k: int) -> float:
    return float(hitting_profile(env, z, k)[1])


def prob_A_n(env, z: int, n: int) -> float:
    """P[after the first visit to -n the walk reaches -n-1 before z].

    Sites above -n are taken to be free of cookies; the M_{-n} cookies at -n
    each push the walker to -n+1, from where it must come back to -n.
    """
    if n <= max(0, -z):
        raise ValueError("need n > max(0, -z)")
    m = env.site(-n).m
    log_last = _log_escape(_log_tail_sum(env, z, n))
    if m == 0:
        return math.exp(log_last)
    log_back = _log_escape(_log_tail_sum(env, z, n - 1))
    if log_back == -math.inf:
        return 0.0
    return math.exp(m * log_back + log_last)


def hit_prob_monte_carlo(env, z: int, k: int, trials: int, coin_seed: int,
                         tag0: int = 0, with_cookies: bool = False):
    """Count walks from -k that exit through -k-1 before z.

    Trial t uses coin stream ``tag0 + t``.  Cookies are ignored unless
    ``with_cookies`` is set.  Returns the number of left exits.
    """
    window = EnvironmentWindow({x: env.site(x) for x in range(-k - 1, z + 1)})
    if not with_cookies:
        window = window.without_cookies()
    _, _, pre_lo, pre_p, pre_m, _ = kernel_env_args(window)
    coins = CoinSource(coin_seed)
    return int(window_left_exits(pre_lo, pre_p, pre_m, coins.seed_word, int(tag0),
                                 int(trials), -k, -k - 1, z))


def prob_A_n_monte_carlo(env, z: int, n: int, trials: int, coin_seed: int,
                         tag0: int = 0):
    """Left exits of walks restarted at -n with cookies only at -n."""
    sites = {x: env.site(x) for x in range(-n - 1, z + 1)}
    window = EnvironmentWindow({x: type(s)(s.p, s.m if x == -n else 0)
                                for x, s in sites.items()})
    _, _, pre_lo, pre_p, pre_m, _ = kernel_env_args(window)
    return int(window_left_exits(pre_lo, pre_p, pre_m, CoinSource(coin_seed).seed_word,
                                 int(tag0), int(trials), -n, -n - 1, z))


# --------------------------------------------------------------------------
# regime classification

def example_tail_descriptor(lam: float, beta: float) -> TailDescriptor:
    """Analytic tail behaviour of the example cookie law."""
    if not (lam > 0 and beta > 0):
        raise ValueError("lam and beta must be positive")
    if lam > 1:
        return TailDescriptor(True, 0.0, 0.0)
    if lam == 1:
        return TailDescriptor(False, 1.0 / beta, 1.0 / beta)
    return TailDescriptor(False, math.inf, math.inf)


def classify_regime_thm1(tails: TailDescriptor, mean_log_rho: float) -> RegimeLabel:
    if not mean_log_rho > 0:
        raise UnsupportedRegimeError("classifier needs E[log rho_0] > 0")
    if tails.log_moment_finite:
        return RegimeLabel.LEFT_TRANSIENT
    if tails.tail_limsup < mean_log_rho:
        return RegimeLabel.RECURRENT
    if tails.tail_liminf > mean_log_rho:
        return RegimeLabel.RIGHT_TRANSIENT
    return RegimeLabel.INDETERMINATE


# --------------------------------------------------------------------------
# statistics

@dataclass(frozen=True)
class KSResult:
    statistic: float
    critical: float
    reject: bool


def ks_critical(n: int, m: int, level: float) -> float:
    c = math.sqrt(-0.5 * math.log(level / 2))
    return c * math.sqrt((n + m) / (n * m))


def two_sample_test(a, b, level: float = 0.01) -> KSResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic critical value."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    stat = float(np.max(np.abs(cdf_a - cdf_b)))
    crit = ks_critical(a.size, b.size, level)
    return KSResult(stat, crit, stat > crit)


def binomial_interval(successes: int, trials: int, z_mult: float = 4.0):
    if trials < 1:
        raise ValueError("trials must be at least 1")
    p_hat = successes / trials
    half = z_mult * math.sqrt(p_hat * (1 - p_hat) / trials)
    return max(0.0, p_hat - half), min(1.0, p_hat + half)


def power_series_diagnostic(m_seq, x: float, n_terms: int) -> np.ndarray:
    """Partial sums sum_{n<=N} M_{-n} x^n for N = 1..n_terms (m_seq[0] is M_{-1})."""
    if not 0 < x < 1:
        raise ValueError("x must lie in (0, 1)")
    m = np.asarray(m_seq[:n_terms], dtype=float)
    if m.size < n_terms:
        raise ValueError("m_seq is shorter than n_terms")
    powers = x ** np.arange(1, n_terms + 1)
    return np.cumsum(m * powers)
