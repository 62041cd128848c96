"""Branching processes in random environment with immigration.

Three views of the same object live here:

* the plain process Z_n = xi_1 + ... + xi_{Z_{n-1}} + M_n with geometric
  offspring (:func:`simulate_bpre`, :func:`bpre_step`),
* the walk-coupled process V_k read off the shared coin flips
  (:func:`simulate_V`), and
* the decomposition of Z_n into independent immigrant lineages
  (:func:`simulate_Z_decomposed`).

The random difference equation X_{n+1} = a_{n+1} X_n + M_{n+1} and the
reversed series W_n are at the bottom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .analysis import RegimeLabel, UnsupportedRegimeError
from .env_model import (CoinSource, EnvironmentSpec, coin_prefix, coin_u_prefixed,
                        draw_m_many, draw_p_many, site_m, site_p)
from .walk_engine import HIT_TARGET, WalkSummary, kernel_env_args

# above this population the offspring sum is drawn from its normal approximation
_NB_EXACT_LIMIT = 1 << 50


@dataclass
class BranchingPath:
    values: list
    first_zero: Optional[int]
    offspring_p: list = field(default_factory=list)
    immigrants: list = field(default_factory=list)
    truncated_at: Optional[int] = None
    flips_consumed: Optional[list] = None

    @property
    def environment_tags(self):
        """(p_j, M_j) for generations j = 1, ..., n."""
        return list(zip(self.offspring_p, self.immigrants))

    def csv_rows(self, replica):
        extinct = "" if self.first_zero is None else self.first_zero
        return [{"replica": replica, "k": k, "value": v, "extinct_at": extinct}
                for k, v in enumerate(self.values)]


def _check_p(p):
    if not 0.0 < p < 1.0:
        raise ValueError(f"offspring parameter must lie in (0, 1), got {p}")


def offspring_sum(z: int, p: float, rng: np.random.Generator) -> int:
    """Sum of z i.i.d. draws with P[xi = n] = p^n (1 - p)."""
    _check_p(p)
    if z == 0:
        return 0
    if z <= _NB_EXACT_LIMIT:
        return int(rng.negative_binomial(z, 1.0 - p))
    mean = z * p / (1.0 - p)
    sd = math.sqrt(z * p) / (1.0 - p)
    return max(0, int(round(mean + sd * rng.standard_normal())))


def bpre_step(z: int, p: float, m: int, rng: np.random.Generator) -> int:
    return offspring_sum(int(z), p, rng) + int(m)


def simulate_bpre(spec: EnvironmentSpec, n_gen: int, rng: np.random.Generator,
                  stop_at_zero: bool = False) -> BranchingPath:
    """Z_0 = 1 and n_gen generations with (p_j, M_j) i.i.d. from ``spec``."""
    law = spec.packed()
    ps = draw_p_many(law, rng.random(n_gen))
    ms = draw_m_many(law, 1.0 - rng.random(n_gen))
    values = [1]
    first_zero = None
    z = 1
    for j in range(n_gen):
        z = bpre_step(z, float(ps[j]), int(ms[j]), rng)
        values.append(z)
        if z == 0 and first_zero is None:
            first_zero = j + 1
            if stop_at_zero:
                break
    n = len(values) - 1
    return BranchingPath(values, first_zero, [float(p) for p in ps[:n]],
                         [int(m) for m in ms[:n]])


def simulate_Z_decomposed(p_seq, m_seq, n: int, rng: np.random.Generator) -> int:
    """Z_n as the sum of n+1 independent lineages.

    Lineage j starts in generation j with 1 (j = 0) or m_seq[j-1] individuals
    and reproduces with parameters p_seq[j], ..., p_seq[n-1].
    """
    if len(p_seq) < n or len(m_seq) < n:
        raise ValueError("sequences shorter than n")
    total = 0
    for j in range(n + 1):
        size = 1 if j == 0 else int(m_seq[j - 1])
        for g in range(j, n):
            if size == 0:
                break
            size = offspring_sum(size, float(p_seq[g]), rng)
        total += size
    return total


def simulate_Z_direct(p_seq, m_seq, n: int, rng: np.random.Generator) -> int:
    z = 1
    for g in range(n):
        z = bpre_step(z, float(p_seq[g]), int(m_seq[g]), rng)
    return z


# --------------------------------------------------------------------------
# walk-coupled process

@numba.njit(cache=True, nogil=True)
def _v_kernel(law, env_seed, pre_lo, pre_p, pre_m, window_only, coin_seed, tag,
              k_max, failure_cap, stop_on_extinction):
    values = np.zeros(k_max + 1, dtype=np.int64)
    ps = np.zeros(k_max + 1)
    ms = np.zeros(k_max + 1, dtype=np.int64)
    used = np.zeros(k_max + 1, dtype=np.int64)
    values[0] = 1
    truncated = -1
    status = 0
    last = k_max
    prev = 1
    n_pre = pre_p.shape[0]
    prefix = coin_prefix(coin_seed, tag)
    for k in range(1, k_max + 1):
        j = k - pre_lo
        if 0 <= j < n_pre:
            p = pre_p[j]
            m = pre_m[j]
        elif window_only:
            status = 1
            last = k - 1
            break
        else:
            p = site_p(law, env_seed, k)
            m = site_m(law, env_seed, k)
        need = prev
        if failure_cap >= 0 and prev > failure_cap:
            need = failure_cap
            if truncated < 0:
                truncated = k
        successes = 0
        failures = 0
        i = m
        while failures < need:
            i += 1
            if coin_u_prefixed(prefix, k, i) < p:
                successes += 1
            else:
                failures += 1
        values[k] = m + successes
        ps[k] = p
        ms[k] = m
        used[k] = i - m
        prev = values[k]
        if stop_on_extinction and prev == 0:
            last = k
            break
    return (status, values[:last + 1], ps[:last + 1], ms[:last + 1],
            used[:last + 1], truncated)


def simulate_V(env, coins: CoinSource, k_max: int, stop_on_extinction: bool = False,
               failure_cap: Optional[int] = None) -> BranchingPath:
    """The branching process read off the walk's own coin flips at sites 1..k_max.

    At site k the flips with index i > M_k are scanned in order; V_k is M_k
    plus the successes seen before the V_{k-1}-th failure.  With
    ``failure_cap`` set, at most that many failures are scanned per site and
    every value from the first capped site on (``truncated_at``) is only a
    lower bound.  Only sites k >= 1 are read.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    law, env_seed, pre_lo, pre_p, pre_m, window_only = kernel_env_args(env)
    status, values, ps, ms, used, truncated = _v_kernel(
        law, env_seed, pre_lo, pre_p, pre_m, window_only, coins.seed_word,
        coins.tag_word, int(k_max), -1 if failure_cap is None else int(failure_cap),
        bool(stop_on_extinction))
    if status == 1:
        raise KeyError("V-path left the environment window")
    values = [int(v) for v in values]
    first_zero = next((k for k, v in enumerate(values) if v == 0), None)
    return BranchingPath(values, first_zero, [float(p) for p in ps[1:]],
                         [int(m) for m in ms[1:]],
                         truncated_at=None if truncated < 0 else int(truncated),
                         flips_consumed=[int(u) for u in used])


@dataclass(frozen=True)
class CouplingRow:
    k: int
    upcrossings: int
    v: int
    indicator: int
    violation: bool


def coupling_table(summary: WalkSummary, vpath: BranchingPath):
    """Compare U_k against V_k for k = 1 .. len(vpath) - 1.

    Finished excursions must satisfy U_k = V_k 1{V_j > 0 for j < k};
    timed-out ones U_k <= V_k.  Values past ``truncated_at`` are lower bounds,
    which keeps the inequality check sound.
    """
    finished = summary.terminated_by == HIT_TARGET
    rows = []
    alive = 1
    for k in range(1, len(vpath.values)):
        alive = alive and vpath.values[k - 1] > 0
        u = summary.upcrossings.get(k, 0)
        v = vpath.values[k]
        if finished:
            bad = u != v * alive
            if vpath.truncated_at is not None and k >= vpath.truncated_at and alive:
                bad = True
        else:
            bad = u > v
        rows.append(CouplingRow(k, u, v, int(alive), bad))
    return rows


def coupled_excursion(env, coins: CoinSource, horizon: int):
    """Run the excursion from 1 and the V-path on the same flips.

    The V-path extends one site past the walk's maximum and scans at most
    ``horizon`` failures per site, which is all the walk can have used.
    """
    from .walk_engine import excursion_upcrossings
    summary = excursion_upcrossings(env, coins, horizon)
    vpath = simulate_V(env, coins, max(summary.max_position, 1) + 1,
                       failure_cap=horizon)
    return summary, vpath, coupling_table(summary, vpath)


def bpre_classify(tail_liminf: float, tail_limsup: float, mean_log_mu: float) -> RegimeLabel:
    """Recurrence/transience of a subcritical BPRE with immigration."""
    if mean_log_mu >= 0:
        raise UnsupportedRegimeError("only subcritical processes (E log mu < 0) are covered")
    threshold = -mean_log_mu
    if tail_liminf > threshold:
        return RegimeLabel.RIGHT_TRANSIENT
    if tail_limsup < threshold:
        return RegimeLabel.RECURRENT
    return RegimeLabel.INDETERMINATE


# --------------------------------------------------------------------------
# random difference equation

@dataclass
class RDEPath:
    x_values: list
    w_value: float
    alphas: list
    immigrations: list


def rde_step(x: float, alpha: float, m: float) -> float:
    if alpha <= 0 or m < 0 or x < 0:
        raise ValueError("need alpha > 0, m >= 0, x >= 0")
    return alpha * x + m


def simulate_W(alphas, ms, n: int) -> float:
    """W_n = M_1 + a_1 M_2 + a_1 a_2 M_3 + ... + a_1...a_{n-1} M_n."""
    if len(alphas) < n or len(ms) < n:
        raise ValueError("sequences shorter than n")
    total = 0.0
    weight = 1.0
    for k in range(n):
        total += weight * float(ms[k])
        weight *= float(alphas[k])
    return total


def simulate_rde(alphas, ms, n: int) -> RDEPath:
    if len(alphas) < n or len(ms) < n:
        raise ValueError("sequences shorter than n")
    xs = [0.0]
    for k in range(n):
        xs.append(rde_step(xs[-1], float(alphas[k]), float(ms[k])))
    return RDEPath(xs, simulate_W(alphas, ms, n), list(alphas[:n]), list(ms[:n]))
