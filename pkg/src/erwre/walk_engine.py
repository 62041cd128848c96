"""Excited random walk in a random environment.

On the i-th visit to z the walker reads ``coin_flip(z, i)``: the first M_z
visits always give +1 (a cookie is eaten), later ones give +1 with
probability p_z.  The compiled kernel below and :func:`walk_step` implement
the same rule; the latter is the slow, obviously-correct reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .env_model import (CoinSource, Environment, EnvironmentWindow, coin_flip,
                        coin_prefix, coin_u_prefixed, site_m, site_p)

HIT_TARGET = "HitTarget"
HORIZON = "Horizon"
TIMEOUT = "Timeout"


@dataclass
class WalkState:
    position: int
    visits: dict = field(default_factory=dict)
    steps: int = 0


@dataclass
class WalkSummary:
    start: int
    final_position: int
    steps_taken: int
    hit_times: dict
    returns_to_origin: int
    min_position: int
    max_position: int
    upcrossings: dict
    terminated_by: str
    t0: Optional[int] = None
    checkpoints: dict = field(default_factory=dict)
    path: Optional[np.ndarray] = None

    CSV_COLUMNS = ("replica", "seed", "start", "steps", "final", "min", "max",
                   "returns", "t0", "terminated_by")

    def csv_row(self, replica, seed):
        return {
            "replica": replica, "seed": seed, "start": self.start,
            "steps": self.steps_taken, "final": self.final_position,
            "min": self.min_position, "max": self.max_position,
            "returns": self.returns_to_origin,
            "t0": TIMEOUT if self.t0 is None else self.t0,
            "terminated_by": self.terminated_by,
        }

    def to_dict(self):
        return {
            "start": self.start,
            "final_position": self.final_position,
            "steps_taken": self.steps_taken,
            "hit_times": {str(k): (TIMEOUT if v is None else v)
                          for k, v in self.hit_times.items()},
            "returns_to_origin": self.returns_to_origin,
            "min_position": self.min_position,
            "max_position": self.max_position,
            "upcrossings": {str(k): v for k, v in self.upcrossings.items()},
            "terminated_by": self.terminated_by,
            "t0": TIMEOUT if self.t0 is None else self.t0,
            "checkpoints": {str(k): {"position": p, "returns": r}
                            for k, (p, r) in self.checkpoints.items()},
        }


def walk_step(state: WalkState, env, coins: CoinSource) -> WalkState:
    z = state.position
    visits = dict(state.visits)
    i = visits.get(z, 0) + 1
    visits[z] = i
    return WalkState(z + coin_flip(coins, env, z, i), visits, state.steps + 1)


# --------------------------------------------------------------------------
# compiled kernels

@numba.njit(cache=True, nogil=True)
def _walk_kernel(law, env_seed, coin_seed, tag, pre_lo, pre_p, pre_m, window_only,
                 start, horizon, targets, track_up, checkpoints, record_path):
    size = 256
    lo = start - size // 2
    visits = np.zeros(size, dtype=np.int64)
    pc = np.zeros(size)
    mc = np.full(size, -1, dtype=np.int64)
    up = np.zeros(64, dtype=np.int64)

    n_cp = checkpoints.shape[0]
    cp_pos = np.zeros(n_cp, dtype=np.int64)
    cp_ret = np.zeros(n_cp, dtype=np.int64)
    cpi = 0
    path = np.empty(horizon + 1 if record_path else 1, dtype=np.int64)
    path[0] = start

    pos = start
    steps = 0
    mn = start
    mx = start
    returns = 0
    t0 = -1
    hit = -1
    status = 0
    n_pre = pre_p.shape[0]
    prefix = coin_prefix(coin_seed, tag)

    while steps < horizon:
        idx = pos - lo
        if idx < 0 or idx >= size:
            new_lo = lo - size if idx < 0 else lo
            shift = lo - new_lo
            nv = np.zeros(2 * size, dtype=np.int64)
            npc = np.zeros(2 * size)
            nmc = np.full(2 * size, -1, dtype=np.int64)
            nv[shift:shift + size] = visits
            npc[shift:shift + size] = pc
            nmc[shift:shift + size] = mc
            visits, pc, mc = nv, npc, nmc
            lo = new_lo
            size *= 2
            idx = pos - lo
        if mc[idx] < 0:
            j = pos - pre_lo
            if 0 <= j < n_pre:
                pc[idx] = pre_p[j]
                mc[idx] = pre_m[j]
            elif window_only:
                status = 1
                break
            else:
                pc[idx] = site_p(law, env_seed, pos)
                mc[idx] = site_m(law, env_seed, pos)
        visits[idx] += 1
        i = visits[idx]
        if i <= mc[idx] or coin_u_prefixed(prefix, pos, i) < pc[idx]:
            step = 1
        else:
            step = -1
        if track_up and step == 1 and pos >= 1 and t0 < 0:
            if pos >= up.shape[0]:
                nup = np.zeros(2 * pos, dtype=np.int64)
                nup[:up.shape[0]] = up
                up = nup
            up[pos] += 1
        pos += step
        steps += 1
        if record_path:
            path[steps] = pos
        if pos < mn:
            mn = pos
        elif pos > mx:
            mx = pos
        if pos == 0:
            returns += 1
            if t0 < 0:
                t0 = steps
        while cpi < n_cp and checkpoints[cpi] == steps:
            cp_pos[cpi] = pos
            cp_ret[cpi] = returns
            cpi += 1
        for j in range(targets.shape[0]):
            if targets[j] == pos:
                hit = j
                break
        if hit >= 0:
            break
    while cpi < n_cp:
        cp_pos[cpi] = pos
        cp_ret[cpi] = returns
        cpi += 1
    return (status, steps, pos, mn, mx, returns, t0, hit, up[:max(mx, 0) + 1],
            cp_pos, cp_ret, path[:steps + 1])


@numba.njit(cache=True, nogil=True)
def window_left_exits(pre_lo, pre_p, pre_m, coin_seed, tag0, n_trials, start,
                      left, right):
    """Count trials (coin tags tag0, tag0+1, ...) that hit ``left`` before ``right``."""
    n = pre_p.shape[0]
    visits = np.zeros(n, dtype=np.int64)
    hits = 0
    for t in range(n_trials):
        prefix = coin_prefix(coin_seed, np.uint64(tag0 + t))
        visits[:] = 0
        pos = start
        while pos != left and pos != right:
            idx = pos - pre_lo
            visits[idx] += 1
            i = visits[idx]
            if i <= pre_m[idx] or coin_u_prefixed(prefix, pos, i) < pre_p[idx]:
                pos += 1
            else:
                pos -= 1
        if pos == left:
            hits += 1
    return hits


def kernel_env_args(env):
    """Arguments describing ``env`` to the compiled kernels."""
    if isinstance(env, EnvironmentWindow):
        lo, hi = env.lo, env.hi
        sites = [env.site(z) for z in range(lo, hi + 1)]
        pre_p = np.array([s.p for s in sites])
        pre_m = np.array([s.m for s in sites], dtype=np.int64)
        return np.zeros(8), np.uint64(0), lo, pre_p, pre_m, True
    if isinstance(env, Environment):
        return (env.law, env.seed_word, 0, np.zeros(0), np.zeros(0, dtype=np.int64),
                False)
    raise TypeError(f"unsupported environment {env!r}")


def run_walk(start: int, env, coins: CoinSource, horizon: int, stop_targets=(),
             checkpoints=(), record_path=False) -> WalkSummary:
    """Run the walk from ``start`` for at most ``horizon`` steps.

    The run stops at the first time n >= 1 the walk stands on a stop target.
    ``checkpoints`` lists step counts at which (position, returns to 0) are
    snapshotted; checkpoints past the end of the run take the final values.
    Upcrossings are recorded only when ``start == 1``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    targets = np.array(sorted(set(int(t) for t in stop_targets)), dtype=np.int64)
    cps = np.array(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    law, env_seed, pre_lo, pre_p, pre_m, window_only = kernel_env_args(env)
    (status, steps, pos, mn, mx, returns, t0, hit, up, cp_pos, cp_ret,
     path) = _walk_kernel(law, env_seed, coins.seed_word, coins.tag_word, pre_lo,
                          pre_p, pre_m, window_only, int(start), int(horizon),
                          targets, int(start) == 1, cps, bool(record_path))
    if status == 1:
        raise KeyError("walk left the environment window")

    hit_times = {int(t): None for t in targets}
    if hit >= 0:
        hit_times[int(targets[hit])] = int(steps)
    upcrossings = {}
    if start == 1:
        upcrossings[0] = 1
        for k in range(1, up.shape[0]):
            if up[k]:
                upcrossings[k] = int(up[k])
    return WalkSummary(
        start=int(start), final_position=int(pos), steps_taken=int(steps),
        hit_times=hit_times, returns_to_origin=int(returns),
        min_position=int(mn), max_position=int(mx), upcrossings=upcrossings,
        terminated_by=HIT_TARGET if hit >= 0 else HORIZON,
        t0=None if t0 < 0 else int(t0),
        checkpoints={int(c): (int(p), int(r)) for c, p, r in zip(cps, cp_pos, cp_ret)},
        path=path.copy() if record_path else None,
    )


def excursion_upcrossings(env, coins: CoinSource, horizon: int) -> WalkSummary:
    """Walk from 1 until the first return to 0, with the upcrossing table."""
    return run_walk(1, env, coins, horizon, stop_targets=(0,))
