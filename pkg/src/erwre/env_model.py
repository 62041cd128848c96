"""Random environments (p_z, M_z) and the indexed coin-flip family.

An :class:`Environment` is a lazily materialized, seed-deterministic map from
lattice sites to :class:`Site` values.  A :class:`CoinSource` supplies the
+/-1 flip used on the i-th visit to site z; the walk and the coupled
branching process read the very same flips.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Union

import numba
import numpy as np

from .counters import (DOMAIN_COIN, DOMAIN_M, DOMAIN_P, as_word, finish2, prefix3,
                       to_unit, uniform5)

M_CAP = 1 << 62
_LOG_M_CAP = math.log(M_CAP)


# --------------------------------------------------------------------------
# laws

@dataclass(frozen=True)
class Fixed:
    p: float

    def __post_init__(self):
        _check_open_unit(self.p, "p")


@dataclass(frozen=True)
class TwoPoint:
    """p = p_a with probability w, p_b otherwise."""
    p_a: float
    p_b: float
    w: float

    def __post_init__(self):
        _check_open_unit(self.p_a, "p_a")
        _check_open_unit(self.p_b, "p_b")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        _check_open_unit(self.lo, "lo")
        _check_open_unit(self.hi, "hi")
        if not self.lo < self.hi:
            raise ValueError("Uniform law needs lo < hi")


@dataclass(frozen=True)
class NoCookies:
    pass


@dataclass(frozen=True)
class FixedCount:
    m: int

    def __post_init__(self):
        if not 0 <= self.m <= M_CAP:
            raise ValueError(f"cookie count must lie in [0, 2**62], got {self.m}")


@dataclass(frozen=True)
class ExampleLaw:
    """P[M >= k] = (1 + beta log k)^-lam for k >= 2, P[M = 1] = 0."""
    lam: float
    beta: float

    def __post_init__(self):
        if not (self.lam > 0 and self.beta > 0):
            raise ValueError("ExampleLaw needs lam > 0 and beta > 0")


@dataclass(frozen=True)
class BoundedUniform:
    """M uniform on {0, ..., m_max}."""
    m_max: int

    def __post_init__(self):
        if not 0 <= self.m_max < M_CAP:
            raise ValueError(f"m_max must lie in [0, 2**62), got {self.m_max}")


PLaw = Union[Fixed, TwoPoint, Uniform]
CookieLaw = Union[NoCookies, FixedCount, ExampleLaw, BoundedUniform]


class Mask(enum.Enum):
    EVERYWHERE = "everywhere"
    POSITIVE_ONLY = "positive"   # cookies on z >= 1
    NEGATIVE_ONLY = "negative"   # cookies on z <= -1


def _check_open_unit(value, name):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie strictly inside (0, 1), got {value}")


# --------------------------------------------------------------------------
# compiled samplers; the law is packed as
# [p_code, p1, p2, p3, cookie_code, c1, c2, mask_code]

_P_FIXED, _P_TWO_POINT, _P_UNIFORM = 0, 1, 2
_C_NONE, _C_FIXED, _C_EXAMPLE, _C_BOUNDED = 0, 1, 2, 3
_MASK_ALL, _MASK_POS, _MASK_NEG = 0, 1, 2


@numba.njit(cache=True, nogil=True)
def example_tail(lam, beta, k):
    """P[M >= k] under the example law, for k >= 2."""
    return (1.0 + beta * math.log(k)) ** (-lam)


@numba.njit(cache=True, nogil=True)
def _sample_example(lam, beta, u, saturate):
    if u > example_tail(lam, beta, 2.0):
        return 0
    log_k = (u ** (-1.0 / lam) - 1.0) / beta
    if log_k >= _LOG_M_CAP:
        if saturate:
            return M_CAP
        raise OverflowError("cookie sample exceeds 2**62")
    # exp() is off by many units once k is large, so bracket and bisect
    k_star = max(int(math.floor(math.exp(log_k))), 2)
    step = max(k_star >> 40, 2)
    lo = max(k_star - step, 2)
    while lo > 2 and example_tail(lam, beta, float(lo)) < u:
        lo = max(lo - step, 2)
        step *= 2
    step = max(k_star >> 40, 2)
    hi = k_star + step
    while example_tail(lam, beta, float(hi)) >= u:
        hi += step
        step *= 2
    while hi - lo > 1:
        mid = lo + (hi - lo) // 2
        if example_tail(lam, beta, float(mid)) >= u:
            lo = mid
        else:
            hi = mid
    best = lo
    if best > M_CAP:
        if saturate:
            return M_CAP
        raise OverflowError("cookie sample exceeds 2**62")
    return best


@numba.njit(cache=True, nogil=True)
def p_from_u(law, u):
    code = int(law[0])
    if code == _P_FIXED:
        return law[1]
    if code == _P_TWO_POINT:
        return law[1] if u < law[3] else law[2]
    return law[1] + (law[2] - law[1]) * u


@numba.njit(cache=True, nogil=True)
def m_from_u(law, u):
    code = int(law[4])
    if code == _C_NONE:
        return 0
    if code == _C_FIXED:
        return int(law[5])
    if code == _C_EXAMPLE:
        return _sample_example(law[5], law[6], u, True)
    return int(u * (law[5] + 1.0))


@numba.njit(cache=True, nogil=True)
def site_p(law, seed, z):
    if int(law[0]) == _P_FIXED:
        return law[1]
    return p_from_u(law, uniform5(seed, DOMAIN_P, np.uint64(0), z, 0))


@numba.njit(cache=True, nogil=True)
def site_m(law, seed, z):
    mask = int(law[7])
    if mask == _MASK_POS and z <= 0:
        return 0
    if mask == _MASK_NEG and z >= 0:
        return 0
    if int(law[4]) == _C_NONE:
        return 0
    return m_from_u(law, uniform5(seed, DOMAIN_M, np.uint64(0), z, 0))


@numba.njit(cache=True, nogil=True)
def coin_prefix(seed, tag):
    return prefix3(seed, DOMAIN_COIN, tag)


@numba.njit(cache=True, nogil=True)
def coin_u_prefixed(prefix, z, i):
    """Uniform behind flip (z, i) for the stream whose prefix is given."""
    return to_unit(finish2(prefix, z, i))


@numba.njit(cache=True, nogil=True)
def coin_u(seed, tag, z, i):
    return coin_u_prefixed(coin_prefix(seed, tag), z, i)


@numba.njit(cache=True, nogil=True)
def draw_p_many(law, us):
    out = np.empty(us.shape[0])
    for j in range(us.shape[0]):
        out[j] = p_from_u(law, us[j])
    return out


@numba.njit(cache=True, nogil=True)
def draw_m_many(law, us):
    out = np.empty(us.shape[0], dtype=np.int64)
    for j in range(us.shape[0]):
        out[j] = m_from_u(law, us[j])
    return out


# --------------------------------------------------------------------------
# spec

_P_KEYS = {"fixed": Fixed, "two_point": TwoPoint, "uniform": Uniform}
_C_KEYS = {"none": NoCookies, "fixed": FixedCount, "example": ExampleLaw,
           "bounded_uniform": BoundedUniform}


@dataclass(frozen=True)
class EnvironmentSpec:
    p_law: PLaw = Fixed(1 / 3)
    cookie_law: CookieLaw = NoCookies()
    mask: Mask = Mask.EVERYWHERE

    def packed(self):
        law = np.zeros(8)
        pl = self.p_law
        if isinstance(pl, Fixed):
            law[0:2] = (_P_FIXED, pl.p)
        elif isinstance(pl, TwoPoint):
            law[0:4] = (_P_TWO_POINT, pl.p_a, pl.p_b, pl.w)
        else:
            law[0:3] = (_P_UNIFORM, pl.lo, pl.hi)
        cl = self.cookie_law
        if isinstance(cl, FixedCount):
            law[4:6] = (_C_FIXED, cl.m)
        elif isinstance(cl, ExampleLaw):
            law[4:7] = (_C_EXAMPLE, cl.lam, cl.beta)
        elif isinstance(cl, BoundedUniform):
            law[4:6] = (_C_BOUNDED, cl.m_max)
        else:
            law[4] = _C_NONE
        law[7] = {Mask.EVERYWHERE: _MASK_ALL, Mask.POSITIVE_ONLY: _MASK_POS,
                  Mask.NEGATIVE_ONLY: _MASK_NEG}[self.mask]
        return law

    def to_mapping(self):
        out = {}
        pl, cl = self.p_law, self.cookie_law
        if isinstance(pl, Fixed):
            out.update(p_law="fixed", p=pl.p)
        elif isinstance(pl, TwoPoint):
            out.update(p_law="two_point", p_a=pl.p_a, p_b=pl.p_b, w=pl.w)
        else:
            out.update(p_law="uniform", p_lo=pl.lo, p_hi=pl.hi)
        if isinstance(cl, NoCookies):
            out["cookie_law"] = "none"
        elif isinstance(cl, FixedCount):
            out.update(cookie_law="fixed", m=cl.m)
        elif isinstance(cl, ExampleLaw):
            out.update(cookie_law="example", **{"lambda": cl.lam, "beta": cl.beta})
        else:
            out.update(cookie_law="bounded_uniform", m_max=cl.m_max)
        out["mask"] = self.mask.value
        return out

    @classmethod
    def from_mapping(cls, values):
        """Build a spec from string or numeric values keyed as in the config format."""
        def num(key, default=None):
            if key not in values:
                if default is None:
                    raise ValueError(f"missing config key {key!r}")
                return default
            return float(values[key])

        p_kind = str(values.get("p_law", "fixed"))
        if p_kind == "fixed":
            p_law = Fixed(num("p", 1 / 3))
        elif p_kind == "two_point":
            p_law = TwoPoint(num("p_a"), num("p_b"), num("w"))
        elif p_kind == "uniform":
            p_law = Uniform(num("p_lo"), num("p_hi"))
        else:
            raise ValueError(f"unknown p_law {p_kind!r}")

        c_kind = str(values.get("cookie_law", "none"))
        if c_kind == "none":
            cookie_law = NoCookies()
        elif c_kind == "fixed":
            cookie_law = FixedCount(int(values["m"]))
        elif c_kind == "example":
            cookie_law = ExampleLaw(num("lambda"), num("beta"))
        elif c_kind == "bounded_uniform":
            cookie_law = BoundedUniform(int(values["m_max"]))
        else:
            raise ValueError(f"unknown cookie_law {c_kind!r}")
        return cls(p_law, cookie_law, Mask(str(values.get("mask", "everywhere"))))

    def to_config(self, seed=None):
        items = self.to_mapping()
        if seed is not None:
            items["seed"] = int(seed)
        return "".join(f"{k}={_fmt(v)}\n" for k, v in items.items())

    @classmethod
    def from_config(cls, text):
        """Parse ``key=value`` lines; returns ``(spec, seed or None)``."""
        values = parse_config_text(text)
        seed = int(values["seed"]) if "seed" in values else None
        return cls.from_mapping(values), seed


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


# --------------------------------------------------------------------------
# sites, environments, coins

@dataclass(frozen=True)
class Site:
    p: float
    m: int

    def __post_init__(self):
        _check_open_unit(self.p, "p")
        if self.m < 0:
            raise ValueError("cookie count must be nonnegative")

    def omega(self, i):
        """Right-step probability on the i-th visit."""
        return 1.0 if i <= self.m else self.p


class Environment:
    """Seed-deterministic i.i.d. field of sites, materialized on demand."""

    def __init__(self, spec: EnvironmentSpec, master_seed: int):
        self.spec = spec
        self.master_seed = int(master_seed)
        self.law = spec.packed()
        self.seed_word = as_word(master_seed)
        self._memo: dict[int, Site] = {}

    def site(self, z: int) -> Site:
        z = int(z)
        s = self._memo.get(z)
        if s is None:
            s = Site(float(site_p(self.law, self.seed_word, z)),
                     int(site_m(self.law, self.seed_word, z)))
            self._memo[z] = s
        return s

    def without_cookies(self):
        """Same p field, every M set to zero."""
        return Environment(EnvironmentSpec(self.spec.p_law, NoCookies(), self.spec.mask),
                           self.master_seed)

    def window(self, lo, hi):
        return EnvironmentWindow({z: self.site(z) for z in range(lo, hi + 1)})

    def __repr__(self):
        return f"Environment({self.spec!r}, master_seed={self.master_seed})"


@dataclass
class EnvironmentWindow:
    """Explicit finite environment, e.g. loaded from a JSON fixture."""
    sites: dict = field(default_factory=dict)

    def site(self, z: int) -> Site:
        try:
            return self.sites[int(z)]
        except KeyError:
            raise KeyError(f"site {z} lies outside the environment window") from None

    @property
    def lo(self):
        return min(self.sites)

    @property
    def hi(self):
        return max(self.sites)

    def without_cookies(self):
        return EnvironmentWindow({z: Site(s.p, 0) for z, s in self.sites.items()})

    def to_records(self):
        return [{"z": z, "p": s.p, "m": s.m} for z, s in sorted(self.sites.items())]

    def to_json(self):
        return json.dumps(self.to_records())

    @classmethod
    def from_records(cls, records):
        return cls({int(r["z"]): Site(float(r["p"]), int(r["m"])) for r in records})

    @classmethod
    def from_json(cls, text):
        return cls.from_records(json.loads(text))


@dataclass(frozen=True)
class CoinSource:
    master_seed: int
    stream_tag: int = 0

    @property
    def seed_word(self):
        return as_word(self.master_seed)

    @property
    def tag_word(self):
        return as_word(self.stream_tag)


def materialize_site(env, z: int) -> Site:
    return env.site(z)


def rho(p: float) -> float:
    _check_open_unit(p, "p")
    return (1.0 - p) / p


def mean_log_rho(spec: EnvironmentSpec) -> float:
    """Exact E[log rho_0] for the spec's p-law."""
    pl = spec.p_law
    if isinstance(pl, Fixed):
        return math.log(rho(pl.p))
    if isinstance(pl, TwoPoint):
        return pl.w * math.log(rho(pl.p_a)) + (1 - pl.w) * math.log(rho(pl.p_b))

    def x_log_x(x):
        return x * math.log(x)

    # antiderivative of log((1-p)/p) is -(1-p)log(1-p) - p log p
    lo, hi = pl.lo, pl.hi
    upper = -x_log_x(1 - hi) - x_log_x(hi)
    lower = -x_log_x(1 - lo) - x_log_x(lo)
    return (upper - lower) / (hi - lo)


def cookie_log_tail(spec: EnvironmentSpec, t: float) -> float:
    """P[log M_0 > t] for the spec's cookie law (before masking)."""
    cl = spec.cookie_law
    if isinstance(cl, NoCookies):
        return 0.0
    if isinstance(cl, FixedCount):
        return 1.0 if cl.m >= 1 and math.log(cl.m) > t else 0.0
    if isinstance(cl, ExampleLaw):
        if t < math.log(2):
            return float(example_tail(cl.lam, cl.beta, 2.0))
        # P[M > e^t] = P[M >= floor(e^t) + 1]; past 2**52 the shift is below
        # double resolution
        if t < 36.0:
            log_k = math.log(math.floor(math.exp(t)) + 1)
        else:
            log_k = t
        return (1.0 + cl.beta * log_k) ** (-cl.lam)
    if isinstance(cl, BoundedUniform):
        if t < 0:
            above = cl.m_max
        elif t >= math.log(cl.m_max + 1):
            above = 0
        else:
            above = cl.m_max - math.floor(math.exp(t))
        return max(above, 0) / (cl.m_max + 1)
    raise TypeError(f"unsupported cookie law {cl!r}")


def sample_cookie_example(lam: float, beta: float, u: float, saturate: bool = False) -> int:
    """Inverse-CDF draw from the example cookie law.

    Raises OverflowError when the draw exceeds 2**62, unless ``saturate`` is
    set, in which case the cap itself is returned.
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u}")
    if not (lam > 0 and beta > 0):
        raise ValueError("lam and beta must be positive")
    return int(_sample_example(float(lam), float(beta), float(u), saturate))


def coin_flip(coins: CoinSource, env, z: int, i: int) -> int:
    if i < 1:
        raise ValueError("visit index starts at 1")
    s = env.site(z)
    if i <= s.m:
        return 1
    return 1 if coin_u(coins.seed_word, coins.tag_word, int(z), int(i)) < s.p else -1
