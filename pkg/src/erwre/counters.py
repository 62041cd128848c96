"""Counter-based random numbers.

Every variate is a pure function of a small tuple of integer words, hashed
through repeated splitmix64 finalizer rounds.  No generator state exists, so
any query order gives the same answers and replicas never share a stream.
"""
import numba
import numpy as np

MASK64 = (1 << 64) - 1

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# Domain words keep the different uses of one seed apart.
DOMAIN_P = 1
DOMAIN_M = 2
DOMAIN_COIN = 3
DOMAIN_SPLIT = 4


@numba.njit(cache=True, nogil=True)
def mix64(x):
    x = (x ^ (x >> _S30)) * _MUL1
    x = (x ^ (x >> _S27)) * _MUL2
    return x ^ (x >> _S31)


@numba.njit(cache=True, nogil=True)
def prefix3(seed, domain, tag):
    """Hash state after absorbing (seed, domain, tag); reusable across (a, b)."""
    h = mix64(seed + _GAMMA)
    h = mix64((h ^ np.uint64(domain)) + _GAMMA)
    return mix64((h ^ tag) + _GAMMA)


@numba.njit(cache=True, nogil=True)
def finish2(prefix, a, b):
    h = mix64((prefix ^ np.uint64(np.int64(a))) + _GAMMA)
    return mix64((h ^ np.uint64(np.int64(b))) + _GAMMA)


@numba.njit(cache=True, nogil=True)
def hash5(seed, domain, tag, a, b):
    """Hash five 64-bit words; ``a`` and ``b`` may be negative int64."""
    return finish2(prefix3(seed, domain, tag), a, b)


@numba.njit(cache=True, nogil=True)
def to_unit(h):
    """Map a hash to a uniform variate strictly inside (0, 1), 53 bits."""
    return (float(h >> _S11) + 0.5) * _INV53


@numba.njit(cache=True, nogil=True)
def uniform5(seed, domain, tag, a, b):
    return to_unit(hash5(seed, domain, tag, a, b))


def as_word(value):
    """Reduce an arbitrary Python int to an unsigned 64-bit word."""
    return np.uint64(int(value) & MASK64)


def derive_seed(master_seed, index, domain=DOMAIN_SPLIT):
    """Child seed for replica ``index``; distinct indices give unrelated seeds."""
    return int(hash5(as_word(master_seed), domain, as_word(0), int(index), 0))


def _py_mix64(x):
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def py_hash5(seed, domain, tag, a, b):
    """Pure-Python twin of :func:`hash5`, used to cross-check the compiled path."""
    h = _py_mix64((seed + 0x9E3779B97F4A7C15) & MASK64)
    for word in (domain, tag, a, b):
        h = _py_mix64(((h ^ (word & MASK64)) + 0x9E3779B97F4A7C15) & MASK64)
    return h
