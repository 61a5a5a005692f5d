"""Hot inner loops of the simulator.

Every kernel exists twice: a loop version compiled with numba and a
vectorised numpy version.  Both are pure functions of their inputs, so the
two backends produce identical transcripts for identical seeds.

Set ``DISTMON_DISABLE_NUMBA=1`` to force the numpy path (also used
automatically when numba cannot be imported).
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("DISTMON_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# SplitMix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_ONE = np.uint64(1)
_SIX = np.uint64(6)
_LOW6 = np.uint64(63)

# count of trailing zeros for every 16-bit word (ctz(0) := 16)
_CTZ16 = np.zeros(1 << 16, dtype=np.int64)
_CTZ16[0] = 16
for _b in range(16):
    _CTZ16[1 << _b :: 1 << (_b + 1)] = _b
del _b


def word_dtype(cap: int) -> type:
    """Smallest unsigned dtype whose width covers the ``cap - 1`` bits a height needs."""
    need = max(cap - 1, 1)
    for bits, dt in ((8, np.uint8), (16, np.uint16), (32, np.uint32)):
        if need <= bits:
            return dt
    return np.uint64


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _ctz_numpy(words: np.ndarray) -> np.ndarray:
    bits = words.dtype.itemsize * 8
    if bits <= 16:
        return _CTZ16[words]
    w = words.astype(np.uint64, copy=False)
    low = w & (~w + _ONE)
    exp = np.frexp(low.astype(np.float64))[1].astype(np.int64) - 1
    return np.where(w == 0, bits, exp)


def _decode_heights_numpy(words, cap):
    out = 1 + _ctz_numpy(np.asarray(words))
    return np.minimum(out, cap).astype(np.int64)


def _rowwise_max_ties_numpy(keys):
    keys = np.asarray(keys)
    if keys.shape[1] == 0:
        return np.zeros(keys.shape[0], np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
    best = keys.max(axis=1)
    rows, cols = np.nonzero(keys == best[:, None])
    return best.astype(np.int64), rows.astype(np.int64), cols.astype(np.int64)


def _group_max_mask_numpy(groups, keys, n_groups):
    best = np.full(n_groups, np.iinfo(np.int64).min, dtype=np.int64)
    np.maximum.at(best, groups, keys)
    return keys == best[groups]


def _group_disagreements_numpy(groups, vals, n_groups):
    if groups.size == 0:
        return 0
    hi = np.full(n_groups, np.iinfo(np.int64).min, dtype=np.int64)
    lo = np.full(n_groups, np.iinfo(np.int64).max, dtype=np.int64)
    np.maximum.at(hi, groups, vals)
    np.minimum.at(lo, groups, vals)
    seen = hi != np.iinfo(np.int64).min
    return int(np.count_nonzero(hi[seen] != lo[seen]))


def _splitmix_numpy(seed, index):
    z = np.uint64(seed) + (index.astype(np.uint64) + _ONE) * _GOLDEN
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def _public_bits_numpy(seed, positions):
    pos = positions.astype(np.uint64)
    words = _splitmix_numpy(seed, pos >> _SIX)
    return ((words >> (pos & _LOW6)) & _ONE).astype(np.int64)


def _zero_run_heights_numpy(seed, starts, cap):
    starts = np.asarray(starts, dtype=np.int64)
    if cap <= 1 or starts.size == 0:
        return np.ones(starts.shape, dtype=np.int64)
    flat = starts.ravel()
    bits = _public_bits_numpy(seed, flat[:, None] + np.arange(cap - 1, dtype=np.int64))
    ones = bits == 1
    run = np.where(ones.any(axis=1), ones.argmax(axis=1), cap - 1)
    return (run + 1).reshape(starts.shape).astype(np.int64)


def _zero_block_flags_numpy(seed, starts, width):
    starts = np.asarray(starts, dtype=np.int64)
    if width == 0 or starts.size == 0:
        return np.ones(starts.shape, dtype=np.bool_)
    flat = starts.ravel()
    bits = _public_bits_numpy(seed, flat[:, None] + np.arange(width, dtype=np.int64))
    return (bits.sum(axis=1) == 0).reshape(starts.shape)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _splitmix_nb(seed, index):
        z = seed + (index + _ONE) * _GOLDEN
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        return z ^ (z >> _S31)

    @njit(cache=True)
    def _public_bit_nb(seed, pos):
        p = np.uint64(pos)
        w = _splitmix_nb(seed, p >> _SIX)
        return (w >> (p & _LOW6)) & _ONE

    @njit(cache=True)
    def _decode_heights_nb(words, cap):
        flat = words.ravel()
        out = np.empty(flat.size, dtype=np.int64)
        for k in range(flat.size):
            w = np.uint64(flat[k])
            h = 1
            while h < cap and (w & _ONE) == 0:
                w = w >> _ONE
                h += 1
            out[k] = h
        return out.reshape(words.shape)

    @njit(cache=True)
    def _rowwise_max_ties_nb(keys):
        nrow, ncol = keys.shape
        best = np.zeros(nrow, dtype=np.int64)
        total = 0
        for r in range(nrow):
            if ncol == 0:
                continue
            m = keys[r, 0]
            c = 0
            for j in range(ncol):
                k = keys[r, j]
                if k > m:
                    m = k
                    c = 1
                elif k == m:
                    c += 1
            best[r] = m
            total += c
        rows = np.empty(total, dtype=np.int64)
        cols = np.empty(total, dtype=np.int64)
        pos = 0
        for r in range(nrow):
            for j in range(ncol):
                if keys[r, j] == best[r]:
                    rows[pos] = r
                    cols[pos] = j
                    pos += 1
        return best, rows, cols

    @njit(cache=True)
    def _group_max_mask_nb(groups, keys, n_groups):
        best = np.full(n_groups, np.iinfo(np.int64).min, dtype=np.int64)
        for k in range(groups.size):
            g = groups[k]
            if keys[k] > best[g]:
                best[g] = keys[k]
        out = np.empty(groups.size, dtype=np.bool_)
        for k in range(groups.size):
            out[k] = keys[k] == best[groups[k]]
        return out

    @njit(cache=True)
    def _group_disagreements_nb(groups, vals, n_groups):
        first = np.zeros(n_groups, dtype=np.int64)
        seen = np.zeros(n_groups, dtype=np.bool_)
        bad = np.zeros(n_groups, dtype=np.bool_)
        for k in range(groups.size):
            g = groups[k]
            if not seen[g]:
                seen[g] = True
                first[g] = vals[k]
            elif vals[k] != first[g]:
                bad[g] = True
        return int(bad.sum())

    @njit(cache=True)
    def _zero_run_heights_nb(seed, starts, cap):
        flat = starts.ravel()
        out = np.empty(flat.size, dtype=np.int64)
        for k in range(flat.size):
            run = 0
            while run < cap - 1 and _public_bit_nb(seed, flat[k] + run) == 0:
                run += 1
            out[k] = run + 1
        return out.reshape(starts.shape)

    @njit(cache=True)
    def _zero_block_flags_nb(seed, starts, width):
        flat = starts.ravel()
        out = np.ones(flat.size, dtype=np.bool_)
        for k in range(flat.size):
            for b in range(width):
                if _public_bit_nb(seed, flat[k] + b) != 0:
                    out[k] = False
                    break
        return out.reshape(starts.shape)


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def decode_heights(words: np.ndarray, cap: int, backend: str | None = None) -> np.ndarray:
    """Map uniform random words to capped geometric(1/2) heights: ``min(cap, 1 + ctz(w))``."""
    if _use_numba(backend):
        return _decode_heights_nb(np.ascontiguousarray(words), np.int64(cap))
    return _decode_heights_numpy(words, cap)


def rowwise_max_ties(keys: np.ndarray, backend: str | None = None):
    """Per row: the maximum key, plus (row, col) of every entry attaining it."""
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    if _use_numba(backend):
        return _rowwise_max_ties_nb(keys)
    return _rowwise_max_ties_numpy(keys)


def group_max_mask(groups: np.ndarray, keys: np.ndarray, n_groups: int, backend: str | None = None) -> np.ndarray:
    """Boolean mask of entries whose key equals the maximum key of their group."""
    groups = np.ascontiguousarray(groups, dtype=np.int64)
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    if _use_numba(backend):
        return _group_max_mask_nb(groups, keys, np.int64(n_groups))
    return _group_max_mask_numpy(groups, keys, n_groups)


def group_disagreements(groups: np.ndarray, vals: np.ndarray, n_groups: int, backend: str | None = None) -> int:
    """Number of groups whose members do not all carry the same value."""
    groups = np.ascontiguousarray(groups, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.int64)
    if _use_numba(backend):
        return int(_group_disagreements_nb(groups, vals, np.int64(n_groups)))
    return _group_disagreements_numpy(groups, vals, n_groups)


def public_words(seed: int, index: np.ndarray) -> np.ndarray:
    """SplitMix64 output words at the given stream indices (random access)."""
    return _splitmix_numpy(np.uint64(seed), np.asarray(index, dtype=np.uint64))


def zero_run_heights(seed: int, starts: np.ndarray, cap: int, backend: str | None = None) -> np.ndarray:
    """Height ``min(cap, 1 + zero-run length)`` read from the public bit stream at each start."""
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    if _use_numba(backend):
        return _zero_run_heights_nb(np.uint64(seed), starts, np.int64(cap))
    return _zero_run_heights_numpy(np.uint64(seed), starts, cap)


def zero_block_flags(seed: int, starts: np.ndarray, width: int, backend: str | None = None) -> np.ndarray:
    """True where the ``width`` public bits starting at each position are all zero."""
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    if _use_numba(backend):
        return _zero_block_flags_nb(np.uint64(seed), starts, np.int64(width))
    return _zero_block_flags_numpy(np.uint64(seed), starts, width)


def _use_numba(backend: str | None) -> bool:
    if backend is None:
        return HAVE_NUMBA
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")
