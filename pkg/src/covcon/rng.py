"""Counter-based pseudo-random generation for reproducible ensembles.

Everything downstream of a seed is a pure function of (seed, stream, tag,
position): column i of a sample matrix reads words from the Philox-4x64-10
block cipher keyed by the seed, with the column index and a purpose tag baked
into the counter.  That makes every draw addressable — two processes that
agree on the seed produce bit-identical matrices regardless of scheduling,
chunking, or worker count.

Layout of the 256-bit Philox counter (c0, c1, c2, c3):

    c0 = block position along the stream (increments as words are consumed)
    c1 = 0 (reserved)
    c2 = stream index (e.g. column of the matrix, probe index)
    c3 = purpose tag (TAG_* constants) so distinct uses never collide

Key = (seed, 0).  Each block yields four 64-bit words; floating-point
variates come from fixed bit transforms of those words, documented on the
functions below.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "TAG_COLUMNS",
    "TAG_PROBES",
    "TAG_FRESH",
    "TAG_SEARCH",
    "splitmix64",
    "philox_block",
    "raw_words",
    "words_at",
    "uniform_open",
    "uniform_sym",
    "normal_columns",
    "laplace_from_words",
    "exponential_from_words",
]

MASK64 = 0xFFFFFFFFFFFFFFFF

# Purpose tags (counter word c3).  One tag per independent consumer of a
# seed's stream space; new consumers must claim a fresh tag here.
TAG_COLUMNS = 0  # matrix columns
TAG_PROBES = 1  # random probe directions for norm estimation
TAG_FRESH = 2  # held-out draws (fresh expectation estimates)
TAG_SEARCH = 3  # random-search directions in sparse-norm oracles

# Philox-4x64 round multipliers and Weyl key increments.
_PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
_PHILOX_M1 = np.uint64(0xCA5A826395121157)
_WEYL_0 = np.uint64(0x9E3779B97F4A7C15)
_WEYL_1 = np.uint64(0xBB67AE8584CAA73B)

# SplitMix64 constants (seed-derivation mix).
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB

_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def splitmix64(state: int) -> int:
    """Advance-and-output step of the SplitMix64 sequence.

    Returns the output for the state *after* adding the golden-ratio
    increment, i.e. the first value a SplitMix64 generator seeded with
    ``state`` would emit.  Used to derive well-separated child seeds from
    (master seed, cell, trial) triples.
    """
    z = (state + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX_1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_2) & MASK64
    return z ^ (z >> 31)


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """128-bit product of a scalar constant with an array, as (hi, lo) words."""
    lo = a * b
    ah = a >> _S32
    al = a & _LO32
    bh = b >> _S32
    bl = b & _LO32
    t1 = al * bl
    t2 = ah * bl
    t3 = al * bh
    carry = ((t1 >> _S32) + (t2 & _LO32) + (t3 & _LO32)) >> _S32
    hi = ah * bh + (t2 >> _S32) + (t3 >> _S32) + carry
    return hi, lo


def philox_block(
    c0: np.ndarray,
    c1: np.ndarray,
    c2: np.ndarray,
    c3: np.ndarray,
    key: int,
    rounds: int = 10,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Philox-4x64 applied elementwise to arrays of counters.

    All counter arrays must share a shape and dtype uint64.  Returns the four
    output words per counter.  ``rounds=10`` is the standard full-strength
    variant; lower values exist only for testing the round structure.
    """
    with np.errstate(over="ignore"):
        k0 = np.full_like(c0, np.uint64(key & MASK64))
        k1 = np.zeros_like(c0)
        x0, x1, x2, x3 = c0.copy(), c1.copy(), c2.copy(), c3.copy()
        for _ in range(rounds):
            hi0, lo0 = _mulhilo(_PHILOX_M0, x0)
            hi1, lo1 = _mulhilo(_PHILOX_M1, x2)
            x0 = hi1 ^ x1 ^ k0
            x1 = lo1
            x2 = hi0 ^ x3 ^ k1
            x3 = lo0
            k0 = k0 + _WEYL_0
            k1 = k1 + _WEYL_1
    return x0, x1, x2, x3


def raw_words(seed: int, streams: np.ndarray, tag: int, count: int, start: int = 0) -> np.ndarray:
    """Words [start, start+count) of each stream, shape (len(streams), count).

    Streams are independent positions in counter word c2; ``tag`` fills c3.
    Consumption is block-aligned internally (4 words per Philox block), so any
    (start, count) window of a stream is reproducible in isolation.
    """
    if count <= 0:
        return np.empty((len(streams), 0), dtype=np.uint64)
    streams = np.asarray(streams, dtype=np.uint64)
    first_block = start // 4
    last_block = (start + count - 1) // 4
    nblocks = last_block - first_block + 1
    blocks = np.arange(first_block, first_block + nblocks, dtype=np.uint64)
    c0 = np.broadcast_to(blocks, (len(streams), nblocks))
    c2 = np.broadcast_to(streams[:, None], c0.shape)
    c1 = np.zeros_like(c0)
    c3 = np.full_like(c0, np.uint64(tag))
    x0, x1, x2, x3 = philox_block(
        np.ascontiguousarray(c0), c1, np.ascontiguousarray(c2), c3, seed
    )
    words = np.stack([x0, x1, x2, x3], axis=-1).reshape(len(streams), 4 * nblocks)
    lo = start - 4 * first_block
    return words[:, lo : lo + count]


def words_at(seed: int, streams: np.ndarray, tag: int, positions: np.ndarray) -> np.ndarray:
    """One word per stream, at a per-stream position (gather form of raw_words)."""
    streams = np.asarray(streams, dtype=np.uint64)
    positions = np.asarray(positions, dtype=np.uint64)
    c0 = positions // np.uint64(4)
    lane = (positions % np.uint64(4)).astype(np.intp)
    c1 = np.zeros_like(c0)
    c2 = streams.copy()
    c3 = np.full_like(c0, np.uint64(tag))
    outs = philox_block(c0, c1, c2, c3, seed)
    stacked = np.stack(outs, axis=-1)
    return stacked[np.arange(len(streams)), lane]


def uniform_open(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to the open interval (0, 1).

    Uses the top 53 bits: u = (w >> 11 + 0.5) * 2**-53, so 0 and 1 are
    unattainable and log/inverse-CDF transforms are safe without clamping.
    """
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniform_sym(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to the open interval (-1, 1)."""
    return 2.0 * uniform_open(words) - 1.0


def laplace_from_words(words: np.ndarray) -> np.ndarray:
    """Standard Laplace (density exp(-|t|)/2) by inverse CDF."""
    w = uniform_open(words) - 0.5
    return -np.sign(w) * np.log1p(-2.0 * np.abs(w))


def exponential_from_words(words: np.ndarray) -> np.ndarray:
    """Standard exponential (rate 1) by inverse CDF."""
    return -np.log1p(-uniform_open(words))


def _polar_pairs(words: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Marsaglia polar transform on consecutive word pairs.

    Returns (z1, z2, accept) for each pair; rejected pairs carry zeros.
    """
    npairs = words.shape[-1] // 2
    v1 = uniform_sym(words[..., 0 : 2 * npairs : 2])
    v2 = uniform_sym(words[..., 1 : 2 * npairs : 2])
    s = v1 * v1 + v2 * v2
    accept = (s < 1.0) & (s > 0.0)
    s_safe = np.where(accept, s, 0.5)
    scale = np.sqrt(-2.0 * np.log(s_safe) / s_safe)
    return v1 * scale, v2 * scale, accept


def normal_columns(
    seed: int,
    streams: np.ndarray,
    tag: int,
    count: int,
    initial_pairs: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Standard normal draws per stream: shape (len(streams), count).

    Uses the Marsaglia polar method, consuming each stream's words in pairs
    and keeping accepted pairs in order.  Rejection makes consumption
    data-dependent, so the second return value gives the number of words each
    stream consumed — the next independent draw on the same stream starts
    there.  Streams that exhaust the initial word budget are topped up by
    re-reading a longer prefix; since acceptance is a pure function of the
    prefix, the result is independent of the budget (``initial_pairs`` exists
    so tests can force the top-up path).
    """
    streams = np.asarray(streams, dtype=np.uint64)
    nstream = len(streams)
    if count <= 0:
        return np.empty((nstream, 0)), np.zeros(nstream, dtype=np.int64)
    need_pairs = (count + 1) // 2
    # Acceptance rate is pi/4; the margin makes shortfalls ~1e-7 per stream.
    budget = int(np.ceil(need_pairs / 0.7)) + 16
    if initial_pairs is not None:
        budget = max(1, initial_pairs)

    out = np.empty((nstream, count))
    consumed = np.zeros(nstream, dtype=np.int64)
    pending = np.arange(nstream)
    for _attempt in range(64):
        words = raw_words(seed, streams[pending], tag, 2 * budget)
        z1, z2, accept = _polar_pairs(words)
        rank = np.cumsum(accept, axis=1)
        done = rank[:, -1] >= need_pairs
        if np.any(done):
            drow = np.nonzero(done)[0]
            r_rank = rank[drow]
            sel = accept[drow] & (r_rank <= need_pairs)
            rows, cols = np.nonzero(sel)
            slot = r_rank[rows, cols] - 1
            pairs = np.empty((len(drow), 2 * need_pairs))
            pairs[rows, 2 * slot] = z1[drow][rows, cols]
            pairs[rows, 2 * slot + 1] = z2[drow][rows, cols]
            targets = pending[drow]
            out[targets] = pairs[:, :count]
            # Words consumed = 2 * (1 + column index of the need_pairs-th
            # accepted pair); that index equals the count of columns whose
            # running acceptance rank is still below need_pairs.
            consumed[targets] = 2 * ((r_rank < need_pairs).sum(axis=1) + 1)
        pending = pending[~done]
        if len(pending) == 0:
            return out, consumed
        budget *= 2
    raise RuntimeError("polar sampling failed to accept enough pairs")  # pragma: no cover
