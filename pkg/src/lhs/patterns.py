"""LBP / LTP baselines over the same 3x3 differential vectors used by LHS."""

import functools

import numpy as np

from .raster import SamplingMode, cell_index, extract_diff_vectors, parse_grid

N_UNIFORM = 58
N_BUCKETS = N_UNIFORM + 1
DEFAULT_LTP_T = 5.0

_BIT_WEIGHTS = 1 << np.arange(8)


def lbp_code(v):
    """8-bit code(s); bit i is set iff component i is >= 0.

    Accepts a single 8-vector or an ``(N, 8)`` array.
    """
    v = np.asarray(v)
    return ((v >= 0).astype(np.int64) @ _BIT_WEIGHTS).astype(np.int64)


def ltp_split_codes(v, t=DEFAULT_LTP_T):
    """Positive and negative LTP codes: bits for v > t and v < -t respectively."""
    if t < 0:
        raise ValueError(f"LTP tolerance must be non-negative, got {t}")
    v = np.asarray(v)
    pos = ((v > t).astype(np.int64) @ _BIT_WEIGHTS).astype(np.int64)
    neg = ((v < -t).astype(np.int64) @ _BIT_WEIGHTS).astype(np.int64)
    return pos, neg


def circular_transitions(code):
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


def is_uniform(code):
    # for a circular string, <= 2 transitions means at most one 0->1 and one 1->0
    return circular_transitions(code) <= 2


@functools.lru_cache(maxsize=None)
def _table():
    table = np.full(256, N_UNIFORM, dtype=np.int64)
    bucket = 0
    for code in range(256):
        if is_uniform(code):
            table[code] = bucket
            bucket += 1
    table.setflags(write=False)
    return table


def build_uniform_table():
    """Map each 8-bit code to a bucket: uniform codes to 0..57 ascending, others to 58."""
    return _table()


def pattern_histogram(img, mode=SamplingMode.RECTANGULAR, variant="lbp", t=DEFAULT_LTP_T):
    """Raw bucket counts over interior pixels: 59 bins for LBP, 118 for LTP."""
    vectors = extract_diff_vectors(img, mode)
    return histogram_from_vectors(vectors, variant, t)


def histogram_from_vectors(vectors, variant="lbp", t=DEFAULT_LTP_T):
    table = build_uniform_table()
    if variant == "lbp":
        return np.bincount(table[lbp_code(vectors)], minlength=N_BUCKETS).astype(np.float64)
    if variant == "ltp":
        pos, neg = ltp_split_codes(vectors, t)
        hp = np.bincount(table[pos], minlength=N_BUCKETS)
        hn = np.bincount(table[neg], minlength=N_BUCKETS)
        return np.concatenate([hp, hn]).astype(np.float64)
    raise ValueError(f"unknown pattern variant {variant!r}")


def normalize_hist(h):
    """Square root of the L1-normalized histogram (unit l2 norm)."""
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise ValueError("histogram has negative bins")
    total = h.sum()
    if total <= 0:
        raise ValueError("cannot normalize an all-zero histogram")
    return np.sqrt(h / total)


def pattern_descriptor(img, mode=SamplingMode.RECTANGULAR, variant="lbp", t=DEFAULT_LTP_T, grid=None):
    """Baseline image vector: normalized histograms per cell, concatenated.

    The concatenation is scaled by 1/sqrt(n_cells) so the result has unit
    l2 norm like an LHS descriptor.
    """
    grid = parse_grid(grid)
    img = np.asarray(img, dtype=np.float64)
    if grid is None:
        return normalize_hist(pattern_histogram(img, mode, variant, t))
    img, labels = cell_index(img, grid)
    vectors = extract_diff_vectors(img, mode)
    n_cells = grid[0] * grid[1]
    parts = [normalize_hist(histogram_from_vectors(vectors[labels == c], variant, t))
             for c in range(n_cells)]
    return np.concatenate(parts) / np.sqrt(n_cells)
