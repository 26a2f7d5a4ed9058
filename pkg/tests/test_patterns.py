import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lhs import patterns
from lhs.raster import extract_diff_vectors


def brute_force_lbp(img):
    """Compare each neighbor intensity with its center, one pixel at a time."""
    h, w = img.shape
    codes = []
    ring = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            code = 0
            for bit, (dr, dc) in enumerate(ring):
                if img[r + dr, c + dc] >= img[r, c]:
                    code |= 1 << bit
            codes.append(code)
    return np.array(codes)


def test_lbp_matches_brute_force(rng):
    for _ in range(200):
        img = rng.integers(0, 4, (5, 5)).astype(float)  # small range forces ties
        codes = patterns.lbp_code(extract_diff_vectors(img))
        np.testing.assert_array_equal(codes, brute_force_lbp(img))


def test_uniform_codes_enumerated():
    uniform = [c for c in range(256)
               if sum(((c >> i) & 1) != ((c >> ((i + 1) % 8)) & 1) for i in range(8)) <= 2]
    assert len(uniform) == 58
    table = patterns.build_uniform_table()
    np.testing.assert_array_equal(table[uniform], np.arange(58))
    others = np.setdiff1d(np.arange(256), uniform)
    assert np.all(table[others] == 58)
    with pytest.raises(ValueError):
        table[0] = 1


def test_ltp_codes():
    v = np.array([6, 5, -6, -5, 0, 100, -100, 5.5])
    pos, neg = patterns.ltp_split_codes(v, 5)
    assert pos == (1 << 0) | (1 << 5) | (1 << 7)
    assert neg == (1 << 2) | (1 << 6)
    with pytest.raises(ValueError):
        patterns.ltp_split_codes(v, -1)


def test_single_vector_and_batch():
    v = np.array([1, -1, 0, -2, 3, -3, 0, 0.0])
    assert patterns.lbp_code(v) == patterns.lbp_code(v[None])[0]


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.integers(0, 255).map(float)),
       st.floats(0.1, 10), st.integers(-50, 50))
def test_code_invariances(img, scale, shift):
    v = extract_diff_vectors(img)
    np.testing.assert_array_equal(patterns.lbp_code(v), patterns.lbp_code(extract_diff_vectors(img * scale)))
    vs = extract_diff_vectors(img + shift)
    np.testing.assert_array_equal(patterns.lbp_code(v), patterns.lbp_code(vs))
    for a, b in zip(patterns.ltp_split_codes(v), patterns.ltp_split_codes(vs)):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 59, elements=st.floats(0, 1e6)).filter(lambda h: h.sum() > 0))
def test_normalized_hist_unit_norm(h):
    assert abs(np.linalg.norm(patterns.normalize_hist(h)) - 1) < 1e-12


def test_normalize_rejects_bad_input():
    with pytest.raises(ValueError):
        patterns.normalize_hist(np.zeros(59))
    with pytest.raises(ValueError):
        patterns.normalize_hist(-np.ones(59))


@pytest.mark.parametrize("variant, dim", [("lbp", 59), ("ltp", 118)])
def test_histogram_sizes(rng, variant, dim):
    img = rng.uniform(0, 255, (12, 10))
    h = patterns.pattern_histogram(img, "circular", variant)
    assert h.shape == (dim,)
    per_half = 1 if variant == "lbp" else 2
    assert h.sum() == per_half * 10 * 8
    d = patterns.pattern_descriptor(img, "rectangular", variant, grid="2x2")
    assert d.shape == (4 * dim,)
    assert abs(np.linalg.norm(d) - 1) < 1e-12
    with pytest.raises(ValueError):
        patterns.pattern_histogram(img, variant="xyz")


def test_transition_counts():
    for c in (0, 255, 0b00011100, 0b11100001):
        assert patterns.is_uniform(c)
    assert not patterns.is_uniform(0b01010000)
    assert all(patterns.circular_transitions(c) % 2 == 0 for c in range(256))
    assert sum(1 for c in range(256) if patterns.circular_transitions(c) == 2) == 56
