import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lhs import raster
from lhs.raster import SamplingMode


def _images(min_side=3, max_side=9):
    shape = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=st.integers(0, 255).map(float)))


def test_ascii_and_binary_pgm_agree():
    img = np.arange(12).reshape(3, 4) * 20
    ascii_pgm = b"P2\n# a comment\n4 3\n255\n" + b" ".join(str(v).encode() for v in img.ravel())
    binary_pgm = b"P5 4 3 255\n" + img.astype(np.uint8).tobytes()
    np.testing.assert_array_equal(raster.parse_netpbm(ascii_pgm), img)
    np.testing.assert_array_equal(raster.parse_netpbm(binary_pgm), img)


def test_sixteen_bit_pgm_is_rescaled():
    raw = np.array([[0, 1000], [65535, 32768]], dtype=">u2")
    img = raster.parse_netpbm(b"P5\n2 2\n65535\n" + raw.tobytes())
    np.testing.assert_allclose(img, raw.astype(float) * 255 / 65535)


def test_ppm_luma():
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], dtype=np.uint8)
    img = raster.parse_netpbm(b"P6\n3 1\n255\n" + rgb.tobytes())
    np.testing.assert_allclose(img, [[0.299 * 255, 0.587 * 255, 0.114 * 255]])
    ascii = raster.parse_netpbm(b"P3 3 1 255 255 0 0 0 255 0 0 0 255")
    np.testing.assert_allclose(ascii, img)


@pytest.mark.parametrize("buf, err", [
    (b"P4\n2 2\n", raster.UnsupportedFormatError),
    (b"P5\n2 x\n255\n", raster.MalformedHeaderError),
    (b"P5\n2 2\n", raster.MalformedHeaderError),
    (b"P5\n2 2\n70000\n", raster.MalformedHeaderError),
    (b"P5\n2 2\n255\n\x00\x01\x02", raster.TruncatedDataError),
    (b"P2\n2 2\n255\n1 2 3", raster.TruncatedDataError),
    (b"P2\n1 1\n10\n11", raster.MalformedHeaderError),
])
def test_malformed_netpbm(buf, err):
    with pytest.raises(err):
        raster.parse_netpbm(buf)


def test_save_load_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, (7, 5)).astype(float)
    raster.save_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(raster.load_image(tmp_path / "a.pgm"), img)


def test_vector_count_and_layout():
    img = np.arange(20, dtype=float).reshape(4, 5) ** 1.5
    v = raster.extract_diff_vectors(img)
    assert v.shape == (2 * 3, 8)
    # brute force for the first center pixel (1, 1)
    expect = [img[1 + dr, 1 + dc] - img[1, 1] for dr, dc in raster.NEIGHBOR_OFFSETS]
    np.testing.assert_array_equal(v[0], expect)
    v2, coords = raster.extract_diff_vectors(img, return_coords=True)
    np.testing.assert_array_equal(coords[:3], [[1, 1], [1, 2], [1, 3]])


def test_circular_diagonal_is_bilinear_at_unit_radius():
    # on a linear ramp a bilinear sample is exact: value = a*x + b*y
    yy, xx = np.mgrid[0:5, 0:5].astype(float)
    img = 3.0 * xx + 7.0 * yy
    v = raster.extract_diff_vectors(img, SamplingMode.CIRCULAR)
    r = 1 / np.sqrt(2)
    for slot in raster.DIAGONAL_SLOTS:
        dr, dc = raster.NEIGHBOR_OFFSETS[slot]
        np.testing.assert_allclose(v[:, slot], 3.0 * dc * r + 7.0 * dr * r, atol=1e-12)


def test_too_small_image():
    with pytest.raises(ValueError):
        raster.extract_diff_vectors(np.zeros((2, 5)))


@settings(max_examples=50, deadline=None)
@given(_images(), st.integers(-100, 100), st.sampled_from(list(SamplingMode)))
def test_intensity_shift_invariance(img, c, mode):
    a = raster.extract_diff_vectors(img, mode)
    b = raster.extract_diff_vectors(img + c, mode)
    np.testing.assert_array_equal(a, b)
    assert len(a) == (img.shape[0] - 2) * (img.shape[1] - 2)


@settings(max_examples=50, deadline=None)
@given(_images())
def test_modes_agree_on_axial_components(img):
    rect = raster.extract_diff_vectors(img, "rectangular")
    circ = raster.extract_diff_vectors(img, "circular")
    np.testing.assert_array_equal(rect[:, raster.AXIAL_SLOTS], circ[:, raster.AXIAL_SLOTS])


@settings(max_examples=50, deadline=None)
@given(_images())
def test_hflip_involution(img):
    np.testing.assert_array_equal(raster.hflip(raster.hflip(img)), img)


@settings(max_examples=100, deadline=None)
@given(st.tuples(*[st.integers(0, 6)] * 4), st.tuples(*[st.integers(0, 6)] * 4))
def test_crop_composes_as_intersection(a, b):
    img = np.arange(100, dtype=float).reshape(10, 10)
    r1 = (a[0], a[1], min(10, a[0] + 1 + a[2]), min(10, a[1] + 1 + a[3]))
    # second roi in the coordinates of the first crop
    w1, h1 = r1[2] - r1[0], r1[3] - r1[1]
    l2, t2 = min(b[0], w1 - 1), min(b[1], h1 - 1)
    r2 = (l2, t2, min(w1, l2 + 1 + b[2]), min(h1, t2 + 1 + b[3]))
    twice = raster.crop(raster.crop(img, r1), r2)
    once = raster.crop(img, (r1[0] + r2[0], r1[1] + r2[1], r1[0] + r2[2], r1[1] + r2[3]))
    np.testing.assert_array_equal(twice, once)


def test_crop_out_of_bounds():
    with pytest.raises(ValueError):
        raster.crop(np.zeros((4, 4)), (0, 0, 5, 4))


def test_center_crop_and_resize():
    img = np.arange(30, dtype=float).reshape(5, 6)
    np.testing.assert_array_equal(raster.center_crop(img, 2, 3), img[1:4, 2:4])
    np.testing.assert_allclose(raster.resize(img, 6, 5), img)
    small = raster.resize(img, 3, 3)
    assert small.shape == (3, 3)
    # corners are preserved by corner-aligned resampling
    assert small[0, 0] == img[0, 0] and small[-1, -1] == img[-1, -1]
    flat = raster.resize(np.full((4, 4), 9.0), 7, 3)
    np.testing.assert_array_equal(flat, 9.0)


def test_parse_grid_and_cells():
    assert raster.parse_grid("7x4") == (7, 4)
    assert raster.parse_grid(None) is None
    with pytest.raises(ValueError):
        raster.parse_grid("7by4")
    img = np.zeros((13, 10))
    cropped, labels = raster.cell_index(img, (2, 3))
    assert cropped.shape == (12, 9)
    assert len(labels) == 10 * 7
    assert set(labels.tolist()) == set(range(6))
    with pytest.raises(ValueError):
        raster.cell_index(np.zeros((8, 8)), (3, 3))
