import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lhs import encoder, gmm
from lhs.encoder import Descriptor, LhsEncoder, WhiteningStats
from lhs.gmm import TrainConfig
from lhs.raster import cell_index, extract_diff_vectors

from conftest import fd_fisher, random_gmm, sample_gmm


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(3)
    imgs = [rng.uniform(0, 255, (24, 24)) for _ in range(4)]
    samples = gmm.subsample_features(imgs, "circular")
    model = gmm.train_gmm(samples, TrainConfig(n_components=4, seed=0), "circular")
    return model, encoder.compute_whitening(model, samples), imgs


def test_fisher_matches_finite_differences(rng):
    for k in (1, 3):
        model = random_gmm(rng, k)
        v = model.means[0] + rng.normal(0, 1, 8)
        np.testing.assert_allclose(encoder.fisher_score(model, v), fd_fisher(model, v),
                                   rtol=1e-4, atol=1e-8)


def test_layout_and_batch(rng):
    model = random_gmm(rng, 3)
    v = rng.normal(0, 2, (5, 8))
    s = encoder.fisher_scores(model, v)
    assert s.shape == (5, 48)
    np.testing.assert_allclose(s[2], encoder.fisher_score(model, v[2]))
    g = gmm.posteriors(model, v[2])
    # second component's mean block starts at 16
    np.testing.assert_allclose(s[2, 16:24], g[1] * (v[2] - model.means[1]) / model.variances[1])


def test_zero_expected_score(rng):
    model = random_gmm(rng, 2)
    x = sample_gmm(model, 40000, rng)
    s = encoder.fisher_scores(model, x)
    z = s.mean(0) / (s.std(0) / np.sqrt(len(s)))
    assert np.abs(z).max() < 5


def test_whitening_chunked_equals_direct(rng):
    model = random_gmm(rng, 2)
    x = rng.normal(0, 2, (1003, 8))
    st_ = encoder.compute_whitening(model, x, chunk_size=97)
    s = encoder.fisher_scores(model, x)
    np.testing.assert_allclose(st_.mean, s.mean(0), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(st_.std, s.std(0), rtol=1e-10)
    with pytest.raises(ValueError):
        encoder.compute_whitening(model, x[:1])


def test_whitening_floor():
    model = random_gmm(np.random.default_rng(0), 1)
    x = np.tile(model.means[0], (10, 1))  # identical samples: zero spread
    assert np.all(encoder.compute_whitening(model, x).std >= encoder.STATS_FLOOR)


def test_descriptor_dims():
    for k, d0 in zip((4, 8, 16, 24, 32), (1792, 3584, 7168, 10752, 14336)):
        assert encoder.descriptor_dim(k, "7x4") == d0
    assert encoder.descriptor_dim(16) == 256


def test_encode_image_pipeline(trained):
    model, stats, imgs = trained
    d = encoder.encode_image(model, stats, imgs[0])
    expect = stats.apply(encoder.fisher_scores(model, extract_diff_vectors(imgs[0], "circular")).mean(0))
    expect = np.sign(expect) * np.sqrt(np.abs(expect))
    np.testing.assert_allclose(d, expect / np.linalg.norm(expect), rtol=1e-12)


def test_grid_encoding_matches_manual_cells(trained):
    model, stats, imgs = trained
    img = imgs[1][:, :23]  # 23 columns force a center crop for 2 columns of cells
    d = encoder.encode_image(model, stats, img, grid=(3, 2))
    assert d.shape == (6 * 64,)
    cropped, labels = cell_index(img, (3, 2))
    s = encoder.fisher_scores(model, extract_diff_vectors(cropped, "circular"))
    cells = np.concatenate([stats.apply(s[labels == c].mean(0)) for c in range(6)])
    cells = np.sign(cells) * np.sqrt(np.abs(cells))
    np.testing.assert_allclose(d, cells / np.linalg.norm(cells), rtol=1e-10, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (10, 12), elements=st.integers(0, 200).map(float)), st.integers(-40, 55))
def test_shift_invariance_and_unit_norm(trained, img, c):
    model, stats, _ = trained
    a = encoder.encode_image(model, stats, img)
    b = encoder.encode_image(model, stats, img + c)
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1) < 1e-6


def test_mismatches_rejected(trained):
    model, stats, imgs = trained
    with pytest.raises(ValueError):
        encoder.encode_image(model, stats, imgs[0], mode="rectangular")
    with pytest.raises(ValueError):
        encoder.encode_image(model, WhiteningStats(np.zeros(3), np.ones(3)), imgs[0])
    with pytest.raises(ValueError):
        encoder.l2_normalize(np.zeros(4))
    with pytest.raises(ValueError):
        encoder.average_scores(model, np.zeros((0, 8)))


def test_file_roundtrips(tmp_path, trained):
    model, stats, imgs = trained
    stats.save(tmp_path / "s.wst")
    back = WhiteningStats.load(tmp_path / "s.wst")
    assert back.mean.tobytes() == stats.mean.tobytes() and back.std.tobytes() == stats.std.tobytes()
    desc = LhsEncoder(model, stats, (2, 2)).descriptor(imgs[0])
    desc.save(tmp_path / "d.lhsd")
    loaded = Descriptor.load(tmp_path / "d.lhsd")
    assert loaded.grid == (2, 2) and loaded.n_components == 4 and loaded.kind == "lhs"
    np.testing.assert_allclose(loaded.values, desc.values, rtol=1e-6)
    assert loaded.cells().shape == (4, 64)
    with pytest.raises(ValueError):
        Descriptor.load(tmp_path / "s.wst")
