"""Fisher-score encoding of differential vectors into LHS image descriptors.

Per component k the score holds the gradient of log p(v) with respect to
the mean (8 values) followed by the gradient with respect to the diagonal
precision (8 values), giving 16*K values per vector. Mixture-weight
gradients are not part of the encoding.
"""

import dataclasses
import struct

import numpy as np

from .gmm import GmmModel, posteriors
from .raster import SamplingMode, as_mode, cell_index, extract_diff_vectors, parse_grid

STATS_FLOOR = 1e-8

_STATS_MAGIC = b"LHSWST\x00\x00"
_DESC_MAGIC = b"LHSDESC\x00"
_FORMAT_VERSION = 1
_MODE_CODES = {SamplingMode.RECTANGULAR: 0, SamplingMode.CIRCULAR: 1}
_KIND_CODES = {"lhs": 0, "lbp": 1, "ltp": 2}


def descriptor_dim(n_components, grid=None):
    """Length of an LHS descriptor: 16 * K per cell."""
    grid = parse_grid(grid)
    n_cells = 1 if grid is None else grid[0] * grid[1]
    return 16 * n_components * n_cells


def fisher_scores(model, vectors):
    """Per-vector Fisher scores, shape ``(N, 16*K)`` (or ``(16*K,)`` for one vector)."""
    v = np.asarray(vectors, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    gamma = posteriors(model, v)[:, :, None]
    diff = v[:, None, :] - model.means[None]
    d_mean = gamma * diff / model.variances
    d_prec = 0.5 * gamma * (model.variances - diff * diff)
    out = np.concatenate([d_mean, d_prec], axis=2).reshape(len(v), -1)
    return out[0] if single else out


def fisher_score(model, v):
    return fisher_scores(model, v)


def average_scores(model, vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) == 0:
        raise ValueError("cannot average the scores of an empty vector set")
    return fisher_scores(model, np.atleast_2d(vectors)).mean(0)


@dataclasses.dataclass
class WhiteningStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (x - self.mean) / self.std

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_STATS_MAGIC)
            fh.write(struct.pack("<II", _FORMAT_VERSION, len(self.mean)))
            fh.write(np.ascontiguousarray(self.mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.std, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:8] != _STATS_MAGIC:
            raise ValueError(f"{path}: not a whitening stats file")
        version, dim = struct.unpack_from("<II", buf, 8)
        if version != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported stats version {version}")
        body = np.frombuffer(buf, dtype="<f8", offset=16)
        if body.size != 2 * dim:
            raise ValueError(f"{path}: truncated stats payload")
        return cls(body[:dim].copy(), body[dim:].copy())


def compute_whitening(model, samples, chunk_size=20000):
    """Per-coordinate mean and standard deviation of the Fisher scores of ``samples``.

    Scores are produced chunk by chunk and merged with the pairwise
    (Chan et al.) update, so memory stays bounded for a million samples.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 2:
        raise ValueError("whitening needs at least 2 samples")
    n = 0
    mean = None
    m2 = None
    for start in range(0, len(samples), chunk_size):
        s = fisher_scores(model, samples[start:start + chunk_size])
        nb = len(s)
        mb = s.mean(0)
        m2b = ((s - mb) ** 2).sum(0)
        if mean is None:
            n, mean, m2 = nb, mb, m2b
            continue
        delta = mb - mean
        tot = n + nb
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta * delta * (n * nb / tot)
        n = tot
    std = np.sqrt(m2 / n)
    return WhiteningStats(mean, np.maximum(std, STATS_FLOOR))


def power_normalize(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.sqrt(np.abs(x))


def l2_normalize(x):
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt(np.dot(x, x))
    if norm == 0:
        raise ValueError("cannot l2-normalize a zero vector")
    return x / norm


def encode_image(model, stats, img, mode=None, grid=None):
    """LHS descriptor of one image.

    Every interior pixel's differential vector is scored and the scores
    averaged per grid cell (the whole image when ``grid`` is None). Each
    cell average is whitened with the shared ``stats``, cells are
    concatenated in row-major order, and the signed square root and l2
    normalization are applied once to the full vector. Images that do not
    divide evenly into the grid are center-cropped first.
    """
    mode = model.mode if mode is None else as_mode(mode)
    if mode != model.mode:
        raise ValueError(f"model was trained on {model.mode.value} samples, asked to encode {mode.value}")
    dim = 16 * model.n_components
    if stats.mean.shape != (dim,):
        raise ValueError(f"whitening stats have dimension {stats.mean.shape[0]}, model needs {dim}")
    grid = parse_grid(grid)
    img = np.asarray(img, dtype=np.float64)
    if grid is None:
        cells = stats.apply(average_scores(model, extract_diff_vectors(img, mode)))[None]
    else:
        img, labels = cell_index(img, grid)
        scores = fisher_scores(model, extract_diff_vectors(img, mode))
        n_cells = grid[0] * grid[1]
        counts = np.bincount(labels, minlength=n_cells)
        sums = np.zeros((n_cells, dim))
        np.add.at(sums, labels, scores)
        cells = stats.apply(sums / counts[:, None])
    return l2_normalize(power_normalize(cells.ravel()))


@dataclasses.dataclass
class Descriptor:
    values: np.ndarray
    kind: str = "lhs"
    grid: tuple = (1, 1)
    n_components: int = 0
    mode: SamplingMode = SamplingMode.RECTANGULAR

    @property
    def n_cells(self):
        return self.grid[0] * self.grid[1]

    def cells(self):
        """Values split per cell, shape ``(n_cells, len // n_cells)``."""
        return np.asarray(self.values).reshape(self.n_cells, -1)

    def save(self, path):
        values = np.ascontiguousarray(self.values, dtype="<f4")
        with open(path, "wb") as fh:
            fh.write(_DESC_MAGIC)
            fh.write(struct.pack("<IIIIIBB", _FORMAT_VERSION, values.size, self.grid[0], self.grid[1],
                                 self.n_components, _MODE_CODES[as_mode(self.mode)],
                                 _KIND_CODES[self.kind]))
            fh.write(values.tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:8] != _DESC_MAGIC:
            raise ValueError(f"{path}: not a descriptor file")
        version, dim, rows, cols, k, mode, kind = struct.unpack_from("<IIIIIBB", buf, 8)
        if version != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported descriptor version {version}")
        values = np.frombuffer(buf, dtype="<f4", offset=8 + 22)
        if values.size != dim:
            raise ValueError(f"{path}: expected {dim} values, found {values.size}")
        modes = {v: m for m, v in _MODE_CODES.items()}
        kinds = {v: n for n, v in _KIND_CODES.items()}
        return cls(values.astype(np.float64), kinds[kind], (rows, cols), k, modes[mode])


@dataclasses.dataclass
class LhsEncoder:
    """A trained GMM plus whitening statistics, ready to encode images."""

    model: GmmModel
    stats: WhiteningStats
    grid: tuple = None

    def __call__(self, img):
        return encode_image(self.model, self.stats, img, grid=self.grid)

    def descriptor(self, img):
        grid = parse_grid(self.grid) or (1, 1)
        return Descriptor(self(img), "lhs", grid, self.model.n_components, self.model.mode)
