"""Diagonal-covariance Gaussian mixtures over differential vectors."""

import dataclasses
import logging
import struct

import numpy as np
from scipy.special import logsumexp

from .raster import SamplingMode, as_mode, extract_diff_vectors

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4
DIM = 8

_MODEL_MAGIC = b"LHSGMM\x00\x00"
_MODEL_VERSION = 1
_MODE_CODES = {SamplingMode.RECTANGULAR: 0, SamplingMode.CIRCULAR: 1}


@dataclasses.dataclass
class TrainConfig:
    n_components: int = 16
    max_iter: int = 200
    tol: float = 1e-6
    kmeans_iter: int = 50
    seed: int = 0
    max_samples: int = 1_000_000


@dataclasses.dataclass
class GmmModel:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, d)
    variances: np.ndarray  # (K, d), diagonal
    mode: SamplingMode = SamplingMode.RECTANGULAR
    loglik_trace: list = dataclasses.field(default_factory=list, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        self.mode = as_mode(self.mode)
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.variances.shape != (k, d):
            raise ValueError("inconsistent GMM parameter shapes")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def save(self, path):
        k, d = self.means.shape
        with open(path, "wb") as fh:
            fh.write(_MODEL_MAGIC)
            fh.write(struct.pack("<IIIB", _MODEL_VERSION, k, d, _MODE_CODES[self.mode]))
            for arr in (self.weights, self.means, self.variances):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:8] != _MODEL_MAGIC:
            raise ValueError(f"{path}: not a GMM model file")
        version, k, d, mode = struct.unpack_from("<IIIB", buf, 8)
        if version != _MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        body = np.frombuffer(buf, dtype="<f8", offset=8 + 13)
        if body.size != k + 2 * k * d:
            raise ValueError(f"{path}: truncated model payload")
        mode = {v: m for m, v in _MODE_CODES.items()}[mode]
        return cls(body[:k].copy(), body[k:k + k * d].reshape(k, d).copy(),
                   body[k + k * d:].reshape(k, d).copy(), mode)


def subsample_features(images, mode=SamplingMode.RECTANGULAR, cfg=None):
    """Pool the differential vectors of ``images`` and keep at most ``cfg.max_samples``.

    The selection is uniform without replacement and depends only on the seed.
    """
    cfg = cfg or TrainConfig()
    images = list(images)
    if not images:
        raise ValueError("no training images given")
    pooled = np.concatenate([extract_diff_vectors(img, mode) for img in images])
    if len(pooled) <= cfg.max_samples:
        return pooled
    rng = np.random.default_rng(cfg.seed)
    keep = np.sort(rng.choice(len(pooled), size=cfg.max_samples, replace=False))
    return pooled[keep]


def _sq_dists(x, centers):
    d = x @ (-2.0 * centers.T)
    d += (x * x).sum(1)[:, None]
    d += (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0, out=d)


def _cluster_sums(x, labels, k):
    return np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(x.shape[1])], 1)


def _kmeans_pp(x, k, rng):
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[j:j + 1])[:, 0])
    return centers


def kmeans(x, k, seed=0, n_iter=50):
    """k-means++ seeding followed by Lloyd iterations.

    Returns ``(centers, labels)``. Empty clusters are reseeded with the point
    farthest from its current center.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least {k} samples for k-means, got {len(x)}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    x_sq = (x * x).sum(1)
    labels = None
    for _ in range(n_iter):
        # |x|^2 is constant per row, so it is left out of the argmin
        partial = x @ (-2.0 * centers.T)
        partial += (centers * centers).sum(1)
        new_labels = partial.argmin(1)
        counts = np.bincount(new_labels, minlength=k)
        own = np.maximum(partial[np.arange(len(x)), new_labels] + x_sq, 0.0)
        while np.any(counts == 0):
            j = np.flatnonzero(counts == 0)[0]
            # never steal the last member of another cluster
            own_ok = np.where(counts[new_labels] > 1, own, -1.0)
            far = own_ok.argmax()
            new_labels[far] = j
            own[far] = 0.0
            counts = np.bincount(new_labels, minlength=k)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = _cluster_sums(x, labels, k) / counts[:, None]
    return centers, labels


def kmeans_init(samples, k, seed=0, n_iter=50, mode=SamplingMode.RECTANGULAR):
    """Initial mixture from k-means: centroids, cluster fractions and within-cluster variances."""
    x = np.asarray(samples, dtype=np.float64)
    centers, labels = kmeans(x, k, seed=seed, n_iter=n_iter)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    variances = np.empty_like(centers)
    for j in range(k):
        members = x[labels == j]
        variances[j] = ((members - centers[j]) ** 2).mean(0)
    return GmmModel(counts / counts.sum(), centers, np.maximum(variances, VARIANCE_FLOOR), mode)


def _log_joint(model, x):
    """log(alpha_k) + log N(x | mu_k, Sigma_k), shape (N, K)."""
    diff = x[:, None, :] - model.means[None]
    quad = (diff * diff / model.variances).sum(2)
    log_norm = -0.5 * (model.dim * np.log(2 * np.pi) + np.log(model.variances).sum(1))
    return np.log(model.weights) + log_norm - 0.5 * quad


def _log_joint_expanded(model, x, x2):
    """Same as ``_log_joint`` via matrix products, without the (N, K, d) temporary."""
    prec = 1.0 / model.variances
    out = x2 @ (-0.5 * prec.T)
    out += x @ (model.means * prec).T
    out += (np.log(model.weights)
            - 0.5 * (model.dim * np.log(2 * np.pi) + np.log(model.variances).sum(1)
                     + (model.means ** 2 * prec).sum(1)))
    return out


def _normalize_log(lj):
    """Turn log joints into responsibilities in place; returns per-row log-likelihoods."""
    top = lj.max(1, keepdims=True)
    lj -= top
    np.exp(lj, out=lj)
    total = lj.sum(1, keepdims=True)
    lj /= total
    return (np.log(total) + top)[:, 0]


def log_density(model, v):
    """log p(v | model); ``v`` is one vector or an ``(N, d)`` array."""
    v = np.asarray(v, dtype=np.float64)
    out = logsumexp(_log_joint(model, np.atleast_2d(v)), axis=1)
    return out[0] if v.ndim == 1 else out


def posteriors(model, v):
    """Component responsibilities, normalized in the log domain."""
    v = np.asarray(v, dtype=np.float64)
    lj = _log_joint(model, np.atleast_2d(v))
    gamma = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return gamma[0] if v.ndim == 1 else gamma


class EMDivergence(FloatingPointError):
    pass


def em_fit(samples, init, cfg=None):
    """Run EM from ``init``; the returned model carries the mean log-likelihood trace.

    Stops when the relative change of the mean log-likelihood drops below
    ``cfg.tol`` or after ``cfg.max_iter`` iterations. Variances are floored
    at every M-step.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(samples, dtype=np.float64)
    x2 = x * x
    n = len(x)
    model = GmmModel(init.weights.copy(), init.means.copy(), init.variances.copy(), init.mode)
    trace = []
    for it in range(cfg.max_iter):
        resp = _log_joint_expanded(model, x, x2)
        ll = float(_normalize_log(resp).mean())
        if not np.isfinite(ll) or not np.all(np.isfinite(resp)):
            raise EMDivergence(f"non-finite responsibilities at EM iteration {it}")
        if trace and abs(ll - trace[-1]) < cfg.tol * abs(trace[-1]):
            trace.append(ll)
            break
        trace.append(ll)

        nk = resp.sum(0) + 10 * np.finfo(float).eps
        means = (resp.T @ x) / nk[:, None]
        variances = (resp.T @ x2) / nk[:, None] - means ** 2
        model = GmmModel(nk / n, means, np.maximum(variances, VARIANCE_FLOOR), model.mode)
    else:
        trace.append(float(log_density(model, x).mean()))
    model.loglik_trace = trace
    log.debug("EM: %d iterations, final mean log-likelihood %.6f", len(trace) - 1, trace[-1])
    return model


def train_gmm(samples, cfg=None, mode=SamplingMode.RECTANGULAR):
    """k-means initialization followed by EM."""
    cfg = cfg or TrainConfig()
    init = kmeans_init(samples, cfg.n_components, seed=cfg.seed, n_iter=cfg.kmeans_iter, mode=mode)
    return em_fit(samples, init, cfg)
