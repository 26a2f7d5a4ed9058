"""Joint distance/similarity metric learning for pair verification.

The learned score is

    D(x_i, x_j) = ||L x_i - L x_j||^2 - (V x_i) . (V x_j)

trained with a hinge loss on ``y * (b - D)`` against margin ``m`` by plain
SGD over randomly drawn pairs.
"""

import dataclasses
import logging
import struct

import numpy as np

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-6

_MAGIC = b"LHSMET\x00\x00"
_VERSION = 1


@dataclasses.dataclass
class SgdConfig:
    rate: float = 0.002
    n_iter: int = 1_000_000
    seed: int = 0
    bias: float = 1.0
    margin: float = 0.2
    symmetric_v: bool = False
    log_every: int = 10_000


@dataclasses.dataclass
class MetricModel:
    L: np.ndarray
    V: np.ndarray
    bias: float = 1.0
    margin: float = 0.2

    def __post_init__(self):
        self.L = np.atleast_2d(np.asarray(self.L, dtype=np.float64))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=np.float64))
        if self.L.shape != self.V.shape:
            raise ValueError(f"L {self.L.shape} and V {self.V.shape} must share a shape")

    @property
    def dim(self):
        return self.L.shape[0]

    @property
    def input_dim(self):
        return self.L.shape[1]

    def copy(self):
        return MetricModel(self.L.copy(), self.V.copy(), self.bias, self.margin)

    def save(self, path):
        d, d0 = self.L.shape
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIdd", _VERSION, d, d0, self.bias, self.margin))
            fh.write(np.ascontiguousarray(self.L, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.V, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:8] != _MAGIC:
            raise ValueError(f"{path}: not a metric model file")
        version, d, d0, bias, margin = struct.unpack_from("<IIIdd", buf, 8)
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported metric version {version}")
        body = np.frombuffer(buf, dtype="<f8", offset=8 + 28)
        if body.size != 2 * d * d0:
            raise ValueError(f"{path}: truncated metric payload")
        return cls(body[:d * d0].reshape(d, d0).copy(), body[d * d0:].reshape(d, d0).copy(),
                   bias, margin)


def _check_dim(model, *xs):
    for x in xs:
        if np.shape(x)[-1] != model.input_dim:
            raise ValueError(f"descriptor dimension {np.shape(x)[-1]} != model input {model.input_dim}")


def distance(model, xi, xj):
    """Joint score D_J^2; broadcasts over leading axes of ``xi``/``xj``."""
    _check_dim(model, xi, xj)
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    proj = (xi - xj) @ model.L.T
    vi = xi @ model.V.T
    vj = xj @ model.V.T
    return (proj * proj).sum(-1) - (vi * vj).sum(-1)


def hinge_loss(model, xi, xj, y):
    return np.maximum(0.0, model.margin - y * (model.bias - distance(model, xi, xj)))


def wpca_init(descriptors, d, seed=0, max_samples=None):
    """Whitened PCA projection used to initialize both L and V.

    Rows are the top-``d`` principal directions of (a random subset of)
    ``descriptors``, each divided by the square root of its eigenvalue.
    Eigenvalues are floored at ``EIG_FLOOR`` times the largest.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if len(x) < d:
        raise ValueError(f"WPCA to {d} dims needs at least {d} samples, got {len(x)}")
    if d > x.shape[1]:
        raise ValueError(f"projection dim {d} exceeds input dim {x.shape[1]}")
    if max_samples is not None and len(x) > max_samples:
        rng = np.random.default_rng(seed)
        x = x[np.sort(rng.choice(len(x), max_samples, replace=False))]
    xc = x - x.mean(0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    eig = s ** 2 / max(len(x) - 1, 1)
    if len(eig) < d:
        # fewer samples than target dims: pad with arbitrary orthogonal directions at the floor
        q, _ = np.linalg.qr(np.vstack([vt, np.eye(x.shape[1])]).T)
        vt = q.T[:d]
        eig = np.concatenate([eig, np.zeros(d - len(eig))])
    vt, eig = vt[:d], eig[:d]
    # fix eigenvector signs so the result is a function of the data alone
    signs = np.sign(vt[np.arange(d), np.abs(vt).argmax(1)])
    vt = vt * signs[:, None]
    eig = np.maximum(eig, EIG_FLOOR * max(eig.max(), np.finfo(float).tiny))
    W = vt / np.sqrt(eig)[:, None]
    return W.copy(), W.copy()


def _pair_views(xa, xb, flips_a, flips_b):
    if flips_a is None and flips_b is None:
        return None
    if flips_a is None or flips_b is None:
        raise ValueError("flipped descriptors must be given for both sides of the pairs")
    return ((xa, xb), (xa, flips_b), (flips_a, xb), (flips_a, flips_b))


def sgd_train(xa, xb, y, cfg=None, init=None, flips_a=None, flips_b=None, dim=128):
    """Learn L and V by SGD on the pairwise hinge loss.

    ``xa[n], xb[n], y[n]`` is the n-th training pair with ``y = +1`` for
    the same identity and ``-1`` otherwise. ``init`` is ``(L, V)`` or a
    ``MetricModel``; when omitted, WPCA of the distinct training faces to
    ``min(dim, d0)`` dimensions is used. With flipped
    descriptors, each step uses one of the four flipped/unflipped
    combinations of the drawn pair.

    A step fires only when ``y * (b - D) < m``; it then applies
    ``L -= r y L d d^T`` with ``d = x_i - x_j`` and
    ``V += r y V x_i x_j^T`` (or the symmetrized V gradient when
    ``cfg.symmetric_v``).
    """
    cfg = cfg or SgdConfig()
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(xa) == 0:
        raise ValueError("empty training set")
    if not (len(xa) == len(xb) == len(y)):
        raise ValueError("pair arrays must have equal length")
    if init is None:
        d = min(dim, xa.shape[1])
        init = wpca_init(np.unique(np.vstack([xa, xb]), axis=0), d, seed=cfg.seed)
    if isinstance(init, MetricModel):
        L, V = init.L.copy(), init.V.copy()
    else:
        L, V = (np.array(m, dtype=np.float64) for m in init)
    model = MetricModel(L, V, cfg.bias, cfg.margin)
    _check_dim(model, xa, xb)
    views = _pair_views(xa, xb, flips_a, flips_b)

    rng = np.random.default_rng(cfg.seed)
    r, b, m = cfg.rate, cfg.bias, cfg.margin
    L, V = model.L, model.V
    running = 0.0
    for it in range(cfg.n_iter):
        n = rng.integers(len(y))
        if views is None:
            xi, xj = xa[n], xb[n]
        else:
            side_i, side_j = views[rng.integers(4)]
            xi, xj = side_i[n], side_j[n]
        yn = y[n]
        delta = xi - xj
        ld = L @ delta
        vi = V @ xi
        vj = V @ xj
        dist = ld @ ld - vi @ vj
        slack = m - yn * (b - dist)
        if slack > 0:
            running += slack
            L -= (r * yn) * np.outer(ld, delta)
            if cfg.symmetric_v:
                V += (r * yn) * (np.outer(vi, xj) + np.outer(vj, xi))
            else:
                V += (r * yn) * np.outer(vi, xj)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("sgd iter %d: mean hinge over last %d draws %.5f", it + 1, cfg.log_every,
                     running / cfg.log_every)
            running = 0.0
    return model


def score_pair_flipped(model, xi, xi_flip, xj, xj_flip):
    """Mean D_J^2 over the four flipped/unflipped combinations of a pair."""
    return 0.25 * (distance(model, xi, xj) + distance(model, xi, xj_flip)
                   + distance(model, xi_flip, xj) + distance(model, xi_flip, xj_flip))


def mean_hinge_loss(model, xa, xb, y):
    return float(np.mean(hinge_loss(model, xa, xb, y)))
