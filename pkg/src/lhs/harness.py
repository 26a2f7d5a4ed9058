"""Dataset manifests, evaluation protocols and synthetic textures.

A protocol run always fits the GMM, the whitening statistics, the
classifier or metric and the verification threshold on training images
only; every fit records which image indices fed it so the separation can
be checked after the fact.
"""

import concurrent.futures
import dataclasses
import logging
import math
import os
import time

import numpy as np
from scipy import ndimage

from . import classify, metric
from .encoder import Descriptor, LhsEncoder, compute_whitening
from .gmm import TrainConfig, subsample_features, train_gmm
from .patterns import DEFAULT_LTP_T, pattern_descriptor
from .raster import as_mode, center_crop, crop, hflip, load_image, parse_grid, resize, save_pgm

log = logging.getLogger(__name__)


def default_threads():
    return max(1, int(os.environ.get("LHS_THREADS", "1")))


def default_seed():
    return int(os.environ.get("LHS_SEED", "0"))


def parallel_map(fn, items, threads=None):
    threads = threads or default_threads()
    if threads <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


# --- files -----------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    group: str = None


def read_manifest(path):
    """Parse ``path<TAB>label[<TAB>group]`` lines; relative paths resolve against the manifest."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3) or not fields[1]:
                raise ValueError(f"{path}:{lineno}: expected 'path<TAB>label[<TAB>group]'")
            p = os.path.abspath(os.path.join(base, fields[0]))
            if p in seen:
                raise ValueError(f"{path}:{lineno}: duplicate path {fields[0]}")
            seen.add(p)
            entries.append(ManifestEntry(p, fields[1], fields[2] if len(fields) == 3 else None))
    if not entries:
        raise ValueError(f"{path}: empty manifest")
    return entries


def write_manifest(path, entries):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w") as fh:
        for e in entries:
            p = os.path.relpath(e.path, base)
            fh.write(f"{p}\t{e.label}" + (f"\t{e.group}" if e.group is not None else "") + "\n")


def read_pairs(path):
    """Parse ``pathA pathB {1|-1}`` lines into a list of ``(a, b, y)``."""
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3 or fields[2] not in ("1", "-1", "+1"):
                raise ValueError(f"{path}:{lineno}: expected 'pathA pathB 1|-1'")
            a, b = (os.path.abspath(os.path.join(base, f)) for f in fields[:2])
            pairs.append((a, b, int(fields[2])))
    if not pairs:
        raise ValueError(f"{path}: no pairs")
    return pairs


def write_pairs(path, pairs):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w") as fh:
        for a, b, y in pairs:
            fh.write(f"{os.path.relpath(a, base)} {os.path.relpath(b, base)} {int(y)}\n")


# --- pipeline --------------------------------------------------------------

@dataclasses.dataclass
class PipelineConfig:
    kind: str = "lhs"
    n_components: int = 16
    mode: str = "circular"
    grid: tuple = None
    max_samples: int = 1_000_000
    em_max_iter: int = 200
    em_tol: float = 1e-6
    kmeans_iter: int = 50
    ltp_t: float = DEFAULT_LTP_T
    c_grid: tuple = classify.DEFAULT_C_GRID
    n_folds: int = 5
    seed: int = 0
    roi: tuple = None          # (left, top, right, bottom), applied first
    center_crop: tuple = None  # (width, height), applied after roi
    resize: tuple = None       # (width, height), applied last
    threads: int = None

    def train_config(self, seed=None):
        return TrainConfig(n_components=self.n_components, max_iter=self.em_max_iter,
                           tol=self.em_tol, kmeans_iter=self.kmeans_iter,
                           seed=self.seed if seed is None else seed, max_samples=self.max_samples)


def preprocess(img, cfg):
    if cfg.roi is not None:
        img = crop(img, cfg.roi)
    if cfg.center_crop is not None:
        img = center_crop(img, *cfg.center_crop)
    if cfg.resize is not None:
        img = resize(img, *cfg.resize)
    return img


def load_images(paths, cfg):
    return parallel_map(lambda p: preprocess(load_image(p), cfg), list(paths), cfg.threads)


def fit_encoder(train_images, cfg, seed=None):
    """Fit the descriptor pipeline on ``train_images``; returns a callable image -> vector.

    LBP/LTP baselines need no fitting. For LHS the GMM and the whitening
    statistics both come from the same subsample of training vectors.
    """
    grid = parse_grid(cfg.grid)
    mode = as_mode(cfg.mode)
    if cfg.kind in ("lbp", "ltp"):
        def encode(img):
            return pattern_descriptor(img, mode, cfg.kind, cfg.ltp_t, grid)
        return encode
    if cfg.kind != "lhs":
        raise ValueError(f"unknown descriptor kind {cfg.kind!r}")
    tcfg = cfg.train_config(seed)
    t0 = time.perf_counter()
    samples = subsample_features(train_images, mode, tcfg)
    model = train_gmm(samples, tcfg, mode)
    stats = compute_whitening(model, samples)
    log.info("fitted K=%d GMM on %d vectors from %d images in %.1fs (%d EM iterations)",
             model.n_components, len(samples), len(train_images), time.perf_counter() - t0,
             len(model.loglik_trace) - 1)
    return LhsEncoder(model, stats, grid)


def encode_all(encoder, images, threads=None):
    return np.array(parallel_map(encoder, images, threads))


@dataclasses.dataclass
class RunResult:
    report: classify.EvalReport
    train_idx: np.ndarray
    test_idx: np.ndarray
    fit_log: dict
    C: float = None


@dataclasses.dataclass
class AggregateReport:
    runs: list
    mean_accuracy: float
    std_accuracy: float

    @classmethod
    def from_runs(cls, runs):
        accs = np.array([r.report.accuracy for r in runs])
        return cls(runs, float(accs.mean()), float(accs.std()))

    def records(self):
        out = {"runs": len(self.runs), "mean_accuracy": self.mean_accuracy,
               "std_accuracy": self.std_accuracy}
        for i, r in enumerate(self.runs):
            out[f"run.{i}.accuracy"] = r.report.accuracy
            if r.C is not None:
                out[f"run.{i}.C"] = r.C
            if r.report.eer is not None:
                out[f"run.{i}.eer"] = r.report.eer
        return out


@dataclasses.dataclass
class Protocol:
    kind: str = "random-split"  # random-split | leave-one-group-out | pair-verification
    fraction: float = 0.5
    runs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random-split", "leave-one-group-out", "pair-verification"):
            raise ValueError(f"unknown protocol {self.kind!r}")
        if self.kind == "random-split" and not 0 < self.fraction < 1:
            raise ValueError(f"split fraction must lie in (0, 1), got {self.fraction}")


def random_splits(labels, fraction, runs, seed):
    """Per-class random train/test splits; yields ``(train_idx, test_idx)``."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    for _ in range(runs):
        train = []
        for cls in sorted(set(labels.tolist())):
            idx = rng.permutation(np.flatnonzero(labels == cls))
            train.extend(idx[:int(round(fraction * len(idx)))])
        train = np.sort(np.array(train, dtype=int))
        test = np.setdiff1d(np.arange(len(labels)), train)
        yield train, test


def group_splits(groups):
    groups = np.asarray(groups, dtype=object)
    for g in sorted(set(groups.tolist())):
        test = np.flatnonzero(groups == g)
        yield np.flatnonzero(groups != g), test


def protocol_splits(entries, protocol):
    labels = [e.label for e in entries]
    if protocol.kind == "random-split":
        return list(random_splits(labels, protocol.fraction, protocol.runs, protocol.seed))
    if protocol.kind == "leave-one-group-out":
        groups = [e.group for e in entries]
        if any(g is None for g in groups):
            raise ValueError("leave-one-group-out needs a group column for every manifest entry")
        return list(group_splits(groups))
    raise ValueError(f"protocol {protocol.kind!r} does not apply to a labeled manifest")


def run_fold(images, labels, train, test, cfg, seed):
    """Fit everything on ``train``, evaluate on ``test``."""
    labels = np.asarray(labels)
    fit_log = {}
    encoder = fit_encoder([images[i] for i in train], cfg, seed=seed)
    if cfg.kind == "lhs":
        fit_log["gmm"] = fit_log["whitening"] = train.copy()
    x = encode_all(encoder, images, cfg.threads)
    C, _ = classify.svm_cv_select_c(x[train], labels[train], cfg.c_grid, cfg.n_folds, seed)
    svm = classify.svm_train(x[train], labels[train], C, seed=seed)
    fit_log["c_selection"] = fit_log["svm"] = train.copy()
    pred = classify.svm_predict(svm, x[test])
    report = classify.eval_report(pred, labels[test].tolist(), classes=svm.classes)
    return RunResult(report, train, test, fit_log, C)


def run_protocol(entries, protocol, cfg, images=None):
    """Evaluate a classification protocol over a manifest.

    ``images`` may hold the already loaded (and preprocessed) images in
    manifest order. Returns an ``AggregateReport`` with mean and standard
    deviation of accuracy over the runs/folds.
    """
    if images is None:
        images = load_images([e.path for e in entries], cfg)
    labels = [e.label for e in entries]
    runs = []
    for r, (train, test) in enumerate(protocol_splits(entries, protocol)):
        t0 = time.perf_counter()
        res = run_fold(images, labels, train, test, cfg, seed=protocol.seed + r)
        log.info("run %d: %s accuracy %.4f (C=%g, %d train / %d test, %.1fs)", r, cfg.kind,
                 res.report.accuracy, res.C, len(train), len(test), time.perf_counter() - t0)
        runs.append(res)
    return AggregateReport.from_runs(runs)


# --- verification ----------------------------------------------------------

def cellwise_distance(xa, xb, n_cells):
    """Mean over cells of the l2 distance between corresponding cell blocks."""
    xa = np.asarray(xa).reshape(*np.shape(xa)[:-1], n_cells, -1)
    xb = np.asarray(xb).reshape(*np.shape(xb)[:-1], n_cells, -1)
    return np.linalg.norm(xa - xb, axis=-1).mean(-1)


@dataclasses.dataclass
class VerificationResult:
    report: classify.EvalReport
    train_accuracy: float
    fit_log: dict
    metric_model: metric.MetricModel = None


def score_pairs(index, pairs, model=None, n_cells=1, flips=None):
    """Distance scores for ``pairs`` using descriptors looked up in ``index``.

    With a metric model the score is D_J^2 (flip-averaged when ``flips`` is
    given); without one it is the mean per-cell l2 distance.
    """
    xa = np.array([index[a] for a, _, _ in pairs])
    xb = np.array([index[b] for _, b, _ in pairs])
    if model is None:
        return cellwise_distance(xa, xb, n_cells)
    if flips is None:
        return metric.distance(model, xa, xb)
    fa = np.array([flips[a] for a, _, _ in pairs])
    fb = np.array([flips[b] for _, b, _ in pairs])
    return metric.score_pair_flipped(model, xa, fa, xb, fb)


def verify_descriptors(train_pairs, test_pairs, index, flips=None, n_cells=1, method="metric",
                       sgd_cfg=None, dim=128):
    """Verification from precomputed descriptors.

    ``index`` maps image path -> descriptor, ``flips`` path -> descriptor of
    the mirrored image. ``method`` is ``"metric"`` (train D_J on the
    training pairs) or ``"unsupervised"`` (per-cell l2 distance).
    """
    fit_log = {}
    model = None
    if method == "metric":
        ytr = np.array([y for _, _, y in train_pairs], dtype=np.float64)
        xa = np.array([index[a] for a, _, _ in train_pairs])
        xb = np.array([index[b] for _, b, _ in train_pairs])
        fa = fb = None
        if flips is not None:
            fa = np.array([flips[a] for a, _, _ in train_pairs])
            fb = np.array([flips[b] for _, b, _ in train_pairs])
        model = metric.sgd_train(xa, xb, ytr, sgd_cfg, flips_a=fa, flips_b=fb, dim=dim)
        fit_log["metric"] = sorted({p for a, b, _ in train_pairs for p in (a, b)})
    elif method != "unsupervised":
        raise ValueError(f"unknown verification method {method!r}")
    s_train = score_pairs(index, train_pairs, model, n_cells, flips)
    threshold, train_acc = classify.verify_threshold(s_train, [y for _, _, y in train_pairs])
    fit_log["threshold"] = sorted({p for a, b, _ in train_pairs for p in (a, b)})
    s_test = score_pairs(index, test_pairs, model, n_cells, flips)
    report = classify.verification_report(s_test, [y for _, _, y in test_pairs], threshold)
    return VerificationResult(report, train_acc, fit_log, model)


def run_pair_protocol(train_pairs, test_pairs, cfg, method="metric", sgd_cfg=None, dim=128,
                      flip=True):
    """End-to-end pair verification from images: fit the encoder on training-pair images."""
    train_paths = sorted({p for a, b, _ in train_pairs for p in (a, b)})
    all_paths = sorted({p for a, b, _ in list(train_pairs) + list(test_pairs) for p in (a, b)})
    images = dict(zip(all_paths, load_images(all_paths, cfg)))
    encoder = fit_encoder([images[p] for p in train_paths], cfg)
    index = dict(zip(all_paths, encode_all(encoder, [images[p] for p in all_paths], cfg.threads)))
    flips = None
    if flip and method == "metric":
        mirrored = [hflip(images[p]) for p in all_paths]
        flips = dict(zip(all_paths, encode_all(encoder, mirrored, cfg.threads)))
    grid = parse_grid(cfg.grid)
    n_cells = 1 if grid is None else grid[0] * grid[1]
    res = verify_descriptors(train_pairs, test_pairs, index, flips, n_cells, method, sgd_cfg, dim)
    if cfg.kind == "lhs":
        res.fit_log["gmm"] = res.fit_log["whitening"] = train_paths
    return res


# --- synthetic data --------------------------------------------------------

DEFAULT_CLASSES = (
    {"kind": "sinusoid", "angle": 30.0, "period": 7.0, "amplitude": 40.0, "noise": 12.0},
    {"kind": "smooth_noise", "sigma": 1.0, "amplitude": 25.0},
    {"kind": "smooth_noise", "sigma": 1.0, "amplitude": 60.0},
    {"kind": "checkerboard", "cell": 5, "jitter": 1.0, "amplitude": 40.0, "noise": 12.0},
)


def _check_spec(spec):
    kind = spec.get("kind")
    required = {
        "sinusoid": ("angle", "period", "amplitude", "noise"),
        "smooth_noise": ("sigma", "amplitude"),
        "checkerboard": ("cell", "jitter", "amplitude", "noise"),
        "constant": ("value",),
    }
    if kind not in required:
        raise ValueError(f"unknown texture kind {kind!r}")
    missing = [k for k in required[kind] if k not in spec]
    if missing:
        raise ValueError(f"{kind} texture spec missing {missing}")


def synth_texture(spec, size, rng):
    """One ``size x size`` texture image from a class spec (float, before quantization)."""
    _check_spec(spec)
    kind = spec["kind"]
    n = size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    if kind == "constant":
        return np.full((n, n), float(spec["value"]))
    if kind == "sinusoid":
        theta = math.radians(spec["angle"])
        phase = rng.uniform(0, 2 * math.pi)
        u = xx * math.cos(theta) + yy * math.sin(theta)
        img = spec["amplitude"] * np.sin(2 * math.pi * u / spec["period"] + phase)
        img += spec["noise"] * rng.standard_normal((n, n))
    elif kind == "smooth_noise":
        field = ndimage.gaussian_filter(rng.standard_normal((n + 16, n + 16)), spec["sigma"])[8:-8, 8:-8]
        img = spec["amplitude"] * field / field.std()
    else:
        cell = spec["cell"]
        oy, ox = rng.uniform(0, 2 * cell, size=2)
        jy = spec["jitter"] * rng.standard_normal((n, n))
        jx = spec["jitter"] * rng.standard_normal((n, n))
        parity = (np.floor((yy + oy + jy) / cell) + np.floor((xx + ox + jx) / cell)) % 2
        img = spec["amplitude"] * (2 * parity - 1) + spec["noise"] * rng.standard_normal((n, n))
    return np.clip(128.0 + img, 0, 255)


def generate_synthetic_textures(out_dir, class_specs=DEFAULT_CLASSES, count=64, size=64, seed=0):
    """Write ``count`` PGM images per class plus ``manifest.tsv``; returns the entries.

    Every image draws from its own generator seeded by (seed, class, image),
    so output is reproducible and independent of generation order.
    """
    class_specs = list(class_specs)
    if len(class_specs) < 2:
        raise ValueError("need at least two texture classes")
    for spec in class_specs:
        _check_spec(spec)
    if count < 1 or size < 3:
        raise ValueError("count must be positive and size at least 3")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for c, spec in enumerate(class_specs):
        label = spec.get("name", f"class{c:02d}")
        for i in range(count):
            rng = np.random.default_rng([seed, c, i])
            path = os.path.join(out_dir, f"{label}_{i:04d}.pgm")
            save_pgm(path, synth_texture(spec, size, rng))
            entries.append(ManifestEntry(path, label, str(i % 4)))
    write_manifest(os.path.join(out_dir, "manifest.tsv"), entries)
    return entries


def save_descriptor_dir(out_dir, paths, descriptors, flipped=None):
    """Write one descriptor file per image plus ``index.tsv`` (image path -> file[, flipped file])."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    used = set()
    for i, (path, desc) in enumerate(zip(paths, descriptors)):
        stem = os.path.splitext(os.path.basename(path))[0]
        name = stem if stem not in used else f"{stem}_{i}"
        used.add(name)
        desc.save(os.path.join(out_dir, name + ".lhsd"))
        row = [os.path.abspath(path), name + ".lhsd"]
        if flipped is not None:
            flipped[i].save(os.path.join(out_dir, name + ".flip.lhsd"))
            row.append(name + ".flip.lhsd")
        lines.append("\t".join(row))
    with open(os.path.join(out_dir, "index.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_descriptor_dir(desc_dir):
    """Return ``(index, flips, meta)``: path -> vector maps and one example ``Descriptor``."""
    index, flips = {}, {}
    meta = None
    with open(os.path.join(desc_dir, "index.tsv")) as fh:
        for line in fh:
            fields = line.rstrip("\n").split("\t")
            if len(fields) < 2:
                continue
            d = Descriptor.load(os.path.join(desc_dir, fields[1]))
            meta = meta or d
            index[os.path.abspath(fields[0])] = d.values
            if len(fields) > 2:
                flips[os.path.abspath(fields[0])] = Descriptor.load(os.path.join(desc_dir, fields[2])).values
    return index, (flips or None), meta
