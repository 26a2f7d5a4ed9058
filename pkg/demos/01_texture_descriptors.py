# Walk through the texture pipeline on generated data: differential vectors,
# LBP/LTP histograms, a small GMM, and LHS descriptors compared by a linear SVM.
import tempfile
import time

import numpy as np

from lhs import harness, patterns, gmm, encoder
from lhs.raster import extract_diff_vectors

out = tempfile.mkdtemp(prefix="lhs_demo_")
entries = harness.generate_synthetic_textures(out, count=16, size=48, seed=1)
cfg = harness.PipelineConfig(n_components=8, mode="circular")
images = harness.load_images([e.path for e in entries], cfg)
labels = np.array([e.label for e in entries])
print(len(images), "images,", len(set(labels)), "classes, written to", out)

# every interior pixel gives one 8-d vector of neighbor-minus-center differences
v = extract_diff_vectors(images[0], "circular")
print("vectors per 48x48 image:", v.shape)
print("first vector:", np.round(v[0], 2))

# the two smooth-noise classes differ only in contrast, so their LBP codes
# (signs of v) look alike while the differences themselves do not
for cls in ("class01", "class02"):
    idx = np.flatnonzero(labels == cls)[:4]
    h = np.mean([patterns.pattern_descriptor(images[i], "circular", "lbp") for i in idx], axis=0)
    spread = np.mean([np.abs(extract_diff_vectors(images[i])).mean() for i in idx])
    print(cls, "mean |v| = %.1f" % spread, " top LBP buckets:", np.argsort(h)[::-1][:5])

# a GMM over pooled vectors, then one Fisher-score descriptor per image
t0 = time.time()
samples = gmm.subsample_features(images, "circular", cfg.train_config())
model = gmm.train_gmm(samples, cfg.train_config(), "circular")
stats = encoder.compute_whitening(model, samples)
print("K=%d GMM on %d vectors in %.1fs, %d EM iterations" % (
    model.n_components, len(samples), time.time() - t0, len(model.loglik_trace) - 1))
print("component weights:", np.round(np.sort(model.weights)[::-1], 3))

d = encoder.encode_image(model, stats, images[0])
print("LHS descriptor length", d.size, "norm %.6f" % np.linalg.norm(d))

# 2 random halves per class, each descriptor kind on the same splits
protocol = harness.Protocol("random-split", 0.5, 2, seed=0)
for kind in ("lbp", "ltp", "lhs"):
    run_cfg = harness.PipelineConfig(kind=kind, n_components=8, mode="circular")
    agg = harness.run_protocol(entries, protocol, run_cfg, images=images)
    print("%-4s accuracy %.3f +- %.3f" % (kind, agg.mean_accuracy, agg.std_accuracy))
