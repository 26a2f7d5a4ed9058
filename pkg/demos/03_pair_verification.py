# Learn the joint distance/similarity metric on synthetic "identity" descriptors
# and pick a verification threshold on the training pairs.
import numpy as np

from lhs import metric
from lhs.classify import verify_threshold, verification_report

rng = np.random.default_rng(3)
n_ids, per_id, d0 = 30, 8, 96
# identities differ only inside a 10-d subspace; noise fills all 96 dims,
# so plain l2 distance is dominated by noise while a learned projection is not
basis = np.linalg.qr(rng.normal(0, 1, (d0, 10)))[0]
centers = rng.normal(0, 1, (n_ids, 10)) @ basis.T
ids = np.repeat(np.arange(n_ids), per_id)
x = centers[ids] + 0.3 * rng.normal(0, 1, (len(ids), d0))
x /= np.linalg.norm(x, axis=1, keepdims=True)


def pairs(mask, n):
    idx = np.flatnonzero(mask)
    a, b, y = [], [], []
    while len(y) < n:
        i, j = rng.choice(idx, 2, replace=False)
        same = ids[i] == ids[j]
        if same or len(y) % 2:  # keep the classes roughly balanced
            a.append(i), b.append(j), y.append(1.0 if same else -1.0)
    return x[a], x[b], np.array(y)


xa, xb, y = pairs(ids < 20, 2000)
ta, tb, ty = pairs(ids >= 20, 1000)
print("train pairs: %d same / %d different" % ((y > 0).sum(), (y < 0).sum()))

# a small projection generalizes to unseen identities; try 48 to watch it overfit
init = metric.wpca_init(np.vstack([xa, xb]), 16)
start = metric.MetricModel(*init)
print("WPCA start: mean hinge %.4f" % metric.mean_hinge_loss(start, xa, xb, y))

cfg = metric.SgdConfig(n_iter=200_000, seed=0, log_every=0)
model = metric.sgd_train(xa, xb, y, cfg, init=init)
print("after SGD:  mean hinge %.4f" % metric.mean_hinge_loss(model, xa, xb, y))

t, train_acc = verify_threshold(metric.distance(model, xa, xb), y)
rep = verification_report(metric.distance(model, ta, tb), ty, t)
print("threshold %.3f, train accuracy %.3f, held-out accuracy %.3f, EER %.3f" % (
    t, train_acc, rep.accuracy, rep.eer))

# plain l2 distance for comparison, same threshold rule
l2 = np.linalg.norm(xa - xb, axis=1)
t2, _ = verify_threshold(l2, y)
rep2 = verification_report(np.linalg.norm(ta - tb, axis=1), ty, t2)
print("l2 baseline held-out accuracy %.3f, EER %.3f" % (rep2.accuracy, rep2.eer))
