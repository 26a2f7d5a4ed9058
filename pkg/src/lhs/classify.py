"""Linear SVMs, cross-validation and verification/classification reports."""

import dataclasses
import warnings

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclasses.dataclass
class LinearSvmModel:
    """One-vs-rest linear classifiers; row c of ``weights`` scores ``classes[c]``."""

    weights: np.ndarray  # (n_classes, d)
    biases: np.ndarray   # (n_classes,)
    classes: list
    C: float = 1.0

    def decision_function(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.weights.shape[1]:
            raise ValueError(f"descriptor dimension {x.shape[1]} != model dimension {self.weights.shape[1]}")
        return x @ self.weights.T + self.biases

    def save(self, path):
        np.savez(path, weights=self.weights, biases=self.biases,
                 classes=np.array([str(c) for c in self.classes]), C=self.C)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(z["weights"], z["biases"], [str(c) for c in z["classes"]], float(z["C"]))


def svm_objective(w, bias, x, y, C):
    margins = y * (x @ w + bias)
    return 0.5 * (w @ w + bias * bias) + C * np.maximum(0.0, 1.0 - margins).sum()


def svm_train(x, labels, C=1.0, seed=0, tol=1e-4, max_epochs=1000):
    """One-vs-rest linear SVMs, solved by dual coordinate descent (liblinear).

    Each binary problem minimizes ``0.5 (|w|^2 + b^2) + C sum hinge``; the
    bias is an extra constant-1 feature and is regularized with ``w``.
    Classes are kept in sorted label order.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("SVM training needs at least two classes")
    weights = np.empty((len(classes), x.shape[1]))
    biases = np.empty(len(classes))
    for c, cls in enumerate(classes):
        y = np.where(labels == cls, 1, -1)
        svc = LinearSVC(C=C, loss="hinge", dual=True, tol=tol, max_iter=max_epochs,
                        intercept_scaling=1.0, random_state=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            svc.fit(x, y)
        weights[c] = svc.coef_[0]
        biases[c] = svc.intercept_[0]
    return LinearSvmModel(weights, biases, classes, C)


def svm_predict(model, x):
    """Labels by argmax of the class scores; ties go to the earlier class."""
    scores = model.decision_function(x)
    pred = [model.classes[i] for i in scores.argmax(1)]
    return pred[0] if np.ndim(x) == 1 else pred


def kfold_indices(labels, n_folds=5, seed=0):
    """Stratified fold assignment: a fold id per sample.

    Each class is shuffled and dealt round-robin over the folds, continuing
    where the previous class stopped so fold sizes stay balanced.
    """
    labels = np.asarray(labels)
    if len(labels) < n_folds:
        raise ValueError(f"{len(labels)} samples cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), dtype=int)
    offset = 0
    for cls in sorted(set(labels.tolist())):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        fold[idx] = (offset + np.arange(len(idx))) % n_folds
        offset += len(idx)
    return fold


def svm_cv_select_c(x, labels, c_grid=DEFAULT_C_GRID, n_folds=5, seed=0):
    """C from ``c_grid`` with the best mean validation accuracy (smallest C on ties).

    Returns ``(best_C, mean_accuracies)`` with accuracies aligned to the sorted grid.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    fold = kfold_indices(labels, n_folds, seed)
    grid = sorted(c_grid)
    scores = np.zeros(len(grid))
    for f in range(n_folds):
        train, test = fold != f, fold == f
        if len(set(labels[train].tolist())) < 2:
            raise ValueError(f"fold {f} leaves fewer than two classes for training")
        for g, C in enumerate(grid):
            model = svm_train(x[train], labels[train], C, seed=seed)
            pred = np.asarray(svm_predict(model, x[test]))
            scores[g] += np.mean(pred == labels[test])
    scores /= n_folds
    # argmax returns the first (smallest C) of tied maxima
    return grid[int(np.argmax(scores))], scores


def _threshold_candidates(scores):
    s = np.unique(scores)
    mids = 0.5 * (s[:-1] + s[1:])
    span = max(s[-1] - s[0], 1.0)
    return np.concatenate([[s[0] - span], mids, [s[-1] + span]])


def threshold_accuracy(scores, same, threshold):
    """Accuracy when pairs scoring strictly below ``threshold`` are called 'same'."""
    return float(np.mean((np.asarray(scores) < threshold) == np.asarray(same)))


def verify_threshold(scores, labels):
    """Distance threshold maximizing training accuracy (lowest threshold on ties).

    ``labels`` are +1 for same and -1 for different pairs; a pair is called
    'same' when its score is below the threshold. Candidates are the
    midpoints between consecutive distinct scores plus one threshold below
    and one above all scores. Returns ``(threshold, training_accuracy)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(labels) > 0
    if same.all() or not same.any():
        raise ValueError("threshold selection needs both same and different pairs")
    cands = _threshold_candidates(scores)
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    same_sorted = same[order]
    # pairs below each candidate, via cumulative counts
    below = np.searchsorted(s_sorted, cands, side="left")
    same_below = np.concatenate([[0], np.cumsum(same_sorted)])[below]
    diff_total = (~same).sum()
    diff_below = below - same_below
    correct = same_below + (diff_total - diff_below)
    best = int(np.argmax(correct))
    return float(cands[best]), float(correct[best] / len(scores))


def roc_eer(scores, labels):
    """Equal error rate for distance scores (lower = same).

    False-accept and false-reject rates are evaluated at every distinct
    threshold; the crossing is linearly interpolated between the two
    neighboring operating points.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(labels) > 0
    if same.all() or not same.any():
        raise ValueError("EER needs both same and different pairs")
    cands = _threshold_candidates(scores)
    s_same = np.sort(scores[same])
    s_diff = np.sort(scores[~same])
    far = np.searchsorted(s_diff, cands, side="left") / len(s_diff)
    frr = 1.0 - np.searchsorted(s_same, cands, side="left") / len(s_same)
    gap = far - frr
    i = int(np.argmax(gap >= 0))
    if i == 0:
        return float(far[0])
    g0, g1 = gap[i - 1], gap[i]
    t = g0 / (g0 - g1)
    return float(far[i - 1] + t * (far[i] - far[i - 1]))


@dataclasses.dataclass
class EvalReport:
    accuracy: float
    n: int
    classes: list = dataclasses.field(default_factory=list)
    confusion: np.ndarray = None
    per_class_accuracy: dict = dataclasses.field(default_factory=dict)
    threshold: float = None
    eer: float = None

    def records(self, prefix=""):
        out = {f"{prefix}accuracy": self.accuracy, f"{prefix}n": self.n}
        for cls, acc in self.per_class_accuracy.items():
            out[f"{prefix}class.{cls}.accuracy"] = acc
        if self.threshold is not None:
            out[f"{prefix}threshold"] = self.threshold
        if self.eer is not None:
            out[f"{prefix}eer"] = self.eer
        return out


def eval_report(predictions, truth, classes=None):
    """Accuracy, confusion matrix (rows = truth) and per-class accuracy."""
    predictions = list(predictions)
    truth = list(truth)
    if len(predictions) != len(truth):
        raise ValueError(f"{len(predictions)} predictions for {len(truth)} ground-truth labels")
    classes = list(classes) if classes is not None else sorted(set(truth) | set(predictions))
    index = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predictions, truth):
        conf[index[t], index[p]] += 1
    totals = conf.sum(1)
    per_class = {c: float(conf[i, i] / totals[i]) for i, c in enumerate(classes) if totals[i]}
    acc = float(np.trace(conf) / len(truth)) if truth else 0.0
    return EvalReport(acc, len(truth), classes, conf, per_class)


def verification_report(scores, labels, threshold):
    """Report for pair scores given a threshold chosen on training pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = np.where(scores < threshold, 1, -1)
    rep = eval_report(pred.tolist(), labels.astype(int).tolist(), classes=[-1, 1])
    rep.threshold = float(threshold)
    rep.eer = roc_eer(scores, labels)
    return rep
