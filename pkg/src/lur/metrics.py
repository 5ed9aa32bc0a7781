"""Classification, calibration, uncertainty and OOD-detection metrics.

OOD convention: OOD instances are the positive class and a higher score
means "more OOD". Ties are resolved by midranks (ROC-AUC) or by inclusive
``>=`` thresholds (PR-AUC, FPR95).
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInputError

LOWER_IS_BETTER = frozenset({"ace", "fpr95"})


def _entropy_of(p):
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=-1)


def predictive_entropy(probs):
    """Entropy of the member-averaged distribution for one S x C matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None, :]
    return float(_entropy_of(probs.mean(axis=0)))


def entropy_scores(probs):
    """Predictive entropy per instance for an N x S x C batch."""
    return _entropy_of(np.asarray(probs, dtype=np.float64).mean(axis=1))


def latent_variance_score(latent_reps):
    """Mean over dimensions of the variance across the n+1 representations.

    The variance is the population variance over the n+1 rows.
    """
    reps = np.asarray(latent_reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[0] < 2:
        raise InvalidInputError("latent variance needs at least one transformed representation")
    return float(reps.var(axis=0).mean())


def latent_variance_scores(latent_reps):
    reps = np.asarray(latent_reps, dtype=np.float64)
    if reps.ndim != 3 or reps.shape[1] < 2:
        raise InvalidInputError("latent variance needs at least one transformed representation")
    return reps.var(axis=1).mean(axis=1)


@dataclass(frozen=True, eq=False)
class ScoredPredictions:
    mean_probs: np.ndarray  # (N, C)
    labels: np.ndarray  # (N,)
    uncertainty: np.ndarray  # (N,)

    @property
    def predicted(self):
        return np.argmax(self.mean_probs, axis=1)

    @property
    def confidence(self):
        return self.mean_probs.max(axis=1)

    @property
    def correct(self):
        return self.predicted == self.labels


def accuracy_and_macro_f1(predicted, labels, num_classes=None):
    """Accuracy and unweighted mean of per-class F1.

    Classes are ``range(num_classes)`` if given, otherwise every class that
    appears in either ``predicted`` or ``labels``. A class with zero
    precision and recall contributes F1 = 0.
    """
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.size == 0 or predicted.shape != labels.shape:
        raise InvalidInputError("need equally sized, non-empty prediction and label arrays")
    acc = float(np.mean(predicted == labels))
    classes = range(num_classes) if num_classes is not None else np.union1d(predicted, labels)
    f1s = []
    for c in classes:
        tp = np.sum((predicted == c) & (labels == c))
        fp = np.sum((predicted == c) & (labels != c))
        fn = np.sum((predicted != c) & (labels == c))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return acc, float(np.mean(f1s))


def ace(confidence, correct, bins=10):
    """Adaptive calibration error with equal-count confidence bins."""
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    n = confidence.size
    if n == 0:
        raise InvalidInputError("ACE needs at least one prediction")
    order = np.argsort(confidence, kind="stable")
    gaps = [abs(correct[idx].mean() - confidence[idx].mean()) for idx in np.array_split(order, min(bins, n))]
    return float(np.mean(gaps))


def raulc(uncertainty, correct):
    """Relative area under the lift curve; NaN if all or none are correct.

    Instances are ranked by increasing uncertainty; the lift at k is the
    accuracy of the k most certain divided by the overall accuracy. Tied
    uncertainties contribute their expectation over all tied orderings.
    The area is normalised by that of the ordering putting every correct
    prediction first.
    """
    u = np.asarray(uncertainty, dtype=np.float64)
    c = np.asarray(correct, dtype=np.float64)
    n = u.size
    n_correct = c.sum()
    if n == 0 or n_correct == 0 or n_correct == n:
        return math.nan
    order = np.argsort(u, kind="stable")
    u_sorted, c_sorted = u[order], c[order]
    _, starts, sizes = np.unique(u_sorted, return_index=True, return_counts=True)
    group_correct = np.add.reduceat(c_sorted, starts)
    group_of = np.repeat(np.arange(starts.size), sizes)
    before = np.concatenate([[0.0], np.cumsum(group_correct)[:-1]])
    k = np.arange(1, n + 1)
    expected_cum = before[group_of] + (k - starts[group_of]) * group_correct[group_of] / sizes[group_of]
    acc = n_correct / n
    aulc = np.mean(expected_cum / (k * acc) - 1.0)
    oracle = np.mean(np.minimum(k, n_correct) / (k * acc) - 1.0)
    return float(aulc / oracle)


def _split_scores(in_scores, ood_scores):
    a = np.asarray(in_scores, dtype=np.float64).ravel()
    b = np.asarray(ood_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("OOD metrics need non-empty in-distribution and OOD scores")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("OOD scores must be finite")
    return a, b


def roc_auc(in_scores, ood_scores):
    """P(ood > in) + 0.5 P(ood == in), via midranks."""
    a, b = _split_scores(in_scores, ood_scores)
    ranks = rankdata(np.concatenate([a, b]))
    n_in, n_ood = a.size, b.size
    return float((ranks[n_in:].sum() - n_ood * (n_ood + 1) / 2.0) / (n_in * n_ood))


def pr_auc(in_scores, ood_scores):
    """Average precision over descending distinct score thresholds."""
    a, b = _split_scores(in_scores, ood_scores)
    scores = np.concatenate([a, b])
    is_ood = np.concatenate([np.zeros(a.size), np.ones(b.size)])
    order = np.argsort(-scores, kind="stable")
    scores, is_ood = scores[order], is_ood[order]
    # last index of each block of equal scores
    last = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    tp = np.cumsum(is_ood)[last]
    predicted_pos = last + 1
    precision = tp / predicted_pos
    recall = tp / b.size
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def fpr_at_tpr(in_scores, ood_scores, tpr=0.95):
    """FPR at the largest threshold whose TPR (fraction of OOD >= t) reaches ``tpr``."""
    a, b = _split_scores(in_scores, ood_scores)
    need = math.ceil(round(tpr * b.size, 9))
    need = min(max(need, 1), b.size)
    threshold = np.sort(b)[::-1][need - 1]
    return float(np.mean(a >= threshold))


def fpr_at_95_tpr(in_scores, ood_scores):
    return fpr_at_tpr(in_scores, ood_scores, 0.95)


def ood_metrics(in_scores, ood_scores):
    return {
        "roc_auc": roc_auc(in_scores, ood_scores),
        "pr_auc": pr_auc(in_scores, ood_scores),
        "fpr95": fpr_at_95_tpr(in_scores, ood_scores),
    }


def aggregate_sem2(values):
    """Mean and two standard errors of the mean (``None`` for fewer than two values)."""
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return math.nan, None
    mean = float(v.mean())
    if v.size < 2:
        return mean, None
    return mean, float(2.0 * v.std(ddof=1) / math.sqrt(v.size))
