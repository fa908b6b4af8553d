"""Classifiers applied to (denoised) features and the accuracy metric."""

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, EmptyClass, EmptyTrainingSet, LengthMismatch
from .linalg import as_mat


def check_label_matrix(y):
    """Validate a ``{-1, +1}`` one-vs-rest target matrix and return it."""
    y = as_mat(y, "y")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("label matrix entries must be -1 or +1")
    if y.shape[1] >= 2 and not np.all((y == 1.0).sum(axis=1) == 1):
        raise ValueError("label matrix rows need exactly one +1")
    return y


def predict_linear(x_denoised, z_l):
    """Row-wise argmax of ``x @ z_l``; ties go to the lowest class index.

    A single-column ``z_l`` is a binary ``+/-1`` scorer and predicts class
    1 for positive scores, 0 otherwise.
    """
    x = as_mat(x_denoised, "x_denoised")
    z = as_mat(z_l, "z_l")
    if x.shape[1] != z.shape[0]:
        raise DimensionMismatch(f"x has {x.shape[1]} columns, z_l has {z.shape[0]} rows")
    scores = x @ z
    if z.shape[1] == 1:
        return (scores[:, 0] > 0).astype(np.int64)
    return np.argmax(scores, axis=1).astype(np.int64)


def _sq_dists(a, b):
    d = (a * a).sum(axis=1)[:, None] - 2.0 * a @ b.T + (b * b).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def nn_classify(train_x, train_labels, test_x, chunk=2048):
    """1-nearest-neighbour labels under Euclidean distance.

    Ties go to the lowest training index.
    """
    train_x = as_mat(train_x, "train_x")
    test_x = as_mat(test_x, "test_x")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if train_x.shape[0] == 0:
        raise EmptyTrainingSet("nearest neighbour needs at least one training row")
    if train_labels.shape != (train_x.shape[0],):
        raise LengthMismatch("train_labels length differs from train_x rows")
    if train_x.shape[1] != test_x.shape[1]:
        raise DimensionMismatch("train and test feature counts differ")
    out = np.empty(test_x.shape[0], dtype=np.int64)
    for start in range(0, test_x.shape[0], chunk):
        block = test_x[start:start + chunk]
        # argmin returns the first minimum, i.e. the lowest training index
        out[start:start + chunk] = train_labels[np.argmin(_sq_dists(block, train_x), axis=1)]
    return out


def domain_class_means(train_x, train_labels, train_domains):
    """Centroids for every (class, domain) pair that has training rows.

    Returns ``(means, classes)`` where ``classes[k]`` is the class of row
    ``k`` of ``means``.
    """
    train_x = as_mat(train_x, "train_x")
    labels = np.asarray(train_labels, dtype=np.int64)
    domains = np.asarray(train_domains).astype(str)
    means, owners = [], []
    for c in np.unique(labels):
        for dom in np.unique(domains[labels == c]):
            mask = (labels == c) & (domains == dom)
            means.append(train_x[mask].mean(axis=0))
            owners.append(c)
    return np.asarray(means), np.asarray(owners, dtype=np.int64)


def dscm_scores(train_x, train_labels, train_domains, test_x, sigma=1.0, class_count=None):
    """Log-scores ``log sum_d exp(-||x - mu_{c,d}||^2 / (2 sigma^2))`` per class."""
    train_x = as_mat(train_x, "train_x")
    test_x = as_mat(test_x, "test_x")
    labels = np.asarray(train_labels, dtype=np.int64)
    if train_x.shape[0] == 0:
        raise EmptyTrainingSet("DSCM needs training rows")
    if labels.shape != (train_x.shape[0],) or np.asarray(train_domains).shape != labels.shape:
        raise LengthMismatch("train labels/domains must have one entry per training row")
    if train_x.shape[1] != test_x.shape[1]:
        raise DimensionMismatch("train and test feature counts differ")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n_classes = int(labels.max()) + 1 if class_count is None else class_count
    present = np.unique(labels)
    missing = np.setdiff1d(np.arange(n_classes), present)
    if missing.size:
        raise EmptyClass(f"class {missing[0]} has no training instance")
    means, owners = domain_class_means(train_x, labels, train_domains)
    logits = -_sq_dists(test_x, means) / (2.0 * sigma * sigma)
    scores = np.empty((test_x.shape[0], n_classes))
    for c in range(n_classes):
        scores[:, c] = logsumexp(logits[:, owners == c], axis=1)
    return scores


def dscm_classify(train_x, train_labels, train_domains, test_x, sigma=1.0, class_count=None):
    """Domain-specific class means classifier.

    Each class scores a test point by summing Gaussian kernels to its class
    centroids in every domain where it was observed; the best score wins,
    ties going to the lowest class index.
    """
    scores = dscm_scores(train_x, train_labels, train_domains, test_x, sigma, class_count)
    return np.argmax(scores, axis=1).astype(np.int64)


def accuracy(predicted, truth):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise LengthMismatch(f"{predicted.shape} predictions vs {truth.shape} labels")
    if truth.size == 0:
        raise LengthMismatch("accuracy of an empty set is undefined")
    return float(np.mean(predicted == truth))
