import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from margda.classify import (
    accuracy,
    check_label_matrix,
    dscm_classify,
    dscm_scores,
    nn_classify,
    predict_linear,
)
from margda.data import make_label_matrix, synth_shift
from margda.errors import DimensionMismatch, EmptyClass, EmptyTrainingSet, LengthMismatch
from margda.models import fit_ridge_marginalized


def _orthogonal(rng, d):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q


def test_label_matrix_check():
    check_label_matrix([[1, -1], [-1, 1]])
    check_label_matrix([[1], [-1]])
    with pytest.raises(ValueError):
        check_label_matrix([[1, 1], [-1, 1]])
    with pytest.raises(ValueError):
        check_label_matrix([[0.5, -1]])


def test_linear_one_hot():
    x = np.eye(4)[[2, 0, 3, 1]]
    np.testing.assert_array_equal(predict_linear(x, np.eye(4)), [2, 0, 3, 1])


def test_linear_tie_lowest_index():
    np.testing.assert_array_equal(predict_linear([[1.0, 1.0]], np.eye(2)), [0])


def test_linear_binary_column():
    np.testing.assert_array_equal(predict_linear([[2.0], [-1.0], [0.0]], [[1.0]]), [1, 0, 0])


def test_linear_invariances():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 4))
    z = rng.standard_normal((4, 3))
    base = predict_linear(x, z)
    np.testing.assert_array_equal(predict_linear(x, 3.7 * z), base)
    # a score offset shared by every column: append a feature whose weights are equal across classes
    xo = np.hstack([x, rng.standard_normal((50, 1))])
    zo = np.vstack([z, np.full((1, 3), 2.5)])
    np.testing.assert_array_equal(predict_linear(xo, zo), base)


def test_linear_shape_error():
    with pytest.raises(DimensionMismatch):
        predict_linear(np.ones((2, 3)), np.ones((2, 2)))


def test_ridge_separable_training_accuracy():
    src, _ = synth_shift(1, 5, 2, 40, 0.0, 0.0, separation=8.0)
    y = make_label_matrix(src.labels, 2)
    z = fit_ridge_marginalized(np.eye(5), src.features, y, 0.0, 1e-3)
    assert accuracy(predict_linear(src.features, z), src.labels) == 1.0


def _brute_nn(train, labels, test):
    out = []
    for t in test:
        best, best_i = np.inf, -1
        for i, r in enumerate(train):
            dist = np.sum((t - r) ** 2)
            if dist < best:
                best, best_i = dist, i
        out.append(labels[best_i])
    return np.array(out)


@pytest.mark.parametrize("seed", range(10))
def test_nn_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    train = rng.standard_normal((int(rng.integers(1, 40)), 3))
    labels = rng.integers(0, 4, train.shape[0])
    test = rng.standard_normal((25, 3))
    np.testing.assert_array_equal(nn_classify(train, labels, test, chunk=7), _brute_nn(train, labels, test))


def test_nn_exact_match_and_ties():
    train = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    labels = np.array([5, 6, 7])
    np.testing.assert_array_equal(nn_classify(train, labels, [[1.0, 1.0], [0.0, 0.0]]), [6, 5])


def test_nn_permutation_invariant():
    rng = np.random.default_rng(3)
    train = rng.standard_normal((30, 4))
    labels = rng.integers(0, 3, 30)
    test = rng.standard_normal((40, 4))
    perm = rng.permutation(30)
    np.testing.assert_array_equal(nn_classify(train[perm], labels[perm], test), nn_classify(train, labels, test))


def test_nn_errors():
    with pytest.raises(EmptyTrainingSet):
        nn_classify(np.zeros((0, 2)), [], np.ones((1, 2)))
    with pytest.raises(LengthMismatch):
        nn_classify(np.ones((2, 2)), [0], np.ones((1, 2)))


def _literal_dscm(train, labels, domains, test, sigma):
    classes = range(labels.max() + 1)
    preds = []
    for x in test:
        scores = []
        for c in classes:
            s = 0.0
            for dom in sorted(set(domains[labels == c])):
                mu = train[(labels == c) & (domains == dom)].mean(axis=0)
                s += np.exp(-np.sum((x - mu) ** 2) / (2 * sigma**2))
            scores.append(s)
        preds.append(int(np.argmax(scores)))
    return np.array(preds)


@pytest.mark.parametrize("seed", range(8))
def test_dscm_matches_literal_formula(seed):
    rng = np.random.default_rng(seed)
    train = rng.standard_normal((40, 3))
    labels = np.arange(40) % 3
    domains = rng.choice(["a", "b"], 40)
    test = rng.standard_normal((30, 3)) * 1.5
    sigma = float(rng.uniform(0.7, 2.0))
    np.testing.assert_array_equal(
        dscm_classify(train, labels, domains, test, sigma), _literal_dscm(train, labels, domains, test, sigma)
    )


def test_dscm_single_domain_is_nearest_mean():
    rng = np.random.default_rng(4)
    train = rng.standard_normal((30, 2))
    labels = np.arange(30) % 3
    test = rng.standard_normal((20, 2))
    means = np.array([train[labels == c].mean(axis=0) for c in range(3)])
    ncm = np.argmin(((test[:, None] - means[None]) ** 2).sum(-1), axis=1)
    for sigma in (0.1, 1.0, 50.0):
        np.testing.assert_array_equal(dscm_classify(train, labels, np.full(30, "s"), test, sigma), ncm)


def test_dscm_point_at_shared_mean():
    train = np.array([[0.0, 0.0], [0.2, 0.0], [20.0, 0.0], [0.0, 20.0]])
    labels = np.array([0, 0, 1, 1])
    domains = np.array(["s", "t", "s", "t"])
    assert dscm_classify(train, labels, domains, [[0.1, 0.0]], 1.0)[0] == 0


def test_dscm_stable_far_away():
    # logsumexp keeps far points from collapsing to all-zero scores
    train = np.array([[0.0], [1.0]])
    pred = dscm_classify(train, [0, 1], ["s", "s"], [[300.0]], sigma=0.5)
    assert pred[0] == 1
    assert np.all(np.isfinite(dscm_scores(train, [0, 1], ["s", "s"], [[300.0]], sigma=0.5)))


def test_dscm_empty_class():
    with pytest.raises(EmptyClass):
        dscm_classify(np.ones((2, 1)), [0, 2], ["s", "s"], [[0.0]], class_count=3)


@pytest.mark.parametrize("seed", range(5))
def test_orthogonal_invariance(seed):
    rng = np.random.default_rng(seed)
    train = rng.standard_normal((30, 4))
    labels = np.arange(30) % 3
    domains = rng.choice(["s", "t"], 30)
    test = rng.standard_normal((20, 4))
    q = _orthogonal(rng, 4)
    np.testing.assert_array_equal(nn_classify(train @ q, labels, test @ q), nn_classify(train, labels, test))
    np.testing.assert_array_equal(
        dscm_classify(train @ q, labels, domains, test @ q), dscm_classify(train, labels, domains, test)
    )


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1], [1, 0]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 1]) == 0.5
    with pytest.raises(LengthMismatch):
        accuracy([0, 1], [0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40), st.randoms())
def test_accuracy_permutation(pairs, rnd):
    pred, truth = map(np.array, zip(*pairs))
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    sp, stt = map(np.array, zip(*shuffled))
    assert accuracy(sp, stt) == accuracy(pred, truth)
