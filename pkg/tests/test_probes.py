import numpy as np
import pytest

from regionscope.data import LabeledSet
from regionscope.errors import ArgumentError
from regionscope.net import Layer, MlpNetwork
from regionscope.probes import knn_accuracy, probe_accuracy


def brute_knn(tr, ytr, te, yte, k):
    def unit(x):
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    sim = unit(te) @ unit(tr).T
    correct = 0
    for s, y in zip(sim, yte):
        order = sorted(range(len(tr)), key=lambda j: (-s[j], j))[:k]
        counts = {}
        for rank, j in enumerate(order):
            c, first = counts.get(ytr[j], (0, rank))
            counts[ytr[j]] = (c + 1, first)
        pred = max(counts, key=lambda c: (counts[c][0], -counts[c][1]))
        correct += pred == y
    return correct / len(te)


def test_duplicate_point_k1():
    rng = np.random.default_rng(0)
    tr = rng.normal(size=(30, 4))
    y = rng.integers(0, 3, 30)
    assert knn_accuracy(tr, y, tr[:10], y[:10], k=1) == 1.0


def test_matches_brute_force():
    rng = np.random.default_rng(1)
    tr, te = rng.normal(size=(80, 5)), rng.normal(size=(40, 5))
    ytr, yte = rng.integers(0, 4, 80), rng.integers(0, 4, 40)
    for k in (1, 3, 5, 8):
        assert knn_accuracy(tr, ytr, te, yte, k=k, chunk=7) == brute_knn(tr, ytr, te, yte, k)


def test_permuted_labels_near_chance():
    rng = np.random.default_rng(2)
    C = 10
    centers = rng.normal(size=(C, 16)) * 4
    y = rng.integers(0, C, 2000)
    x = centers[y] + rng.normal(size=(2000, 16))
    assert knn_accuracy(x[:1000], y[:1000], x[1000:], y[1000:]) > 0.9
    # unstructured embeddings keep test predictions independent, so the binomial bound applies
    noise = rng.normal(size=(3000, 16))
    acc = knn_accuracy(noise[:2000], rng.permutation(rng.integers(0, C, 2000)), noise[2000:], rng.integers(0, C, 1000))
    p = 1 / C
    assert abs(acc - p) <= 3 * np.sqrt(p * (1 - p) / 1000)


def test_probe_errors():
    ident = MlpNetwork([Layer(np.eye(2), np.zeros(2), relu=False)])
    tr = LabeledSet(np.eye(2), [0, 1])
    with pytest.raises(ArgumentError):
        probe_accuracy(ident, tr, tr, k=3)
    with pytest.raises(ArgumentError):
        knn_accuracy(np.zeros((0, 2)), [], np.eye(2), [0, 1])
    assert probe_accuracy(ident, tr, tr, k=1) == 1.0
