"""Representation-quality probes on frozen backbones."""
from __future__ import annotations

import numpy as np

from .data import LabeledSet
from .errors import ArgumentError
from .losses import representation_std
from .net import MlpNetwork, embed

__all__ = ["knn_accuracy", "probe_accuracy", "representation_std"]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def knn_accuracy(train_emb, train_labels, test_emb, test_labels, k: int = 5, chunk: int = 1024) -> float:
    """Majority vote of the k most cosine-similar training embeddings.

    Ties go to the tied class whose best neighbour ranks highest.
    """
    train_emb = np.asarray(train_emb, dtype=np.float64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    if len(train_emb) == 0 or len(test_emb) == 0:
        raise ArgumentError("k-NN probe needs non-empty train and test sets")
    if not 1 <= k <= len(train_emb):
        raise ArgumentError(f"k={k} must lie in [1, {len(train_emb)}]")
    classes, train_idx = np.unique(train_labels, return_inverse=True)
    C = len(classes)
    tr = _unit_rows(train_emb)
    te = _unit_rows(test_emb)
    correct = 0
    for start in range(0, len(te), chunk):
        sim = te[start : start + chunk] @ tr.T
        top = np.argpartition(-sim, k - 1, axis=1)[:, :k] if k < sim.shape[1] else np.tile(np.arange(sim.shape[1]), (len(sim), 1))
        order = np.argsort(-np.take_along_axis(sim, top, axis=1), axis=1, kind="stable")
        top = np.take_along_axis(top, order, axis=1)
        votes = np.zeros((len(top), C))
        rows = np.repeat(np.arange(len(top)), k)
        cls = train_idx[top].ravel()
        # count plus a rank bonus < 1 so ties favour the nearer neighbour
        bonus = np.tile((k - np.arange(k)) / (k + 1.0) ** 2, len(top))
        np.add.at(votes, (rows, cls), 1.0)
        first = np.full((len(top), C), 0.0)
        np.maximum.at(first, (rows, cls), bonus)
        pred = classes[np.argmax(votes + first, axis=1)]
        correct += int(np.sum(pred == test_labels[start : start + chunk]))
    return correct / len(te)


def probe_accuracy(backbone: MlpNetwork, train_set: LabeledSet, test_set: LabeledSet, k: int = 5) -> float:
    """k-NN accuracy (cosine, k=5 by default) of frozen backbone embeddings."""
    if len(train_set) == 0 or len(test_set) == 0:
        raise ArgumentError("k-NN probe needs non-empty train and test sets")
    if k > len(train_set):
        raise ArgumentError(f"k={k} exceeds the {len(train_set)} training samples")
    return knn_accuracy(embed(backbone, train_set.images), train_set.labels,
                        embed(backbone, test_set.images), test_set.labels, k)
