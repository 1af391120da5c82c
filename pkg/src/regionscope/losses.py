"""Training objectives with closed-form gradients.

Every loss returns ``(value, grads)`` where ``grads`` holds dLoss/dInput
for each array argument, in argument order. Branches treated as constants
(stop-gradient targets, momentum keys) get exact zeros.
"""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError, ContractError, DegenerateError, NumericError, ShapeError


def _logsumexp(S: np.ndarray, axis: int = 1) -> np.ndarray:
    m = S.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(S - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _softmax(S: np.ndarray) -> np.ndarray:
    e = np.exp(S - S.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalise; returns (unit rows, row norms). Zero rows raise."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise NumericError("cannot normalise a zero-norm or non-finite vector")
    return x / norms[:, None], norms


def normalize_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Chain dL/d(x/|x|) back to dL/dx."""
    proj = np.sum(unit * grad_unit, axis=1, keepdims=True)
    return (grad_unit - unit * proj) / norms[:, None]


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"inputs must share one shape, got {sorted(shapes)}")


def loss_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if C < 2:
        raise ArgumentError("cross entropy needs at least two classes")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ArgumentError(f"labels must lie in [0, {C})")
    lse = _logsumexp(logits)
    loss = float(np.mean(lse - logits[np.arange(B), labels]))
    grad = _softmax(logits)
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


def loss_triplet(anchor, positive, negative, margin: float) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Mean hinge max(0, |a-p| - |a-n| + margin) with Euclidean distances."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (anchor, positive, negative))
    _same_shape(a, p, n)
    B = a.shape[0]
    dap_vec, dan_vec = a - p, a - n
    dap = np.linalg.norm(dap_vec, axis=1)
    dan = np.linalg.norm(dan_vec, axis=1)
    hinge = dap - dan + margin
    loss = float(np.mean(np.maximum(hinge, 0.0)))
    live = (hinge > 0).astype(np.float64)[:, None] / B
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.where(dap[:, None] > 0, dap_vec / dap[:, None], 0.0)
        un = np.where(dan[:, None] > 0, dan_vec / dan[:, None], 0.0)
    ga = live * (up - un)
    return loss, (ga, -live * up, live * un)


def loss_supcon(embeddings, labels, temperature: float) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over L2-normalised embeddings.

    Each anchor contrasts against every other sample in the batch and
    averages the log-probability of its same-class partners. Anchors
    without a partner are skipped.
    """
    if temperature <= 0:
        raise ArgumentError("temperature must be positive")
    z, norms = l2_normalize(embeddings)
    labels = np.asarray(labels)
    B = z.shape[0]
    S = z @ z.T / temperature
    off = ~np.eye(B, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off
    npos = pos.sum(axis=1)
    valid = npos > 0
    if not np.any(valid):
        raise DegenerateError("no anchor in the batch has a same-class partner")
    Sm = np.where(off, S, -np.inf)
    lse = _logsumexp(Sm)
    per_anchor = lse - np.where(pos, S, 0.0).sum(axis=1) / np.maximum(npos, 1)
    A = valid.sum()
    loss = float(per_anchor[valid].sum() / A)
    P = np.exp(Sm - lse[:, None])
    G = (P - pos / np.maximum(npos, 1)[:, None]) * valid[:, None] / A
    gz = (G + G.T) @ z / temperature
    return loss, normalize_backward(z, norms, gz)


def loss_ntxent(view1, view2, temperature: float) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """NT-Xent over the 2N normalised views; sample i pairs with i+N."""
    _same_shape(view1, view2)
    if temperature <= 0:
        raise ArgumentError("temperature must be positive")
    N = np.shape(view1)[0]
    if N < 2:
        raise ArgumentError("NT-Xent needs a batch of at least 2")
    z, norms = l2_normalize(np.concatenate([view1, view2]))
    M = 2 * N
    S = z @ z.T / temperature
    Sm = np.where(np.eye(M, dtype=bool), -np.inf, S)
    partner = np.concatenate([np.arange(N, M), np.arange(N)])
    lse = _logsumexp(Sm)
    loss = float(np.mean(lse - S[np.arange(M), partner]))
    G = np.exp(Sm - lse[:, None])
    G[np.arange(M), partner] -= 1.0
    G /= M
    gx = normalize_backward(z, norms, (G + G.T) @ z / temperature)
    return loss, (gx[:N], gx[N:])


class NegativeQueue:
    """Fixed-capacity FIFO of unit-norm key embeddings."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ArgumentError("queue capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self._buf = np.zeros((capacity, dim))
        self._ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def enqueue(self, keys: np.ndarray) -> None:
        keys, _ = l2_normalize(np.atleast_2d(keys))
        if keys.shape[1] != self.dim:
            raise ShapeError(f"queue holds {self.dim}-d keys, got {keys.shape[1]}")
        for k in keys[-self.capacity:]:
            self._buf[self._ptr] = k
            self._ptr = (self._ptr + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def entries(self) -> np.ndarray:
        """Stored keys, oldest first."""
        if self.size < self.capacity:
            return self._buf[: self.size].copy()
        return np.concatenate([self._buf[self._ptr :], self._buf[: self._ptr]])


def loss_moco(query, key, queue: NegativeQueue | np.ndarray, temperature: float) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """InfoNCE with the paired key as positive and queued keys as negatives.

    Keys come from the momentum branch, so their gradient is zero. The
    caller enqueues the keys after the step.
    """
    _same_shape(query, key)
    if temperature <= 0:
        raise ArgumentError("temperature must be positive")
    negs = queue.entries() if isinstance(queue, NegativeQueue) else np.asarray(queue, dtype=np.float64)
    if len(negs) == 0:
        raise ContractError("MoCo loss needs a non-empty negative queue")
    q, qn = l2_normalize(query)
    k, _ = l2_normalize(key)
    B = q.shape[0]
    logits = np.concatenate([np.sum(q * k, axis=1, keepdims=True), q @ negs.T], axis=1) / temperature
    lse = _logsumexp(logits)
    loss = float(np.mean(lse - logits[:, 0]))
    G = _softmax(logits)
    G[:, 0] -= 1.0
    G /= B
    gq = (G[:, :1] * k + G[:, 1:] @ negs) / temperature
    return loss, (normalize_backward(q, qn, gq), np.zeros_like(np.asarray(key, dtype=np.float64)))


def _neg_cosine(p, z):
    """Mean of -cos(p_i, z_i) and its gradient wrt p (z held constant)."""
    ph, pn = l2_normalize(p)
    zh, _ = l2_normalize(z)
    cos = np.sum(ph * zh, axis=1)
    B = ph.shape[0]
    gp = -(zh - cos[:, None] * ph) / pn[:, None] / B
    return -float(cos.mean()), gp


def loss_simsiam(p1, p2, z1, z2) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """-(cos(p1, sg z2) + cos(p2, sg z1)) / 2; projector outputs get no gradient."""
    _same_shape(p1, p2, z1, z2)
    l1, g1 = _neg_cosine(p1, z2)
    l2, g2 = _neg_cosine(p2, z1)
    zeros = np.zeros_like(np.asarray(z1, dtype=np.float64))
    return 0.5 * (l1 + l2), (0.5 * g1, 0.5 * g2, zeros, zeros.copy())


def loss_byol(online_pred, target_proj) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean squared distance between normalised predictions and stop-gradient targets.

    Symmetrise over the two views by stacking [p1; p2] against [t2; t1].
    """
    _same_shape(online_pred, target_proj)
    p, pn = l2_normalize(online_pred)
    t, _ = l2_normalize(target_proj)
    B = p.shape[0]
    diff = p - t
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    gp = normalize_backward(p, pn, 2.0 * diff / B)
    return loss, (gp, np.zeros_like(t))


def representation_std(embeddings: np.ndarray) -> float:
    """Mean over dimensions of the per-dimension std of L2-normalised rows."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ArgumentError("representation_std needs at least two embeddings")
    z, _ = l2_normalize(emb)
    return float(z.std(axis=0).mean())
