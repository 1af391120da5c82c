"""Model assemblies for the seven objectives and their single training step.

An assembly is a backbone plus optional projection/prediction heads and,
for momentum methods, frozen target copies updated by EMA.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import ConfigError, ShapeError
from .net import Gradients, MlpNetwork, backward, forward_batch, init_mlp, sgd_step

OBJECTIVES = ("classifier", "triplet", "supcon", "simclr", "moco", "simsiam", "byol")
SUPERVISED = ("classifier", "triplet", "supcon")
TWO_VIEW = ("simclr", "moco", "simsiam", "byol")

BACKBONES = {
    "moons": [2, 64, 64, 64, 64, 64],
    "mnist": [784, 64, 128, 64],
    "fashion-mnist": [784, 128, 128, 128, 128, 128],
}

# head shapes sized to the published parameter budgets
HEADS = {
    64: {
        "classifier": ([64, 10], None),
        "simclr": ([64, 64, 32], None),
        "moco": ([64, 64, 32], None),
        "simsiam": ([64, 64, 64, 32], [32, 24, 32]),
        "byol": ([64, 128, 32], [32, 64, 32]),
    },
    128: {
        "classifier": ([128, 128, 10], None),
        "simclr": ([128, 128, 64], None),
        "moco": ([128, 128, 64], None),
        "simsiam": ([128, 128, 128, 64], [64, 32, 64]),
        "byol": ([128, 256, 64], [64, 52, 64]),
    },
}


@dataclass
class ModelAssembly:
    objective: str
    backbone: MlpNetwork
    projection: MlpNetwork | None = None
    prediction: MlpNetwork | None = None
    target_backbone: MlpNetwork | None = None
    target_projection: MlpNetwork | None = None
    ema_tau: float = 0.99
    queue: losses.NegativeQueue | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.prediction is not None and self.projection is None:
            raise ConfigError("a prediction head requires a projection head")
        for online, target in ((self.backbone, self.target_backbone),
                               (self.projection, self.target_projection)):
            if target is not None and (online is None or online.sizes != target.sizes):
                raise ShapeError("target networks must mirror their online counterparts")

    def online(self) -> list[MlpNetwork]:
        """Trainable networks in forward order."""
        return [n for n in (self.backbone, self.projection, self.prediction) if n is not None]


def build_assembly(
    objective: str,
    backbone_sizes: list[int],
    rng: np.random.Generator,
    n_classes: int = 10,
    predictor: bool = True,
    ema_tau: float = 0.99,
    queue_capacity: int = 4096,
) -> ModelAssembly:
    """Fresh assembly; heads follow ``HEADS`` for the backbone's output width."""
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    backbone = init_mlp(backbone_sizes, rng)
    emb = backbone_sizes[-1]
    shapes = HEADS.get(emb, {})
    proj = pred = None
    if objective in shapes or objective == "classifier":
        proj_sizes, pred_sizes = shapes.get(objective, ([emb, n_classes], None))
        if objective == "classifier":
            proj_sizes = proj_sizes[:-1] + [n_classes]
        proj = init_mlp(proj_sizes, rng)
        if pred_sizes is not None and predictor:
            pred = init_mlp(pred_sizes, rng)
    asm = ModelAssembly(objective, backbone, proj, pred, ema_tau=ema_tau)
    if objective in ("moco", "byol"):
        asm.target_backbone = backbone.copy()
        asm.target_projection = proj.copy()
    if objective == "moco":
        asm.queue = losses.NegativeQueue(queue_capacity, proj.output_dim)
        asm.queue.enqueue(rng.normal(size=(queue_capacity, proj.output_dim)))
    return asm


def ema_update(target: MlpNetwork, online: MlpNetwork, tau: float) -> MlpNetwork:
    """t <- tau * t + (1 - tau) * o for every parameter, in place."""
    if target.sizes != online.sizes:
        raise ShapeError(f"EMA needs identical shapes, got {target.sizes} vs {online.sizes}")
    for t, o in zip(target.parameters(), online.parameters()):
        t *= tau
        t += (1.0 - tau) * o
    target.bump()
    return target


def _chain_forward(nets, X):
    caches = []
    h = X
    for net in nets:
        h, cache = forward_batch(net, h)
        caches.append(cache)
    return h, caches


def _chain_backward(nets, caches, grad) -> list[Gradients]:
    out = []
    for net, cache in zip(reversed(nets), reversed(caches)):
        g = backward(net, grad, cache)
        out.append(g)
        grad = g.inputs
    return out[::-1]


def _triplets(labels: np.ndarray, rng: np.random.Generator):
    """One (anchor, positive, negative) per anchor that has both partners."""
    a, p, n = [], [], []
    for i, y in enumerate(labels):
        same = np.flatnonzero(labels == y)
        same = same[same != i]
        diff = np.flatnonzero(labels != y)
        if same.size and diff.size:
            a.append(i)
            p.append(int(rng.choice(same)))
            n.append(int(rng.choice(diff)))
    return np.array(a, dtype=np.int64), np.array(p, dtype=np.int64), np.array(n, dtype=np.int64)


def objective_loss(asm: ModelAssembly, x1, x2, labels, cfg, rng=None):
    """Loss, per-network gradients for ``asm.online()``, and diagnostics.

    Does not modify parameters; ``train_step`` applies the update.
    """
    obj = asm.objective
    nets = asm.online()
    info: dict = {}
    if obj == "classifier":
        logits, caches = _chain_forward(nets, x1)
        loss, g = losses.loss_cross_entropy(logits, labels)
        info["embeddings"] = caches[1].inputs[0] if len(caches) > 1 else logits
        return loss, _chain_backward(nets, caches, g), info

    if obj in ("triplet", "supcon"):
        emb, caches = _chain_forward(nets, x1)
        info["embeddings"] = emb
        if obj == "supcon":
            loss, g = losses.loss_supcon(emb, labels, cfg.temperature)
            return loss, _chain_backward(nets, caches, g), info
        rng = rng if rng is not None else np.random.default_rng(0)
        a, p, n = _triplets(np.asarray(labels), rng)
        unit, norms = losses.l2_normalize(emb)
        loss, (ga, gp, gn) = losses.loss_triplet(unit[a], unit[p], unit[n], cfg.margin)
        gu = np.zeros_like(unit)
        np.add.at(gu, a, ga)
        np.add.at(gu, p, gp)
        np.add.at(gu, n, gn)
        g = losses.normalize_backward(unit, norms, gu)
        return loss, _chain_backward(nets, caches, g), info

    B = x1.shape[0]
    X = np.concatenate([x1, x2])
    if obj == "simclr":
        z, caches = _chain_forward(nets, X)
        info["embeddings"] = z[:B]
        loss, (g1, g2) = losses.loss_ntxent(z[:B], z[B:], cfg.temperature)
        return loss, _chain_backward(nets, caches, np.concatenate([g1, g2])), info

    if obj == "moco":
        q, caches = _chain_forward(nets, x1)
        k, _ = _chain_forward([asm.target_backbone, asm.target_projection], x2)
        info["embeddings"] = q
        info["keys"] = k
        loss, (gq, _) = losses.loss_moco(q, k, asm.queue, cfg.temperature)
        return loss, _chain_backward(nets, caches, gq), info

    if obj == "simsiam":
        enc = [asm.backbone, asm.projection]
        z, zc = _chain_forward(enc, X)
        info["embeddings"] = z[:B]
        if asm.prediction is None:
            loss, (g1, g2, _, _) = losses.loss_simsiam(z[:B], z[B:], z[:B], z[B:])
            return loss, _chain_backward(enc, zc, np.concatenate([g1, g2])), info
        p, (pc,) = _chain_forward([asm.prediction], z)
        loss, (g1, g2, _, _) = losses.loss_simsiam(p[:B], p[B:], z[:B], z[B:])
        gp = _chain_backward([asm.prediction], [pc], np.concatenate([g1, g2]))
        genc = _chain_backward(enc, zc, gp[0].inputs)
        return loss, genc + gp, info

    if obj == "byol":
        p, caches = _chain_forward(nets, X)
        t, _ = _chain_forward([asm.target_backbone, asm.target_projection], X)
        info["embeddings"] = caches[2].inputs[0][:B]
        swapped = np.concatenate([t[B:], t[:B]])
        loss, (gp, _) = losses.loss_byol(p, swapped)
        return loss, _chain_backward(nets, caches, gp), info

    raise ConfigError(f"unknown objective {obj!r}")


def train_step(asm: ModelAssembly, x1, x2, labels, cfg, rng=None) -> tuple[float, dict]:
    """One SGD step on every online network, then EMA / queue maintenance."""
    loss, grads, info = objective_loss(asm, x1, x2, labels, cfg, rng)
    if not np.isfinite(loss):
        return loss, info
    for net, g in zip(asm.online(), grads):
        sgd_step(net, g, cfg.learning_rate, cfg.weight_decay)
    if asm.target_backbone is not None:
        ema_update(asm.target_backbone, asm.backbone, asm.ema_tau)
        ema_update(asm.target_projection, asm.projection, asm.ema_tau)
    if asm.queue is not None and "keys" in info:
        asm.queue.enqueue(info["keys"])
    return loss, info
