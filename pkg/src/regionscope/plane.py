"""Two-dimensional analysis planes through three anchor inputs.

The plane is centred on the anchors' circumcenter C and spanned by an
orthonormal pair (u1, u2). Plane coordinates (a, b) map to inputs via
x = C + a*u1 + b*u2, which lets a d-input network be rewritten as an
exactly equivalent 2-input network.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, DegenerateError, ShapeError
from .net import Layer, MlpNetwork
from .regions import square

DEFAULT_EXTENT_FACTOR = 1.25


def circumcenter(x0: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Point of the anchors' plane equidistant from all three anchors.

    Writes C = x0 + beta0*v1 + beta1*v2 with v_i = x_i - x0 and solves the
    Gram system G beta = 0.5 * [|v1|^2, |v2|^2].
    """
    x0, x1, x2 = (np.asarray(x, dtype=np.float64) for x in (x0, x1, x2))
    v1, v2 = x1 - x0, x2 - x0
    G = np.array([[v1 @ v1, v1 @ v2], [v1 @ v2, v2 @ v2]])
    det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    if abs(det) < 1e-12 * float(np.sum(G * G)) or not np.any(G):
        raise DegenerateError("anchors are collinear or coincident; no unique circumcenter")
    beta = np.linalg.solve(G, 0.5 * np.array([v1 @ v1, v2 @ v2]))
    return x0 + beta[0] * v1 + beta[1] * v2


def orthobasis(x0, x1, x2, C) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt basis of the plane from the centred anchors x1-C and x2-C.

    When x1 and x2 are antipodal on the circumcircle (right angle at x0) the
    pair is parallel, so x0-C supplies the second direction instead.
    """
    w1 = np.asarray(x1, dtype=np.float64) - C
    n1 = np.linalg.norm(w1)
    if n1 == 0.0:
        raise DegenerateError("an anchor coincides with the circumcenter")
    u1 = w1 / n1
    for x in (x2, x0):
        if x is None:
            continue
        w2 = np.asarray(x, dtype=np.float64) - C
        perp = w2 - (w2 @ u1) * u1
        n2 = np.linalg.norm(perp)
        if n2 > 1e-9 * max(np.linalg.norm(w2), n1):
            return u1, perp / n2
    raise DegenerateError("centred anchors are parallel")


@dataclass
class PlaneEmbedding:
    anchors: np.ndarray  # (3, d)
    center: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    extent: float
    anchor_indices: list[int] | None = None

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(self.anchors[0] - self.center))

    def lift(self, a, b) -> np.ndarray:
        """Input-space point(s) for plane coordinates; broadcasts over arrays."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return self.center + a[..., None] * self.u1 + b[..., None] * self.u2

    def plane_coords(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, dtype=np.float64) - self.center
        return np.stack([d @ self.u1, d @ self.u2], axis=-1)

    def transform(self) -> np.ndarray:
        """T = [u1 u2 C], so x = T @ [a, b, 1]."""
        return np.column_stack([self.u1, self.u2, self.center])

    def domain(self) -> np.ndarray:
        return square(self.extent)

    def to_json(self) -> dict:
        return {
            "anchor_indices": self.anchor_indices,
            "anchors": self.anchors.tolist(),
            "center": self.center.tolist(),
            "u1": self.u1.tolist(),
            "u2": self.u2.tolist(),
            "extent": self.extent,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PlaneEmbedding":
        return cls(
            anchors=np.array(doc["anchors"], dtype=np.float64),
            center=np.array(doc["center"], dtype=np.float64),
            u1=np.array(doc["u1"], dtype=np.float64),
            u2=np.array(doc["u2"], dtype=np.float64),
            extent=float(doc["extent"]),
            anchor_indices=doc.get("anchor_indices"),
        )

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PlaneEmbedding":
        return cls.from_json(json.loads(Path(path).read_text()))


def make_plane(
    x0, x1, x2,
    extent_factor: float = DEFAULT_EXTENT_FACTOR,
    anchor_indices: Sequence[int] | None = None,
) -> PlaneEmbedding:
    C = circumcenter(x0, x1, x2)
    u1, u2 = orthobasis(x0, x1, x2, C)
    anchors = np.stack([np.asarray(x, dtype=np.float64) for x in (x0, x1, x2)])
    R = float(np.linalg.norm(anchors[0] - C))
    return PlaneEmbedding(anchors, C, u1, u2, extent_factor * R,
                          list(anchor_indices) if anchor_indices is not None else None)


def restrict_to_plane(net: MlpNetwork, emb: PlaneEmbedding) -> MlpNetwork:
    """Equivalent 2-input network: first layer becomes W[u1 u2], W C + b."""
    if net.input_dim != emb.dim:
        raise ShapeError(f"network takes {net.input_dim} inputs but the plane lives in R^{emb.dim}")
    first = net.layers[0]
    basis = np.column_stack([emb.u1, emb.u2])
    planar = Layer(first.weights @ basis, first.weights @ emb.center + first.bias, first.relu)
    rest = [Layer(l.weights.copy(), l.bias.copy(), l.relu) for l in net.layers[1:]]
    return MlpNetwork([planar] + rest)


def anchor_pick(images: np.ndarray, labels: np.ndarray, class_ids: Sequence[int], seed: int) -> tuple[list[int], np.ndarray]:
    """One random sample of each requested class; returns (indices, (3, d) anchors)."""
    labels = np.asarray(labels)
    if len(set(class_ids)) != len(class_ids):
        raise DataError(f"anchor classes must be distinct, got {list(class_ids)}")
    rng = np.random.default_rng(seed)
    idx = []
    for c in class_ids:
        pool = np.flatnonzero(labels == c)
        if pool.size == 0:
            raise DataError(f"class {c} not present in dataset")
        idx.append(int(rng.choice(pool)))
    return idx, np.asarray(images, dtype=np.float64)[idx]


def plane_for_dataset(images, labels, class_ids=(0, 1, 2), seed: int = 0,
                      extent_factor: float = DEFAULT_EXTENT_FACTOR,
                      max_tries: int = 10, log=None) -> PlaneEmbedding:
    """Pick anchors and build the plane, re-drawing with the next seed if degenerate."""
    for attempt in range(max_tries):
        idx, anchors = anchor_pick(images, labels, class_ids, seed + attempt)
        try:
            return make_plane(*anchors, extent_factor=extent_factor, anchor_indices=idx)
        except DegenerateError:
            if log is not None:
                log.warning("degenerate anchor triangle for seed %d, re-sampling", seed + attempt)
    raise DegenerateError(f"no non-degenerate anchor triangle in {max_tries} draws")
