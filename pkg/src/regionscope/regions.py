"""Exact and grid-sampled linear-region tessellations of 2-input ReLU networks.

Polygons are ``(k, 2)`` float64 arrays of counter-clockwise vertices.
Exact extraction subdivides the domain layer by layer: every fragment
carries the affine map from the plane to the current layer's input, each
neuron of the layer contributes one cutting line, and the ReLU mask of a
finished fragment is read off at its centroid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateError, NumericError, ShapeError
from .net import ActivationPattern, AffineMap, MlpNetwork, hidden_bits

EPS_SIGN = 1e-10
EPS_AREA = 1e-14
EPS_COL = 1e-9


# -- polygon basics ---------------------------------------------------------

def signed_area(poly: np.ndarray) -> float:
    a, b = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(a, np.roll(b, -1)) - np.dot(b, np.roll(a, -1)))


def area(poly: np.ndarray) -> float:
    """Shoelace area with wraparound to the first vertex."""
    poly = np.asarray(poly, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise ShapeError(f"a polygon needs at least 3 (a, b) vertices, got shape {poly.shape}")
    return abs(signed_area(poly))


def as_polygon(vertices) -> np.ndarray:
    """Validate vertices and return them as a CCW float64 array."""
    poly = np.array(vertices, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise ShapeError(f"a polygon needs at least 3 (a, b) vertices, got shape {poly.shape}")
    if not np.all(np.isfinite(poly)):
        raise NumericError("polygon vertices must be finite")
    s = signed_area(poly)
    if s == 0.0:
        raise DegenerateError("polygon has zero area")
    return poly if s > 0 else poly[::-1].copy()


def rectangle(a0: float, b0: float, a1: float, b1: float) -> np.ndarray:
    return np.array([[a0, b0], [a1, b0], [a1, b1], [a0, b1]], dtype=np.float64)


def square(half_width: float, center=(0.0, 0.0)) -> np.ndarray:
    ca, cb = center
    return rectangle(ca - half_width, cb - half_width, ca + half_width, cb + half_width)


def is_convex(poly: np.ndarray, tol: float = 1e-12) -> bool:
    d1 = np.roll(poly, -1, axis=0) - poly
    d2 = np.roll(d1, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = np.abs(d1).max() * np.abs(d2).max() + 1e-300
    return bool(np.all(cross >= -tol * scale))


def centroid(poly: np.ndarray) -> np.ndarray:
    """Area centroid; falls back to the vertex mean for near-zero area."""
    a, b = poly[:, 0], poly[:, 1]
    an, bn = np.roll(a, -1), np.roll(b, -1)
    cross = a * bn - an * b
    s = cross.sum()
    mean = poly.mean(axis=0)
    if abs(s) < 1e-300:
        return mean
    # shift to the vertex mean first for accuracy far from the origin
    a0, b0 = a - mean[0], b - mean[1]
    an0, bn0 = np.roll(a0, -1), np.roll(b0, -1)
    cross0 = a0 * bn0 - an0 * b0
    s0 = cross0.sum()
    if abs(s0) < 1e-300:
        return mean
    ca = ((a0 + an0) * cross0).sum() / (3.0 * s0)
    cb = ((b0 + bn0) * cross0).sum() / (3.0 * s0)
    return np.array([ca + mean[0], cb + mean[1]])


def eccentricity(poly: np.ndarray) -> float:
    """Bounding-box anisotropy sqrt(1 - (minor/major)^2); 0 for a point."""
    poly = np.asarray(poly, dtype=np.float64)
    ext = poly.max(axis=0) - poly.min(axis=0)
    major, minor = float(ext.max()), float(ext.min())
    if major == 0.0:
        return 0.0
    return float(np.sqrt(1.0 - (minor / major) ** 2))


def simplify(poly: np.ndarray, eps_col: float = EPS_COL, eps_len: float = EPS_SIGN) -> np.ndarray:
    """Drop duplicate vertices and vertices lying on the segment between their neighbours."""
    pts = [p for p in np.asarray(poly, dtype=np.float64)]
    changed = True
    while changed and len(pts) > 3:
        changed = False
        n = len(pts)
        for i in range(n):
            prev, cur, nxt = pts[i - 1], pts[i], pts[(i + 1) % n]
            e1 = cur - prev
            e2 = nxt - cur
            l1 = float(np.hypot(*e1))
            l2 = float(np.hypot(*e2))
            if l1 <= eps_len:
                del pts[i]
                changed = True
                break
            cross = e1[0] * e2[1] - e1[1] * e2[0]
            if abs(cross) <= eps_col * l1 * l2 and float(np.dot(e1, e2)) > 0:
                del pts[i]
                changed = True
                break
    return np.array(pts)


def boundaries(poly: np.ndarray, eps_col: float = EPS_COL) -> int:
    """Number of distinct edges once collinear runs are merged."""
    return int(simplify(poly, eps_col).shape[0])


# -- cutting ------------------------------------------------------------------

def cut_polygon(
    poly: np.ndarray,
    line,
    eps_sign: float = EPS_SIGN,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Split a convex CCW polygon by the line alpha*a + beta*b + gamma = 0.

    Returns ``(negative_side, positive_side)``; a side is ``None`` when no
    vertex lies beyond ``eps_sign`` on it. ``eps_sign`` is measured as a
    distance, i.e. after scaling the line to a unit normal.
    """
    alpha, beta, gamma = (float(v) for v in line)
    norm = np.hypot(alpha, beta)
    if not np.isfinite(norm) or not np.isfinite(gamma):
        raise NumericError(f"non-finite line coefficients {line!r}")
    if norm == 0.0:
        raise ShapeError("line normal (alpha, beta) must be non-zero")
    vals = (poly[:, 0] * alpha + poly[:, 1] * beta + gamma) / norm
    return _split(poly, vals, eps_sign)


def _split(poly, vals, eps):
    side = np.where(vals > eps, 1, np.where(vals < -eps, -1, 0))
    if not np.any(side > 0):
        return poly, None
    if not np.any(side < 0):
        return None, poly
    neg, pos = [], []
    n = poly.shape[0]
    for i in range(n):
        j = (i + 1) % n
        si, sj = side[i], side[j]
        if si <= 0:
            neg.append(poly[i])
        if si >= 0:
            pos.append(poly[i])
        if si * sj < 0:
            t = vals[i] / (vals[i] - vals[j])
            p = poly[i] + t * (poly[j] - poly[i])
            neg.append(p)
            pos.append(p)
    return np.array(neg), np.array(pos)


# -- region sets ----------------------------------------------------------------

@dataclass
class RegionPolygon:
    vertices: np.ndarray
    pattern: ActivationPattern
    affine: AffineMap
    area: float
    eccentricity: float
    boundaries: int


@dataclass
class RegionSet:
    domain: np.ndarray
    regions: list[RegionPolygon]
    dropped_sliver_area: float = 0.0
    epsilons: dict = field(default_factory=lambda: {
        "sign": EPS_SIGN, "area": EPS_AREA, "collinear": EPS_COL})

    @property
    def pattern_bits(self) -> int:
        return self.regions[0].pattern.length if self.regions else 0

    def patterns(self) -> set[ActivationPattern]:
        return {r.pattern for r in self.regions}

    def total_area(self) -> float:
        return float(sum(r.area for r in self.regions))

    def to_json(self) -> dict:
        return {
            "domain": self.domain.tolist(),
            "epsilons": dict(self.epsilons),
            "pattern_bits": self.pattern_bits,
            "regions": [
                {
                    "vertices": r.vertices.tolist(),
                    "pattern_hex": r.pattern.hex(),
                    "area": r.area,
                    "ecc": r.eccentricity,
                    "boundaries": r.boundaries,
                }
                for r in self.regions
            ],
            "dropped_sliver_area": self.dropped_sliver_area,
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def from_json(cls, doc: dict, net: MlpNetwork | None = None) -> "RegionSet":
        """Rebuild from JSON; affine maps are recomputed only when ``net`` is given."""
        from .net import region_affine

        nbits = doc["pattern_bits"]
        regions = []
        for r in doc["regions"]:
            pattern = ActivationPattern.from_hex(r["pattern_hex"], nbits)
            aff = region_affine(net, pattern) if net is not None else AffineMap(np.zeros((0, 2)), np.zeros(0))
            regions.append(RegionPolygon(
                np.array(r["vertices"], dtype=np.float64), pattern, aff,
                r["area"], r["ecc"], r["boundaries"]))
        return cls(np.array(doc["domain"], dtype=np.float64), regions,
                   doc["dropped_sliver_area"], dict(doc["epsilons"]))

    @classmethod
    def load(cls, path: str | Path, net: MlpNetwork | None = None) -> "RegionSet":
        return cls.from_json(json.loads(Path(path).read_text()), net)


class Aggregate(NamedTuple):
    count: int
    mean_area: float
    mean_eccentricity: float
    mean_boundaries: float


def aggregate(rs: RegionSet) -> Aggregate:
    if not rs.regions:
        raise DegenerateError("cannot aggregate an empty region set")
    areas = np.array([r.area for r in rs.regions])
    ecc = np.array([r.eccentricity for r in rs.regions])
    bnd = np.array([r.boundaries for r in rs.regions], dtype=np.float64)
    return Aggregate(len(rs.regions), float(areas.mean()), float(ecc.mean()), float(bnd.mean()))


# -- exact extraction -----------------------------------------------------------

def extract_exact(
    net: MlpNetwork,
    domain: np.ndarray,
    eps_sign: float = EPS_SIGN,
    eps_area: float = EPS_AREA,
    eps_col: float = EPS_COL,
    reverse_order: bool = False,
) -> RegionSet:
    """Enumerate every linear region of a 2-input network inside a convex domain."""
    if net.input_dim != 2:
        raise ShapeError(f"exact extraction needs a 2-input network, got {net.input_dim}")
    domain = as_polygon(domain)
    if not is_convex(domain):
        raise ShapeError("extraction domain must be convex")

    # fragment: (vertices, A (n_in x 2), c (n_in,), list of per-layer masks)
    frags = [(domain, np.eye(2), np.zeros(2), [])]
    dropped = 0.0
    for li, layer in enumerate(net.layers):
        if not layer.relu:
            frags = [(v, layer.weights @ A, layer.weights @ c + layer.bias, m) for v, A, c, m in frags]
            continue
        order = np.arange(layer.out_dim)
        if reverse_order:
            order = order[::-1]
        out = []
        for verts, A, c, masks in frags:
            L = layer.weights @ A  # (m, 2)
            g = layer.weights @ c + layer.bias
            norms = np.hypot(L[:, 0], L[:, 1])
            if not (np.all(np.isfinite(L)) and np.all(np.isfinite(g))):
                bad = int(np.flatnonzero(~(np.isfinite(L).all(axis=1) & np.isfinite(g)))[0])
                raise NumericError(f"non-finite cutting line at layer {li}, neuron {bad}")
            safe = np.where(norms > 0, norms, 1.0)
            Ln = L / safe[:, None]
            gn = g / safe
            vals = verts @ Ln.T + gn
            crossing = (norms > 0) & (vals.max(axis=0) > eps_sign) & (vals.min(axis=0) < -eps_sign)
            pieces = [verts]
            for j in order[crossing[order]]:
                nxt = []
                for p in pieces:
                    pv = p @ Ln[j] + gn[j]
                    neg, pos = _split(p, pv, eps_sign)
                    for q in (neg, pos):
                        if q is None:
                            continue
                        if neg is not None and pos is not None:
                            qa = abs(signed_area(q))
                            if qa < eps_area:
                                dropped += qa
                                continue
                        nxt.append(q)
                pieces = nxt
            for p in pieces:
                z = L @ centroid(p) + g
                mask = z > 0
                mf = mask.astype(np.float64)
                out.append((p, L * mf[:, None], g * mf, masks + [mask]))
        frags = out

    regions = []
    for verts, A, c, masks in frags:
        bits = np.concatenate(masks) if masks else np.zeros(0, dtype=bool)
        a = abs(signed_area(verts))
        regions.append(RegionPolygon(
            vertices=verts,
            pattern=ActivationPattern.from_bools(bits),
            affine=AffineMap(A, c),
            area=a,
            eccentricity=eccentricity(verts),
            boundaries=boundaries(verts, eps_col),
        ))
    regions.sort(key=lambda r: r.pattern.packed)
    return RegionSet(domain, regions, dropped,
                     {"sign": eps_sign, "area": eps_area, "collinear": eps_col})


# -- grid oracle ------------------------------------------------------------------

class GridResult(NamedTuple):
    count: int
    cells: dict  # ActivationPattern -> number of lattice points


def grid_points(domain: np.ndarray, resolution: int) -> np.ndarray:
    """Cell centres of a resolution x resolution lattice over the bounding box, inside the domain."""
    domain = as_polygon(domain)
    lo, hi = domain.min(axis=0), domain.max(axis=0)
    a = lo[0] + (np.arange(resolution) + 0.5) * (hi[0] - lo[0]) / resolution
    b = lo[1] + (np.arange(resolution) + 0.5) * (hi[1] - lo[1]) / resolution
    aa, bb = np.meshgrid(a, b, indexing="xy")
    pts = np.column_stack([aa.ravel(), bb.ravel()])
    if is_convex(domain) and domain.shape[0] == 4 and _axis_aligned(domain):
        return pts
    return pts[_inside(domain, pts)]


def _axis_aligned(poly):
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    return np.all((np.isclose(poly[:, 0], lo[0]) | np.isclose(poly[:, 0], hi[0]))
                  & (np.isclose(poly[:, 1], lo[1]) | np.isclose(poly[:, 1], hi[1])))


def _inside(poly, pts):
    """Even-odd point-in-polygon test, vectorised over points."""
    inside = np.zeros(len(pts), dtype=bool)
    x, y = pts[:, 0], pts[:, 1]
    n = len(poly)
    for i in range(n):
        (x1, y1), (x2, y2) = poly[i], poly[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def extract_grid(
    net: MlpNetwork,
    domain: np.ndarray,
    resolution: int = 512,
    chunk: int = 65536,
) -> GridResult:
    """Count distinct activation patterns on a uniform lattice over the domain."""
    if resolution < 2:
        raise ShapeError("grid resolution must be at least 2")
    if net.input_dim != 2:
        raise ShapeError(f"grid extraction needs a 2-input network, got {net.input_dim}")
    pts = grid_points(domain, resolution)
    nbits = net.n_hidden
    nbytes = max(1, (nbits + 7) // 8)
    keys, counts = [], []
    for start in range(0, len(pts), chunk):
        bits = hidden_bits(net, pts[start : start + chunk])
        packed = np.packbits(bits, axis=1) if nbits else np.zeros((len(bits), 1), np.uint8)
        u, cnt = np.unique(np.ascontiguousarray(packed).view(np.dtype((np.void, nbytes))).ravel(),
                           return_counts=True)
        keys.append(u)
        counts.append(cnt)
    allk = np.concatenate(keys)
    allc = np.concatenate(counts)
    u, inv = np.unique(allk, return_inverse=True)
    tot = np.bincount(inv.ravel(), weights=allc).astype(np.int64)
    cells = {ActivationPattern(bytes(k.tobytes()) if nbits else b"", nbits): int(t)
             for k, t in zip(u, tot)}
    return GridResult(len(u), cells)


def grid_count(net: MlpNetwork, domain: np.ndarray, resolution: int = 512, chunk: int = 32768) -> int:
    """Number of distinct lattice patterns; cheaper than building the full map."""
    pts = grid_points(domain, resolution)
    nbits = net.n_hidden
    if nbits == 0:
        return 1
    vt = np.dtype((np.void, (nbits + 7) // 8))
    seen = []
    for start in range(0, len(pts), chunk):
        packed = np.packbits(hidden_bits(net, pts[start : start + chunk]), axis=1)
        seen.append(np.unique(np.ascontiguousarray(packed).view(vt).ravel()))
    return int(np.unique(np.concatenate(seen)).size)


def sample_interior(poly: np.ndarray, rng: np.random.Generator, k: int = 5, shrink: float = 0.5) -> np.ndarray:
    """Random points strictly inside a convex polygon, pulled toward its centroid."""
    w = rng.dirichlet(np.ones(len(poly)), size=k)
    pts = w @ poly
    c = centroid(poly)
    return c + shrink * (pts - c)
