"""Datasets: two moons, IDX (MNIST-family) files, augmentations and batching."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, DataError, FormatError, ShapeError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_ENV = "REGIONSCOPE_DATA"


@dataclass
class LabeledSet:
    images: np.ndarray  # (N, d) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or len(self.images) != len(self.labels):
            raise DataError(
                f"{self.name}: {len(self.images)} images vs {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def subset(self, n: int | None, seed: int = 0) -> "LabeledSet":
        """Seeded random subset of ``n`` samples (everything when n is None or too big)."""
        if n is None or n >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:n])
        return LabeledSet(self.images[idx], self.labels[idx], self.name)


# -- moons -----------------------------------------------------------------------

def moons_raw(n: int, noise: float = 0.0, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Two interleaving half circles in arc coordinates, before any rescaling."""
    if n < 2:
        raise ConfigError("make_moons needs n >= 2")
    if noise < 0:
        raise ConfigError("noise must be non-negative")
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    pts = np.concatenate([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)]),
    ])
    labels = np.concatenate([np.zeros(n_out, np.int64), np.ones(n_in, np.int64)])
    rng = np.random.default_rng(seed)
    if noise > 0:
        pts = pts + rng.normal(scale=noise, size=pts.shape)
    perm = rng.permutation(n)
    return pts[perm], labels[perm]


def make_moons(n: int, noise: float = 0.1, seed: int | None = 0) -> LabeledSet:
    pts, labels = moons_raw(n, noise, seed)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return LabeledSet((pts - lo) / span, labels, "moons")


def write_csv(ds: LabeledSet, path: str | Path) -> None:
    lines = ["a,b,label"] + [f"{float(a)!r},{float(b)!r},{int(y)}" for (a, b), y in zip(ds.images, ds.labels)]
    Path(path).write_text("\n".join(lines) + "\n")


# -- IDX ---------------------------------------------------------------------------

def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except EOFError as exc:
            raise TruncatedFileError(f"{path}: truncated gzip stream") from exc
    return raw


def _parse_idx(raw: bytes, path, magic: int) -> tuple[tuple[int, ...], bytes]:
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: file shorter than an IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    payload = raw[4 + 4 * ndim :]
    need = int(np.prod(dims))
    if len(payload) < need:
        raise TruncatedFileError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    return dims, payload[:need]


def load_idx(images_path, labels_path, name: str = "") -> LabeledSet:
    """Read an IDX image/label pair (plain or gzipped); pixels scaled by 1/255."""
    dims, pix = _parse_idx(_read_bytes(images_path), images_path, IMAGES_MAGIC)
    (n_labels,), lab = _parse_idx(_read_bytes(labels_path), labels_path, LABELS_MAGIC)
    n = dims[0]
    if n != n_labels:
        raise DataError(f"{images_path} holds {n} images but {labels_path} holds {n_labels} labels")
    images = np.frombuffer(pix, dtype=np.uint8).reshape(n, dims[1] * dims[2]) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    return LabeledSet(images, labels, name or Path(images_path).name)


def write_idx(ds: LabeledSet, images_path, labels_path) -> None:
    side = int(round(np.sqrt(ds.dim)))
    if side * side != ds.dim:
        raise ShapeError(f"IDX images must be square, got length {ds.dim}")
    pix = np.clip(np.rint(ds.images * 255.0), 0, 255).astype(np.uint8)
    img = struct.pack(">IIII", IMAGES_MAGIC, len(ds), side, side) + pix.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, len(ds)) + ds.labels.astype(np.uint8).tobytes()
    for path, blob in ((images_path, img), (labels_path, lab)):
        if str(path).endswith(".gz"):
            blob = gzip.compress(blob, mtime=0)
        Path(path).write_bytes(blob)


_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_DATASET_DIRS = {"mnist": ("mnist", "MNIST"), "fashion-mnist": ("fashion-mnist", "FashionMNIST", "fashion")}


def data_root(root: str | Path | None = None) -> Path:
    if root is not None:
        return Path(root)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    raise ConfigError(f"no dataset root given; pass --data-root or set {DATA_ENV}")


def _find(base: Path, stem: str) -> Path | None:
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = base / cand
        if p.exists():
            return p
    return None


def load_dataset(name: str, split: str, root: str | Path | None = None) -> LabeledSet:
    """Locate ``<root>/<name>/<split files>`` (or the files directly in root) and load them."""
    if name not in _DATASET_DIRS:
        raise ConfigError(f"unknown dataset {name!r}; expected one of {sorted(_DATASET_DIRS)}")
    base = data_root(root)
    img_stem, lab_stem = _SPLIT_FILES[split]
    for sub in _DATASET_DIRS[name] + ("",):
        d = base / sub if sub else base
        ip, lp = _find(d, img_stem), _find(d, lab_stem)
        if ip and lp:
            return load_idx(ip, lp, f"{name}-{split}")
    raise DataError(f"no {name} {split} IDX files under {base}")


# -- augmentation -----------------------------------------------------------------------

@dataclass
class AugmentationPolicy:
    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    crop_ratio_range: tuple[float, float] = (3 / 4, 4 / 3)
    hflip_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 1.0)
    blur_prob: float = 0.5
    jitter_sigma: float = 0.0
    crop: bool = True
    hflip: bool = True
    grayscale: bool = True
    blur: bool = True
    jitter: bool = False

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"crop scale range must satisfy 0 < low <= high <= 1, got {self.crop_scale_range}")
        for p in (self.hflip_prob, self.blur_prob):
            if not 0 <= p <= 1:
                raise ConfigError(f"probability {p} outside [0, 1]")
        if self.blur_sigma_range[0] < 0 or self.blur_sigma_range[0] > self.blur_sigma_range[1]:
            raise ConfigError(f"bad blur sigma range {self.blur_sigma_range}")

    @property
    def image_ops(self) -> bool:
        return self.crop or self.hflip or self.blur

    @property
    def active(self) -> bool:
        return self.image_ops or (self.jitter and self.jitter_sigma > 0)

    @classmethod
    def disabled(cls) -> "AugmentationPolicy":
        return cls(crop=False, hflip=False, grayscale=False, blur=False, jitter=False)

    @classmethod
    def points(cls, sigma: float) -> "AugmentationPolicy":
        """Additive Gaussian jitter only, for 2-D point data."""
        return cls(crop=False, hflip=False, grayscale=False, blur=False, jitter=True, jitter_sigma=sigma)


def _interp_matrices(start: np.ndarray, length: np.ndarray, size: int) -> np.ndarray:
    """(B, size, size) bilinear resampling matrices for 1-D crops [start, start+length)."""
    B = start.shape[0]
    src = start[:, None] + (np.arange(size) + 0.5)[None, :] * (length[:, None] / size) - 0.5
    src = np.clip(src, 0.0, size - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, size - 1)
    w1 = src - i0
    R = np.zeros((B, size, size))
    bi = np.repeat(np.arange(B), size)
    oi = np.tile(np.arange(size), B)
    np.add.at(R, (bi, oi, i0.ravel()), (1.0 - w1).ravel())
    np.add.at(R, (bi, oi, i1.ravel()), w1.ravel())
    return R


def _reflect(idx: np.ndarray, size: int) -> np.ndarray:
    period = 2 * size
    idx = np.mod(idx, period)
    return np.where(idx >= size, period - 1 - idx, idx)


def _blur_matrices(sigma: np.ndarray, size: int) -> np.ndarray:
    """(B, size, size) Gaussian smoothing with reflect padding; sigma 0 gives identity."""
    B = sigma.shape[0]
    radius = int(np.ceil(3.0 * sigma.max())) if B else 0
    radius = max(radius, 1)
    offs = np.arange(-radius, radius + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.exp(-(offs[None, :] ** 2) / (2.0 * sigma[:, None] ** 2))
    w = np.where(sigma[:, None] > 0, w, (offs[None, :] == 0).astype(np.float64))
    w = np.where(np.abs(offs)[None, :] <= np.maximum(np.ceil(3.0 * sigma[:, None]), 0), w, 0.0)
    w /= w.sum(axis=1, keepdims=True)
    K = np.zeros((B, size, size))
    src = _reflect(np.arange(size)[:, None] + offs[None, :], size)  # (size, 2r+1)
    bi = np.repeat(np.arange(B), size * len(offs))
    oi = np.tile(np.repeat(np.arange(size), len(offs)), B)
    si = np.tile(src.ravel(), B)
    vals = np.repeat(w[:, None, :], size, axis=1).ravel()
    np.add.at(K, (bi, oi, si), vals)
    return K


def augment_batch(images: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply the policy to a batch (B, d) with one random draw per sample."""
    images = np.asarray(images, dtype=np.float64)
    B, d = images.shape
    out = images
    if policy.image_ops:
        side = int(round(np.sqrt(d)))
        if side * side != d:
            raise ShapeError(f"image augmentations need square rasters, got length {d}")
        img = images.reshape(B, side, side)
        eye = np.broadcast_to(np.eye(side), (B, side, side))
        Ry, Rx = eye, eye
        if policy.crop:
            lo, hi = policy.crop_scale_range
            scale = rng.uniform(lo, hi, size=B)
            logr = rng.uniform(np.log(policy.crop_ratio_range[0]), np.log(policy.crop_ratio_range[1]), size=B)
            ratio = np.exp(logr)
            w = np.minimum(np.sqrt(scale * ratio), 1.0) * side
            h = np.minimum(np.sqrt(scale / ratio), 1.0) * side
            x0 = rng.uniform(0.0, 1.0, size=B) * (side - w)
            y0 = rng.uniform(0.0, 1.0, size=B) * (side - h)
            Ry = _interp_matrices(y0, h, side)
            Rx = _interp_matrices(x0, w, side)
        if policy.hflip:
            flip = rng.uniform(size=B) < policy.hflip_prob
            Rx = np.where(flip[:, None, None], Rx[:, ::-1, :], Rx)
        if policy.blur:
            lo, hi = policy.blur_sigma_range
            sigma = rng.uniform(lo, hi, size=B)
            apply = rng.uniform(size=B) < policy.blur_prob
            sigma = np.where(apply, sigma, 0.0)
            K = _blur_matrices(sigma, side)
            Ry = K @ Ry
            Rx = K @ Rx
        # greyscale is the identity on single-channel rasters
        out = np.einsum("bij,bjk,blk->bil", Ry, img, Rx, optimize=True).reshape(B, d)
        out = np.clip(out, 0.0, 1.0)
    if policy.jitter and policy.jitter_sigma > 0:
        out = np.clip(out + rng.normal(scale=policy.jitter_sigma, size=out.shape), 0.0, 1.0)
    return out


def augment(image: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 1:
        raise ShapeError("augment takes a single flattened image")
    return augment_batch(image[None, :], policy, rng)[0]


# -- batching ------------------------------------------------------------------------------

class Batch(NamedTuple):
    x1: np.ndarray
    x2: np.ndarray | None
    labels: np.ndarray
    indices: np.ndarray


def epoch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded permutation split into batches; a trailing singleton joins the previous batch."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    chunks = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def batches(
    ds: LabeledSet,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    two_views: bool = False,
    policy: AugmentationPolicy | None = None,
    pairwise: bool = False,
) -> Iterator[Batch]:
    """One epoch of minibatches. Views use RNG streams keyed by (seed, epoch, batch, view)."""
    if batch_size < 1 or ((pairwise or two_views) and batch_size < 2):
        raise ConfigError(f"batch size {batch_size} too small for this objective")
    policy = policy or AugmentationPolicy.disabled()
    for bi, idx in enumerate(epoch_order(len(ds), batch_size, seed, epoch)):
        x = ds.images[idx]
        if two_views:
            v1 = augment_batch(x, policy, np.random.default_rng([seed, epoch, bi, 1])) if policy.active else x
            v2 = augment_batch(x, policy, np.random.default_rng([seed, epoch, bi, 2])) if policy.active else x
            yield Batch(v1, v2, ds.labels[idx], idx)
        else:
            v1 = augment_batch(x, policy, np.random.default_rng([seed, epoch, bi, 1])) if policy.active else x
            yield Batch(v1, None, ds.labels[idx], idx)
