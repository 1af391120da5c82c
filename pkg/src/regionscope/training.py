"""Training configuration, flat key=value config files and the SGD loop."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import AugmentationPolicy, LabeledSet, batches
from .errors import ConfigError, NumericError
from .models import OBJECTIVES, TWO_VIEW, ModelAssembly, train_step
from .net import MlpNetwork
from .snapshot import save_network

log = logging.getLogger(__name__)

# Per-objective hyperparameters for MNIST; FashionMNIST only changes a few rates.
MNIST_DEFAULTS = {
    "classifier": dict(batch_size=256, learning_rate=0.01, weight_decay=0.0),
    "triplet": dict(batch_size=256, learning_rate=0.02, weight_decay=1e-5, margin=0.05),
    "supcon": dict(batch_size=256, learning_rate=0.01, weight_decay=1e-5, temperature=0.05),
    "simclr": dict(batch_size=256, learning_rate=0.01, weight_decay=1e-5, temperature=0.2),
    "moco": dict(batch_size=64, learning_rate=0.008, weight_decay=1e-5, temperature=0.2),
    "simsiam": dict(batch_size=256, learning_rate=0.04, weight_decay=1e-5),
    "byol": dict(batch_size=256, learning_rate=0.04, weight_decay=1e-5),
}
FASHION_OVERRIDES = {
    "classifier": dict(learning_rate=0.02),
    "triplet": dict(learning_rate=0.04),
    "moco": dict(learning_rate=0.01),
}


@dataclass
class TrainConfig:
    objective: str
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 0.01
    weight_decay: float = 1e-5
    temperature: float = 0.2
    margin: float = 0.05
    ema_tau: float = 0.99
    queue_capacity: int = 4096
    seed: int = 0
    snapshot_epochs: list[int] = field(default_factory=list)
    predictor: bool = True
    augment: bool = True

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.temperature <= 0 and self.objective in ("supcon", "simclr", "moco"):
            raise ConfigError("temperature must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0.0 <= self.ema_tau <= 1.0:
            raise ConfigError("ema_tau must lie in [0, 1]")
        if self.batch_size < 2 and self.objective != "classifier":
            raise ConfigError(f"{self.objective} needs batch_size >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")

    @classmethod
    def defaults(cls, objective: str, dataset: str = "mnist", **overrides) -> "TrainConfig":
        if objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {objective!r}")
        values = dict(MNIST_DEFAULTS[objective])
        if dataset == "fashion-mnist":
            values.update(FASHION_OVERRIDES.get(objective, {}))
        values.update(overrides)
        return cls(objective=objective, **values)

    @classmethod
    def from_mapping(cls, objective: str, mapping: dict, dataset: str = "mnist") -> "TrainConfig":
        """Defaults for the objective, overridden by ``key`` then ``objective.key`` entries."""
        names = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for scope in ("", objective + "."):
            for key, raw in mapping.items():
                if scope and not key.startswith(scope):
                    continue
                if not scope and "." in key:
                    continue
                name = key[len(scope):]
                if name in names and name != "objective":
                    values[name] = _coerce(names[name], raw)
        return cls.defaults(objective, dataset, **values)


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("list"):
            return parse_int_list(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {f.name}") from exc
    return raw


def parse_int_list(raw: str) -> list[int]:
    raw = raw.strip()
    if not raw:
        return []
    return [int(tok) for tok in raw.replace(";", ",").split(",") if tok.strip()]


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment, blank lines ignored."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class Snapshot:
    epoch: int
    step: int
    backbone: MlpNetwork
    loss: float = float("nan")


class TrainingDiverged(NumericError):
    def __init__(self, message: str, snapshot: Snapshot):
        super().__init__(message)
        self.snapshot = snapshot


def train(
    asm: ModelAssembly,
    cfg: TrainConfig,
    dataset: LabeledSet,
    snapshot_sink: Callable[[Snapshot, ModelAssembly], None] | None = None,
    policy: AugmentationPolicy | None = None,
    on_step: Callable[[int, ModelAssembly, float, dict], None] | None = None,
    on_epoch: Callable[[int, ModelAssembly], None] | None = None,
    snapshot_dir: str | Path | None = None,
    max_steps: int | None = None,
) -> list[Snapshot]:
    """Run SGD for ``cfg.epochs`` epochs and return the captured snapshots.

    Epoch 0 is the initialisation. Snapshot epochs are taken after the
    epoch's last step. ``on_step`` fires after every update with the step
    index (1-based), ``on_epoch`` after every epoch including epoch 0.
    """
    two_views = cfg.objective in TWO_VIEW
    if not two_views:
        policy = None  # supervised objectives train on clean samples
    elif not cfg.augment:
        policy = AugmentationPolicy.disabled()
    elif policy is None:
        policy = AugmentationPolicy()
    wanted = set(cfg.snapshot_epochs) | {0}
    snaps: list[Snapshot] = []

    def capture(epoch, step, loss):
        snap = Snapshot(epoch, step, asm.backbone.copy(), loss)
        snaps.append(snap)
        if snapshot_dir is not None:
            d = Path(snapshot_dir)
            d.mkdir(parents=True, exist_ok=True)
            save_network(d / f"epoch{epoch:03d}.bin", snap.backbone,
                         objective=cfg.objective, seed=cfg.seed, epoch=epoch, step=step)
        if snapshot_sink is not None:
            snapshot_sink(snap, asm)

    capture(0, 0, float("nan"))
    if on_epoch is not None:
        on_epoch(0, asm)
    step = 0
    loss = float("nan")
    for epoch in range(1, cfg.epochs + 1):
        stream = batches(dataset, cfg.batch_size, cfg.seed, epoch, two_views=two_views,
                         policy=policy, pairwise=cfg.objective != "classifier")
        for bi, batch in enumerate(stream):
            rng = np.random.default_rng([cfg.seed, epoch, bi, 7])
            loss, info = train_step(asm, batch.x1, batch.x2, batch.labels, cfg, rng)
            step += 1
            if not np.isfinite(loss):
                snap = Snapshot(epoch, step, asm.backbone.copy(), loss)
                raise TrainingDiverged(f"{cfg.objective}: non-finite loss at epoch {epoch}, step {step}", snap)
            if on_step is not None:
                on_step(step, asm, loss, info)
            if max_steps is not None and step >= max_steps:
                break
        log.debug("%s epoch %d loss %.5f", cfg.objective, epoch, loss)
        if epoch in wanted:
            capture(epoch, step, loss)
        if on_epoch is not None:
            on_epoch(epoch, asm)
        if max_steps is not None and step >= max_steps:
            break
    return snaps


def train_accuracy(asm: ModelAssembly, dataset: LabeledSet) -> float:
    """Accuracy of a classifier assembly's own head on ``dataset``."""
    from .net import embed

    logits = embed(asm.projection, embed(asm.backbone, dataset.images))
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))
