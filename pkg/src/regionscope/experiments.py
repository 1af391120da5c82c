"""End-to-end experiment runners: moons tessellations, region evolution on
an image plane, and the predictor-free SimSiam collapse run.

Every (model, seed) job writes into its own directory under the output
root; merged summaries are written once all jobs finish. Floats are
written with ``repr`` so re-running a configuration reproduces every CSV
and JSON file byte for byte.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import AugmentationPolicy, LabeledSet, load_dataset, make_moons
from .errors import ConfigError
from .models import BACKBONES, OBJECTIVES, build_assembly
from .net import MlpNetwork, embed
from .plane import PlaneEmbedding, plane_for_dataset, restrict_to_plane
from .probes import knn_accuracy, representation_std
from .regions import RegionSet, aggregate, area, extract_exact, grid_count, rectangle
from .render import render_svg
from .snapshot import load_network
from .training import TrainConfig, parse_int_list, read_config, train

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "step", "objective", "accuracy", "regions", "mean_area",
                  "mean_ecc", "mean_boundaries", "rep_std"]
COLLAPSE_HEADER = ["step", "regions", "rep_std"]
KINDS = ("moons", "evolution", "collapse")
DEFAULT_SNAPSHOTS = [0, 1, 5, 10, 25, 50, 75, 99, 100]


@dataclass
class MetricsRow:
    epoch: int
    step: int
    objective: str
    accuracy: float
    regions: int
    mean_area: float
    mean_ecc: float | None = None
    mean_boundaries: float | None = None
    rep_std: float = 0.0

    def __post_init__(self):
        if self.regions < 1:
            raise ConfigError(f"a metrics row needs at least one region, got {self.regions}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.rep_std < 0:
            raise ConfigError("rep_std must be non-negative")

    def cells(self) -> list[str]:
        return [str(self.epoch), str(self.step), self.objective, _fmt(self.accuracy), str(self.regions),
                _fmt(self.mean_area), _fmt(self.mean_ecc), _fmt(self.mean_boundaries), _fmt(self.rep_std)]


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    Path(path).write_text(buf.getvalue())


def write_metrics(path: str | Path, rows: Iterable[MetricsRow]) -> None:
    write_csv(path, METRICS_HEADER, (r.cells() for r in rows))


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


@dataclass
class ExperimentSpec:
    kind: str
    dataset: str
    models: list[str]
    configs: dict[str, TrainConfig]
    out_dir: Path
    seeds: list[int] = field(default_factory=lambda: [0])
    snapshot_epochs: list[int] = field(default_factory=lambda: list(DEFAULT_SNAPSHOTS))
    grid_res: int = 512
    plane_classes: tuple[int, ...] = (0, 1, 2)
    plane_seed: int = 0
    extent_factor: float = 1.25
    n_train: int | None = 10000
    n_test: int | None = 2000
    data_root: str | None = None
    moons_n: int = 2000
    moons_noise: float = 0.1
    moons_test_n: int = 500
    jitter: float = 0.1
    steps: int = 700
    probe_n: int = 512
    svg_steps: list[int] = field(default_factory=lambda: [0, 100, 700])
    knn_k: int = 5
    jobs: int = 1

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment {self.kind!r}; expected one of {KINDS}")
        if self.native_2d and self.kind != "moons":
            raise ConfigError("the native 2-D input is only available for the moons study")
        if self.kind == "moons" and not self.native_2d:
            raise ConfigError("the moons study needs the moons dataset")
        for m in self.models:
            if m not in OBJECTIVES:
                raise ConfigError(f"unknown model {m!r}")
            if m not in self.configs:
                raise ConfigError(f"no training config for {m!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.grid_res < 2:
            raise ConfigError("grid_res must be at least 2")
        if self.kind == "evolution":
            for m in self.models:
                bad = [e for e in self.snapshot_epochs if not 0 <= e <= self.configs[m].epochs]
                if bad:
                    raise ConfigError(f"snapshot epochs {bad} outside [0, {self.configs[m].epochs}]")
        if self.kind == "collapse" and self.steps < 1:
            raise ConfigError("collapse runs need steps >= 1")

    @property
    def native_2d(self) -> bool:
        return self.dataset == "moons"

    @property
    def backbone_sizes(self) -> list[int]:
        if self.dataset not in BACKBONES:
            raise ConfigError(f"no backbone for dataset {self.dataset!r}")
        return BACKBONES[self.dataset]

    @classmethod
    def from_mapping(cls, mapping: dict, **overrides) -> "ExperimentSpec":
        """Build from a flat key=value mapping; ``overrides`` win over the file."""
        m = dict(mapping)
        m.update({k: v for k, v in overrides.items() if v is not None})
        kind = m.get("experiment")
        if kind is None:
            raise ConfigError("config needs an 'experiment' key")
        kind = str(kind)
        dataset = str(m.get("dataset", "moons" if kind == "moons" else "mnist"))
        if "models" in m:
            models = _str_list(m["models"])
        else:
            models = {"moons": ["classifier", "supcon", "simclr", "simsiam"],
                      "evolution": list(OBJECTIVES), "collapse": ["simsiam"]}[kind]
        tdata = "fashion-mnist" if dataset == "fashion-mnist" else "mnist"
        configs = {obj: TrainConfig.from_mapping(obj, m, tdata) for obj in models}
        kw = {}
        simple = {"grid_res": int, "plane_seed": int, "extent_factor": float, "moons_n": int,
                  "moons_noise": float, "moons_test_n": int, "jitter": float, "steps": int,
                  "probe_n": int, "knn_k": int, "jobs": int}
        for key, conv in simple.items():
            if key in m:
                kw[key] = _conv(key, m[key], conv)
        for key in ("n_train", "n_test"):
            if key in m:
                v = m[key]
                kw[key] = None if str(v).lower() in ("", "all", "none") else _conv(key, v, int)
        for key in ("seeds", "snapshot_epochs", "svg_steps"):
            if key in m:
                kw[key] = _int_list(key, m[key])
        if "plane_classes" in m:
            kw["plane_classes"] = tuple(_int_list("plane_classes", m["plane_classes"]))
        if "data_root" in m and m["data_root"] not in (None, ""):
            kw["data_root"] = str(m["data_root"])
        out = m.get("out", "out")
        return cls(kind=kind, dataset=dataset, models=models, configs=configs, out_dir=Path(out), **kw)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentSpec":
        return cls.from_mapping(read_config(path), **overrides)

    def config_for(self, model: str, seed: int) -> TrainConfig:
        cfg = dataclasses.replace(self.configs[model], seed=seed)
        if self.kind == "evolution":
            cfg.snapshot_epochs = list(self.snapshot_epochs)
        return cfg


def _str_list(raw) -> list[str]:
    if isinstance(raw, (list, tuple)):
        return [str(x) for x in raw]
    return [tok.strip() for tok in str(raw).replace(";", ",").split(",") if tok.strip()]


def _int_list(key, raw) -> list[int]:
    if isinstance(raw, (list, tuple)):
        return [int(x) for x in raw]
    try:
        return parse_int_list(str(raw))
    except ValueError as exc:
        raise ConfigError(f"bad integer list for {key}: {raw!r}") from exc


def _conv(key, raw, conv):
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {raw!r} for {key}") from exc


def job_dir(spec: ExperimentSpec, model: str, seed: int, tag: str | None = None) -> Path:
    return spec.out_dir / f"{tag or model}_seed{seed}"


# -- shared analysis ----------------------------------------------------------------

def _safe_rep_std(emb: np.ndarray) -> float:
    # dead rows (all-zero features) carry no direction; drop them
    keep = np.linalg.norm(emb, axis=1) > 0
    if keep.sum() < 2:
        return 0.0
    return representation_std(emb[keep])


def probe_metrics(backbone: MlpNetwork, train_set: LabeledSet, test_set: LabeledSet, k: int) -> tuple[float, float]:
    """(k-NN accuracy, rep_std) on frozen backbone embeddings of the test split."""
    tr = embed(backbone, train_set.images)
    te = embed(backbone, test_set.images)
    return knn_accuracy(tr, train_set.labels, te, test_set.labels, k), _safe_rep_std(te)


def analyze_network(backbone: MlpNetwork, plane: PlaneEmbedding | None, domain: np.ndarray) -> RegionSet:
    net = backbone if plane is None else restrict_to_plane(backbone, plane)
    return extract_exact(net, domain)


def snapshot_row(epoch, step, objective, backbone, plane, domain, train_set, test_set, k, out: Path | None,
                 tag: str = "epoch") -> MetricsRow:
    """Exact extraction plus probes for one snapshot; writes region JSON/SVG when ``out`` is set."""
    rs = analyze_network(backbone, plane, domain)
    agg = aggregate(rs)
    acc, rstd = probe_metrics(backbone, train_set, test_set, k)
    if out is not None:
        rs.dump(out / f"regions_{tag}{epoch}.json")
        (out / f"regions_{tag}{epoch}.svg").write_text(
            render_svg(rs, title=f"{objective} {tag} {epoch}"))
    return MetricsRow(epoch, step, objective, acc, agg.count, agg.mean_area,
                      agg.mean_eccentricity, agg.mean_boundaries, rstd)


def telemetry_row(epoch, step, objective, backbone, plane, domain, train_set, test_set, k, res) -> MetricsRow:
    net = backbone if plane is None else restrict_to_plane(backbone, plane)
    n = grid_count(net, domain, res)
    acc, rstd = probe_metrics(backbone, train_set, test_set, k)
    return MetricsRow(epoch, step, objective, acc, n, area(domain) / n, None, None, rstd)


def _run_jobs(fn, jobs: list[tuple], workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *j) for j in jobs]
        return [f.result() for f in futures]


def _summary_rows(results: list[tuple[int, list[MetricsRow]]]) -> list[list[str]]:
    return [[str(seed)] + r.cells() for seed, rows in results for r in rows]


# -- moons ----------------------------------------------------------------------------

def moons_sets(spec: ExperimentSpec) -> tuple[LabeledSet, LabeledSet]:
    train_set = make_moons(spec.moons_n, spec.moons_noise, seed=0)
    test_set = make_moons(spec.moons_test_n, spec.moons_noise, seed=1)
    return train_set, test_set


def _moons_job(spec: ExperimentSpec, model: str, seed: int) -> tuple[int, list[MetricsRow]]:
    train_set, test_set = moons_sets(spec)
    cfg = spec.config_for(model, seed)
    out = job_dir(spec, model, seed)
    out.mkdir(parents=True, exist_ok=True)
    asm = build_assembly(model, spec.backbone_sizes, np.random.default_rng(seed), n_classes=2,
                         predictor=cfg.predictor, ema_tau=cfg.ema_tau, queue_capacity=cfg.queue_capacity)
    cfg.snapshot_epochs = [cfg.epochs]
    snaps = train(asm, cfg, train_set, policy=AugmentationPolicy.points(spec.jitter),
                  snapshot_dir=out / "snapshots")
    final = snaps[-1]
    domain = rectangle(0.0, 0.0, 1.0, 1.0)
    row = snapshot_row(final.epoch, final.step, model, final.backbone, None, domain,
                       train_set, test_set, spec.knn_k, out)
    write_metrics(out / "metrics.csv", [row])
    log.info("moons %s seed %d: %d regions", model, seed, row.regions)
    return seed, [row]


def run_moons(spec: ExperimentSpec) -> list[list[str]]:
    """Train every model on moons and extract its tessellation of [0, 1]^2."""
    if spec.kind != "moons":
        raise ConfigError("run_moons needs a moons spec")
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, m, s) for s in spec.seeds for m in spec.models]
    results = _run_jobs(_moons_job, jobs, spec.jobs)
    rows = _summary_rows(results)
    write_csv(spec.out_dir / "summary.csv", ["seed"] + METRICS_HEADER, rows)
    return rows


def moons_trend(rows: list[list[str]], supervised=("classifier", "supcon"), ssl=("simclr", "simsiam"),
                distill=("simsiam",), ratio: float = 1.5) -> dict[int, dict]:
    """Per seed: do supervised counts beat SSL counts, and distillation areas beat supervised areas, by ``ratio``?"""
    by_seed: dict[int, dict[str, dict]] = {}
    for r in rows:
        rec = dict(zip(["seed"] + METRICS_HEADER, r))
        by_seed.setdefault(int(rec["seed"]), {})[rec["objective"]] = rec
    out = {}
    for seed, recs in sorted(by_seed.items()):
        count = {k: int(v["regions"]) for k, v in recs.items()}
        mean_area = {k: float(v["mean_area"]) for k, v in recs.items()}
        counts_ok = min(count[s] for s in supervised) >= ratio * max(count[s] for s in ssl)
        area_ok = min(mean_area[d] for d in distill) >= ratio * max(mean_area[s] for s in supervised)
        out[seed] = {"counts": count, "mean_area": mean_area, "counts_ok": counts_ok,
                     "area_ok": area_ok, "ok": counts_ok and area_ok}
    return out


# -- image datasets ----------------------------------------------------------------------

def image_sets(spec: ExperimentSpec) -> tuple[LabeledSet, LabeledSet]:
    train_set = load_dataset(spec.dataset, "train", spec.data_root).subset(spec.n_train, seed=0)
    test_set = load_dataset(spec.dataset, "test", spec.data_root).subset(spec.n_test, seed=0)
    return train_set, test_set


def shared_plane(spec: ExperimentSpec, train_set: LabeledSet) -> PlaneEmbedding:
    """The plane every model is analysed on, also written to ``plane.json``."""
    path = spec.out_dir / "plane.json"
    plane = plane_for_dataset(train_set.images, train_set.labels, spec.plane_classes, seed=spec.plane_seed,
                              extent_factor=spec.extent_factor, log=log)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    plane.dump(path)
    return plane


# -- evolution ------------------------------------------------------------------------------

def _evolution_job(spec: ExperimentSpec, model: str, seed: int, plane_doc: dict) -> tuple[int, list[MetricsRow]]:
    train_set, test_set = image_sets(spec)
    plane = PlaneEmbedding.from_json(plane_doc)
    domain = plane.domain()
    cfg = spec.config_for(model, seed)
    out = job_dir(spec, model, seed)
    out.mkdir(parents=True, exist_ok=True)
    asm = build_assembly(model, spec.backbone_sizes, np.random.default_rng(seed),
                         n_classes=int(train_set.labels.max()) + 1, predictor=cfg.predictor,
                         ema_tau=cfg.ema_tau, queue_capacity=cfg.queue_capacity)
    rows: list[MetricsRow] = []
    telemetry: list[MetricsRow] = []
    step = [0]

    def on_step(s, a, loss, info):
        step[0] = s

    def on_epoch(epoch, a):
        telemetry.append(telemetry_row(epoch, step[0], model, a.backbone, plane, domain,
                                       train_set, test_set, spec.knn_k, spec.grid_res))

    def sink(snap, a):
        rows.append(snapshot_row(snap.epoch, snap.step, model, snap.backbone, plane, domain,
                                 train_set, test_set, spec.knn_k, out))

    train(asm, cfg, train_set, snapshot_sink=sink, on_step=on_step, on_epoch=on_epoch,
          snapshot_dir=out / "snapshots")
    write_metrics(out / "metrics.csv", rows)
    write_metrics(out / "telemetry.csv", telemetry)
    log.info("evolution %s seed %d done", model, seed)
    return seed, rows


def run_evolution(spec: ExperimentSpec) -> list[list[str]]:
    """Train every model, logging grid counts each epoch and exact metrics at snapshot epochs."""
    if spec.kind != "evolution":
        raise ConfigError("run_evolution needs an evolution spec")
    train_set, _ = image_sets(spec)
    plane = shared_plane(spec, train_set)
    jobs = [(spec, m, s, plane.to_json()) for s in spec.seeds for m in spec.models]
    results = _run_jobs(_evolution_job, jobs, spec.jobs)
    rows = _summary_rows(results)
    write_csv(spec.out_dir / "summary.csv", ["seed"] + METRICS_HEADER, rows)
    return rows


def replay_snapshots(snap_dir: str | Path, plane: PlaneEmbedding | None, train_set: LabeledSet,
                     test_set: LabeledSet, k: int = 5, out: Path | None = None,
                     domain: np.ndarray | None = None) -> list[MetricsRow]:
    """Recompute snapshot metrics from persisted weights alone."""
    paths = sorted(Path(snap_dir).glob("epoch*.bin"))
    if not paths:
        raise ConfigError(f"no snapshots in {snap_dir}")
    if domain is None:
        domain = plane.domain() if plane is not None else rectangle(0.0, 0.0, 1.0, 1.0)
    rows = []
    for p in paths:
        net, meta = load_network(p)
        rows.append(snapshot_row(int(meta["epoch"]), int(meta["step"]), str(meta["objective"]), net,
                                 plane, domain, train_set, test_set, k, out))
    return rows


def evolution_trend(out_dir: str | Path, models: Sequence[str], seed: int = 0,
                    supervised=("classifier", "triplet", "supcon"), growth: float = 1.3) -> dict[str, dict]:
    """Grid-count trends per model from the telemetry CSVs."""
    res = {}
    for m in models:
        rows = read_metrics(Path(out_dir) / f"{m}_seed{seed}" / "telemetry.csv")
        count = {int(r["epoch"]): int(r["regions"]) for r in rows}
        if m in supervised:
            ok = count[max(count)] >= growth * count[1]
            res[m] = {"kind": "supervised", "epoch1": count[1], "last": count[max(count)], "ok": ok}
        else:
            early = min(count[e] for e in range(1, 11) if e in count)
            res[m] = {"kind": "ssl", "epoch0": count[0], "min_1_10": early, "ok": early < count[0]}
    return res


# -- collapse --------------------------------------------------------------------------------

def _collapse_job(spec: ExperimentSpec, seed: int, predictor: bool, plane_doc: dict) -> tuple[int, dict]:
    train_set, test_set = image_sets(spec)
    plane = PlaneEmbedding.from_json(plane_doc)
    domain = plane.domain()
    cfg = dataclasses.replace(spec.config_for("simsiam", seed), predictor=predictor)
    per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    cfg.epochs = math.ceil(spec.steps / per_epoch) + 1
    cfg.snapshot_epochs = []
    tag = "pred" if predictor else "nopred"
    out = job_dir(spec, "simsiam", seed, tag)
    out.mkdir(parents=True, exist_ok=True)
    asm = build_assembly("simsiam", spec.backbone_sizes, np.random.default_rng(seed), predictor=predictor,
                         ema_tau=cfg.ema_tau, queue_capacity=cfg.queue_capacity)
    probe = test_set.subset(spec.probe_n, seed=0).images
    rows: list[tuple[int, int, float]] = []

    def record(step, a):
        z = embed(a.projection, embed(a.backbone, probe))
        n = grid_count(restrict_to_plane(a.backbone, plane), domain, spec.grid_res)
        rows.append((step, n, _safe_rep_std(z)))
        if step in spec.svg_steps:
            rs = analyze_network(a.backbone, plane, domain)
            rs.dump(out / f"regions_step{step}.json")
            (out / f"regions_step{step}.svg").write_text(render_svg(rs, title=f"simsiam {tag} step {step}"))

    record(0, asm)
    train(asm, cfg, train_set, on_step=lambda s, a, loss, info: record(s, a), max_steps=spec.steps)
    write_csv(out / "collapse.csv", COLLAPSE_HEADER, ([str(s), str(n), repr(r)] for s, n, r in rows))
    summary = collapse_summary(rows)
    _dump_json(out / "summary.json", summary)
    return seed, summary


def collapse_summary(rows: Sequence[tuple[int, int, float]], region_frac: float = 0.2,
                     std_frac: float = 0.5) -> dict:
    """When regions fall to ``region_frac`` of init vs when rep_std falls to ``std_frac`` of its peak.

    A rep_std that never falls counts as falling after the last step.
    """
    steps = [int(s) for s, _, _ in rows]
    counts = np.array([n for _, n, _ in rows], dtype=np.int64)
    stds = np.array([r for _, _, r in rows], dtype=np.float64)
    init = int(counts[0])
    hit = np.flatnonzero(counts <= region_frac * init)
    region_step = steps[hit[0]] if hit.size else None
    peak_i = int(np.argmax(stds))
    fall = np.flatnonzero(stds[peak_i:] <= std_frac * stds[peak_i])
    std_step = steps[peak_i + fall[0]] if fall.size else None
    ordered = region_step is not None and (std_step is None or region_step < std_step)
    return {
        "init_regions": init,
        "final_regions": int(counts[-1]),
        "min_region_ratio": float(counts.min() / init),
        "region_step": region_step,
        "peak_rep_std": float(stds[peak_i]),
        "peak_step": steps[peak_i],
        "std_step": std_step,
        "ordered": bool(ordered),
        "steps": steps[-1],
    }


def run_collapse(spec: ExperimentSpec) -> dict:
    """SimSiam without its predictor, and the predictor control, tracked step by step."""
    if spec.kind != "collapse":
        raise ConfigError("run_collapse needs a collapse spec")
    train_set, _ = image_sets(spec)
    plane = shared_plane(spec, train_set)
    jobs = [(spec, s, p, plane.to_json()) for s in spec.seeds for p in (False, True)]
    results = _run_jobs(_collapse_job, jobs, spec.jobs)
    merged = {"nopred": {}, "pred": {}}
    for (spec_, seed, predictor, _), (_, summary) in zip(jobs, results):
        merged["pred" if predictor else "nopred"][str(seed)] = summary
    n_ordered = sum(v["ordered"] for v in merged["nopred"].values())
    merged["ordered_seeds"] = n_ordered
    merged["control_kept"] = all(v["min_region_ratio"] > 0.5 for v in merged["pred"].values())
    _dump_json(spec.out_dir / "collapse_summary.json", merged)
    return merged


def run(spec: ExperimentSpec):
    return {"moons": run_moons, "evolution": run_evolution, "collapse": run_collapse}[spec.kind](spec)


__all__ = [
    "ExperimentSpec", "MetricsRow", "METRICS_HEADER", "COLLAPSE_HEADER", "write_metrics", "read_metrics",
    "write_csv", "run_moons", "run_evolution", "run_collapse", "run", "replay_snapshots", "moons_trend",
    "evolution_trend", "collapse_summary", "snapshot_row", "telemetry_row", "probe_metrics",
]
