"""Training, occlusion-grid evaluation, and grid comparison."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import Dataset
from .errors import ProvenanceError
from .filter_bank import make_oriented_filter_bank, make_random_filter_bank
from .models import Network, Variant, build_bordernet, build_randomnet, build_vanilla, save_checkpoint
from .occlusion import GRID_RANGE, OcclusionSpec, apply_occlusion, occlusion_grid
from .pnm import to_uint8, upscale, write_pgm

log = logging.getLogger(__name__)

EVAL_BATCH = 1000


@dataclass
class TrainConfig:
    variant: Variant = Variant.VANILLA
    seed: int = 0
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    front_trainable: bool = False
    normalize_filters: bool = True
    deterministic: bool = True
    bank_seed: int | None = None  # RandomNet filter seed; defaults to ``seed``

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @property
    def model_id(self) -> str:
        parts = [self.variant.value]
        if self.variant is not Variant.VANILLA:
            if self.front_trainable:
                parts.append("trainable")
            if not self.normalize_filters:
                parts.append("raw")
        return "-".join(parts) + f"-seed{self.seed}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["model_id"] = self.model_id
        return d


def build_network(config: TrainConfig) -> Network:
    if config.variant is Variant.VANILLA:
        return build_vanilla(config.seed)
    if config.variant is Variant.BORDERNET:
        bank = make_oriented_filter_bank(normalize=config.normalize_filters)
        return build_bordernet(config.seed, bank, config.front_trainable)
    bank_seed = config.seed if config.bank_seed is None else config.bank_seed
    bank = make_random_filter_bank(bank_seed, normalize=config.normalize_filters)
    return build_randomnet(config.seed, bank, config.front_trainable)


def thread_limit(deterministic: bool):
    """Single-threaded BLAS in deterministic mode; a no-op otherwise."""
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


@dataclass
class TrainResult:
    net: Network
    history: list = field(default_factory=list)
    checkpoint: Path | None = None


def _batched_forward(net: Network, images: np.ndarray, start: int, stop: int | None) -> np.ndarray:
    outs = [net.forward_range(images[i:i + EVAL_BATCH], start, stop) for i in range(0, len(images), EVAL_BATCH)]
    return np.concatenate(outs) if outs else images[:0]


def train(config: TrainConfig, train_set: Dataset, checkpoint_path=None) -> TrainResult:
    """Mini-batch ADAM on clean training data.

    Examples are reshuffled every epoch with ``default_rng((seed, epoch))``;
    the final short batch is kept. If the network starts with frozen layers
    their output is computed once up front and reused for every epoch.
    """
    if not train_set.is_clean:
        raise ProvenanceError(f"refusing to train on occluded data ({train_set.occlusion.describe()})")
    if train_set.split not in ("train", "unknown"):
        raise ProvenanceError(f"refusing to train on the {train_set.split!r} split")

    net = build_network(config)
    state = nx.AdamState(learning_rate=config.learning_rate)
    params = net.params
    n = len(train_set)
    history = []
    with thread_limit(config.deterministic):
        start = net.frozen_prefix
        feats = _batched_forward(net, train_set.images, 0, start) if start else train_set.images
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            total_loss = 0.0
            correct = 0
            batches = 0
            for lo in range(0, n, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                y = train_set.labels[idx]
                loss, logits = net.loss_and_backward(feats[idx], y, start=start)
                nx.adam_step(params, state)
                total_loss += loss * len(idx)
                correct += int((logits.argmax(axis=1) == y).sum())
                batches += 1
            record = {
                "epoch": epoch,
                "batches": batches,
                "mean_loss": total_loss / n,
                "train_accuracy": correct / n,
                "seconds": round(time.perf_counter() - t0, 2),
            }
            history.append(record)
            log.info("%s epoch %d: loss %.4f train acc %.4f (%.1fs)", config.model_id, epoch,
                     record["mean_loss"], record["train_accuracy"], record["seconds"])

    result = TrainResult(net, history)
    if checkpoint_path is not None:
        sidecar = {"train_config": config.to_dict(), "history": history, "train_hash": train_set.content_hash}
        result.checkpoint = save_checkpoint(net, checkpoint_path, sidecar)
    return result


def predict(net: Network, images: np.ndarray) -> np.ndarray:
    """Predicted classes; logit ties go to the smallest class index."""
    return _batched_forward(net, images, 0, None).argmax(axis=1)


def evaluate(net: Network, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(net, dataset.images) == dataset.labels))


# --------------------------------------------------------------------------
# accuracy grids
# --------------------------------------------------------------------------

@dataclass
class AccuracyGrid:
    """Accuracy (or accuracy difference) per occlusion, rows indexed by w, columns by s."""

    values: np.ndarray
    w_values: tuple = GRID_RANGE
    s_values: tuple = GRID_RANGE
    model_id: str = ""
    seed: int | None = None
    dataset_hash: str = ""
    clean_accuracy: float | None = None
    timestamp: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.w_values = tuple(int(w) for w in self.w_values)
        self.s_values = tuple(int(s) for s in self.s_values)
        if self.values.shape != (len(self.w_values), len(self.s_values)):
            raise ValueError(f"grid values {self.values.shape} do not match {len(self.w_values)}x{len(self.s_values)}")

    def at(self, w: int, s: int) -> float:
        return float(self.values[self.w_values.index(w), self.s_values.index(s)])

    def csv_text(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["w\\s", *self.s_values])
        for w, row in zip(self.w_values, self.values):
            wr.writerow([w, *(f"{v:.6f}" for v in row)])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "model_id": self.model_id,
            "seed": self.seed,
            "dataset_hash": self.dataset_hash,
            "clean_accuracy": self.clean_accuracy,
            "timestamp": self.timestamp,
            **self.meta,
        }


def export_csv(grid: AccuracyGrid, path, sidecar: bool = True) -> Path:
    """CSV with header ``w\\s,1,...,10``; metadata goes to ``<path>.json``."""
    path = Path(path)
    path.write_text(grid.csv_text())
    if sidecar:
        path.with_name(path.name + ".json").write_text(json.dumps(grid.metadata(), indent=2, sort_keys=True) + "\n")
    return path


def load_csv(path) -> AccuracyGrid:
    path = Path(path)
    rows = list(csv.reader(path.read_text().splitlines()))
    s_values = [int(v) for v in rows[0][1:]]
    w_values = [int(r[0]) for r in rows[1:]]
    values = [[float(v) for v in r[1:]] for r in rows[1:]]
    meta = {}
    side = path.with_name(path.name + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
    known = {k: meta.pop(k, None) for k in ("model_id", "seed", "dataset_hash", "clean_accuracy", "timestamp")}
    return AccuracyGrid(
        values, w_values, s_values,
        model_id=known["model_id"] or "", seed=known["seed"], dataset_hash=known["dataset_hash"] or "",
        clean_accuracy=known["clean_accuracy"], timestamp=known["timestamp"] or "", meta=meta,
    )


def export_heatmap_pgm(grid: AccuracyGrid, path, scale: int = 1, lo=None, hi=None) -> Path:
    """One pixel per cell (times ``scale``), ``[lo, hi]`` -> ``[0, 255]``; mapping in ``<path>.json``."""
    path = Path(path)
    img, lo, hi = to_uint8(grid.values, lo, hi)
    write_pgm(path, upscale(img, scale))
    mapping = {
        "min": lo, "max": hi, "black": lo, "white": hi, "rows": "w", "cols": "s",
        "w_values": list(grid.w_values), "s_values": list(grid.s_values), "scale": scale,
        "model_id": grid.model_id,
    }
    path.with_name(path.name + ".json").write_text(json.dumps(mapping, indent=2) + "\n")
    return path


def evaluate_grid(net: Network, test_set: Dataset, specs=None, workers: int = 1,
                  model_id: str = "", deterministic: bool = True) -> AccuracyGrid:
    """Accuracy on every occluded copy of the clean test set.

    Cells are independent; with ``workers > 1`` they are spread over threads
    that share the read-only network and are merged back by index.
    """
    if not test_set.is_clean:
        raise ProvenanceError("evaluate_grid expects the clean test set; it applies the occlusions itself")
    specs = occlusion_grid() if specs is None else list(specs)
    w_values = sorted({sp.width for sp in specs})
    s_values = sorted({sp.spacing for sp in specs})
    if len(specs) != len(w_values) * len(s_values):
        raise ValueError("occlusion specs must form a full w x s grid")

    def cell(spec: OcclusionSpec) -> float:
        return evaluate(net, apply_occlusion(test_set, spec))

    with thread_limit(deterministic):
        clean = evaluate(net, test_set)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                accs = list(pool.map(cell, specs))
        else:
            accs = [cell(sp) for sp in specs]
    values = np.zeros((len(w_values), len(s_values)))
    for sp, acc in zip(specs, accs):
        values[w_values.index(sp.width), s_values.index(sp.spacing)] = acc
    return AccuracyGrid(
        values, w_values, s_values,
        model_id=model_id or f"{net.variant.value}-seed{net.seed}",
        seed=net.seed,
        dataset_hash=test_set.content_hash,
        clean_accuracy=clean,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"),
        meta={"direction": specs[0].direction.value, "phase": specs[0].phase, "n_test": len(test_set)},
    )


def diff_grid(a: AccuracyGrid, b: AccuracyGrid) -> AccuracyGrid:
    if a.w_values != b.w_values or a.s_values != b.s_values:
        raise ValueError("grids cover different (w, s) ranges")
    clean = None
    if a.clean_accuracy is not None and b.clean_accuracy is not None:
        clean = a.clean_accuracy - b.clean_accuracy
    return AccuracyGrid(
        a.values - b.values, a.w_values, a.s_values,
        model_id=f"{a.model_id} - {b.model_id}",
        clean_accuracy=clean,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"),
        meta={"a": a.model_id, "b": b.model_id, "kind": "difference"},
    )


# --------------------------------------------------------------------------
# seed-level comparison
# --------------------------------------------------------------------------

def mild_region(grid: AccuracyGrid) -> np.ndarray:
    """Cells with w <= s."""
    w = np.array(grid.w_values)[:, None]
    s = np.array(grid.s_values)[None, :]
    return w <= s


@dataclass
class Comparison:
    label: str
    per_seed_mild_mean: list
    mild_mean: float
    mild_stderr: float
    cell_mean: np.ndarray
    cell_spread: np.ndarray
    underperforming: list  # (w, s, mean diff, spread) with mean < -spread
    violations: list  # underperforming cells outside the severe region

    @property
    def positive(self) -> bool:
        """Mean mild-region gain is above zero by at least its standard error."""
        return self.mild_mean > 0 and self.mild_mean >= self.mild_stderr

    def summary(self) -> dict:
        return {
            "label": self.label,
            "per_seed_mild_mean": self.per_seed_mild_mean,
            "mild_mean": self.mild_mean,
            "mild_stderr": self.mild_stderr,
            "positive": self.positive,
            "underperforming_cells": self.underperforming,
            "mild_region_violations": self.violations,
        }


def compare_seeds(a_grids, b_grids, label: str = "") -> Comparison:
    """Seed-paired comparison of two models' grids (``a - b``)."""
    if len(a_grids) != len(b_grids) or not a_grids:
        raise ValueError("need the same, non-zero number of grids for both models")
    diffs = np.stack([diff_grid(a, b).values for a, b in zip(a_grids, b_grids)])
    mild = mild_region(a_grids[0])
    per_seed = [float(d[mild].mean()) for d in diffs]
    k = len(per_seed)
    stderr = float(np.std(per_seed, ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    cell_mean = diffs.mean(axis=0)
    spread = diffs.std(axis=0, ddof=1) if k > 1 else np.zeros_like(cell_mean)
    under, viol = [], []
    g = a_grids[0]
    for i, w in enumerate(g.w_values):
        for j, s in enumerate(g.s_values):
            if cell_mean[i, j] < -spread[i, j]:
                item = (w, s, float(cell_mean[i, j]), float(spread[i, j]))
                under.append(item)
                if w <= s:
                    viol.append(item)
    return Comparison(label, per_seed, float(np.mean(per_seed)), stderr, cell_mean, spread, under, viol)
