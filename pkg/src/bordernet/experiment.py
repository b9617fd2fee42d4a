"""Full benchmark: every variant over several seeds, then seed-paired comparisons.

Layout of the output directory::

    <model-id>.bnet (+ .json)      checkpoint and sidecar
    <model-id>.csv  (+ .json)      accuracy grid and metadata
    <model-id>.pgm  (+ .json)      heatmap
    diff_bordernet[-mode]_vs_<other>.csv   seed-averaged difference grid
    summary[-mode].json                   per-seed statistics for the comparisons

``-mode`` is ``-trainable`` and/or ``-raw`` for the non-default front-end
settings; Vanilla checkpoints are shared between modes.

Existing checkpoints and grids are reused, so an interrupted run resumes
where it stopped.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

from . import bench
from .data import load_mnist
from .models import Variant, load_checkpoint

log = logging.getLogger(__name__)

VARIANTS = (Variant.VANILLA, Variant.BORDERNET, Variant.RANDOMNET)


def run_one(config: bench.TrainConfig, out_dir: Path, train_set, test_set, workers: int = 1) -> bench.AccuracyGrid:
    ckpt = out_dir / f"{config.model_id}.bnet"
    grid_path = out_dir / f"{config.model_id}.csv"
    if grid_path.exists() and ckpt.exists():
        log.info("reusing %s", grid_path)
        return bench.load_csv(grid_path)
    if ckpt.exists():
        log.info("reusing %s", ckpt)
        net = load_checkpoint(ckpt, config.variant)
    else:
        t0 = time.perf_counter()
        net = bench.train(config, train_set, ckpt).net
        log.info("trained %s in %.0fs", config.model_id, time.perf_counter() - t0)
    t0 = time.perf_counter()
    grid = bench.evaluate_grid(net, test_set, workers=workers, model_id=config.model_id,
                               deterministic=config.deterministic)
    log.info("%s: clean %.4f, grid mean %.4f (%.0fs)", config.model_id, grid.clean_accuracy,
             grid.values.mean(), time.perf_counter() - t0)
    bench.export_csv(grid, grid_path)
    bench.export_heatmap_pgm(grid, out_dir / f"{config.model_id}.pgm", scale=16, lo=0.0, hi=1.0)
    return grid


def compare(out_dir: Path, grids: dict, seeds, suffix: str = "") -> dict:
    summary = {}
    border = [grids[(Variant.BORDERNET, s)] for s in seeds]
    for other in (Variant.VANILLA, Variant.RANDOMNET):
        others = [grids[(other, s)] for s in seeds]
        cmp = bench.compare_seeds(border, others, label=f"bordernet - {other.value}")
        mean_grid = bench.AccuracyGrid(
            cmp.cell_mean, border[0].w_values, border[0].s_values,
            model_id=cmp.label, meta={"kind": "seed-mean difference", "seeds": list(seeds)},
        )
        bench.export_csv(mean_grid, out_dir / f"diff_bordernet{suffix}_vs_{other.value}.csv")
        bench.export_heatmap_pgm(mean_grid, out_dir / f"diff_bordernet{suffix}_vs_{other.value}.pgm",
                                 scale=16)
        summary[f"bordernet_vs_{other.value}"] = cmp.summary()
    summary["clean_accuracy"] = {
        grids[(v, s)].model_id: grids[(v, s)].clean_accuracy for v in VARIANTS for s in seeds
    }
    summary["grid_mean"] = {
        grids[(v, s)].model_id: float(grids[(v, s)].values.mean()) for v in VARIANTS for s in seeds
    }
    return summary


def reproduce(out_dir: Path, seeds=(0, 1, 2), data_dir=None, epochs: int = 10, train_limit: int = 0,
              test_limit: int = 0, front_trainable: bool = False, normalize_filters: bool = True,
              workers: int = 1) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set = load_mnist("train", data_dir)
    test_set = load_mnist("test", data_dir)
    if train_limit:
        train_set = train_set.subset(train_limit)
    if test_limit:
        test_set = test_set.subset(test_limit)
    grids = {}
    for seed in seeds:
        for variant in VARIANTS:
            config = bench.TrainConfig(variant=variant, seed=seed, epochs=epochs,
                                       front_trainable=front_trainable, normalize_filters=normalize_filters)
            grids[(variant, seed)] = run_one(config, out_dir, train_set, test_set, workers)
    suffix = ("-trainable" if front_trainable else "") + ("" if normalize_filters else "-raw")
    summary = compare(out_dir, grids, list(seeds), suffix)
    summary["settings"] = {
        "seeds": list(seeds), "epochs": epochs, "train_size": len(train_set), "test_size": len(test_set),
        "front_trainable": front_trainable, "normalize_filters": normalize_filters,
        "train_hash": train_set.content_hash, "test_hash": test_set.content_hash,
    }
    (out_dir / f"summary{suffix}.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
