"""Command-line entry point: ``bordernet <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, data, filter_bank, orientation_map
from .models import Variant, load_checkpoint
from .occlusion import Direction, OcclusionSpec, apply_occlusion, occlusion_mask, preview
from .pnm import read_pgm

log = logging.getLogger("bordernet")


def _config_from(args) -> bench.TrainConfig:
    return bench.TrainConfig(
        variant=args.variant,
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        front_trainable=args.trainable_front,
        normalize_filters=not args.raw_filters,
        deterministic=not args.fast,
    )


def cmd_train(args) -> int:
    config = _config_from(args)
    train_set = data.load_mnist("train", args.data_dir)
    if args.limit:
        train_set = train_set.subset(args.limit)
    out = Path(args.out or f"{config.model_id}.bnet")
    out.parent.mkdir(parents=True, exist_ok=True)
    result = bench.train(config, train_set, out)
    print(f"wrote {result.checkpoint}")
    for rec in result.history:
        print(f"epoch {rec['epoch']:2d}  loss {rec['mean_loss']:.4f}  train acc {rec['train_accuracy']:.4f}")
    return 0


def cmd_eval_grid(args) -> int:
    net = load_checkpoint(args.checkpoint)
    test_set = data.load_mnist("test", args.data_dir)
    if args.limit:
        test_set = test_set.subset(args.limit)
    specs = bench.occlusion_grid(direction=args.direction)
    model_id = args.model_id or Path(args.checkpoint).stem
    grid = bench.evaluate_grid(net, test_set, specs, workers=args.workers, model_id=model_id,
                               deterministic=not args.fast)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    bench.export_csv(grid, prefix.with_name(prefix.name + ".csv"))
    bench.export_heatmap_pgm(grid, prefix.with_name(prefix.name + ".pgm"), scale=args.scale)
    print(f"clean accuracy {grid.clean_accuracy:.4f}; grid mean {grid.values.mean():.4f}")
    print(grid.csv_text(), end="")
    return 0


def cmd_diff(args) -> int:
    a = bench.load_csv(args.a)
    b = bench.load_csv(args.b)
    d = bench.diff_grid(a, b)
    out = Path(args.out)
    bench.export_csv(d, out)
    bench.export_heatmap_pgm(d, out.with_suffix(".pgm"), scale=args.scale)
    region = bench.mild_region(d)
    print(f"{d.model_id}: mean {d.values.mean():+.4f}, mild (w<=s) mean {d.values[region].mean():+.4f}, "
          f"severe (w>s) mean {d.values[~region].mean():+.4f}")
    return 0


def cmd_occlude(args) -> int:
    spec = OcclusionSpec(args.w, args.s, args.direction, args.phase)
    mask = occlusion_mask(spec)
    print(f"{spec.describe()}: {int(mask.sum())} of {mask.size} pixels occluded")
    test_set = data.load_mnist("test", args.data_dir)
    occluded = apply_occlusion(test_set, spec)
    if args.preview:
        preview(occluded, args.preview, count=args.count)
        print(f"wrote {args.preview}")
    if args.export_idx:
        prefix = args.export_idx
        data.export_idx(occluded, f"{prefix}-images-idx3-ubyte", f"{prefix}-labels-idx1-ubyte")
        print(f"wrote {prefix}-images-idx3-ubyte and {prefix}-labels-idx1-ubyte")
    return 0


def cmd_filters(args) -> int:
    out = Path(args.export)
    banks = [
        ("oriented", filter_bank.make_oriented_filter_bank()),
        ("oriented_l1", filter_bank.make_oriented_filter_bank(normalize=True)),
        (f"random_seed{args.random_seed}", filter_bank.make_random_filter_bank(args.random_seed)),
    ]
    for prefix, bank in banks:
        filter_bank.export_bank(bank, out, prefix, scale=args.scale)
        bank.save(out / f"{prefix}.fbank")
    print(f"wrote filters to {out}")
    return 0


def _load_image(spec: str, data_dir) -> np.ndarray:
    if spec.startswith("mnist-test:") or spec.startswith("mnist-train:"):
        split, idx = spec.split(":")
        ds = data.load_mnist(split.split("-")[1], data_dir)
        return ds.images[int(idx), 0].astype(np.float64)
    if spec.endswith(".npy"):
        return np.load(spec).astype(np.float64)
    return read_pgm(spec)


def cmd_orientmap(args) -> int:
    image = _load_image(args.image, args.data_dir)
    grad = orientation_map.gradient(image, method=args.method)
    omap = orientation_map.orientation_map_closed_form(grad, args.eps)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    orientation_map.export_csv(omap, prefix.with_name(prefix.name + ".csv"))
    orientation_map.export_hsv_ppm(omap, prefix.with_name(prefix.name + ".ppm"), scale=args.scale)
    print(f"{int(omap.regular_mask.sum())} regular pixels of {omap.regular_mask.size}")
    return 0


def cmd_reproduce(args) -> int:
    from .experiment import reproduce

    summary = reproduce(
        Path(args.out), seeds=args.seeds, data_dir=args.data_dir, epochs=args.epochs,
        train_limit=args.train_limit, test_limit=args.test_limit,
        front_trainable=args.trainable_front, normalize_filters=not args.raw_filters,
        workers=args.workers,
    )
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bordernet", description=__doc__)
    p.add_argument("--data-dir", default=None, help=f"MNIST directory (default ${data.DATA_DIR_ENV} or ./data/mnist)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_train_flags(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epochs", type=int, default=10)
        sp.add_argument("--trainable-front", action="store_true", help="let the front filters learn")
        sp.add_argument("--raw-filters", action="store_true", help="skip L1 normalization of front filters")

    sp = sub.add_parser("train", help="train one model on clean MNIST")
    sp.add_argument("--variant", choices=[v.value for v in Variant], required=True)
    add_train_flags(sp)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--fast", action="store_true", help="allow multithreaded BLAS (not bit-reproducible)")
    sp.add_argument("--limit", type=int, default=0, help="train on the first N images only")
    sp.add_argument("--out", help="checkpoint path (default <model-id>.bnet)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval-grid", help="accuracy over the 10x10 occlusion grid")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="output prefix for .csv/.pgm")
    sp.add_argument("--model-id")
    sp.add_argument("--direction", choices=[d.value for d in Direction], default="anti")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--limit", type=int, default=0, help="evaluate on the first N test images only")
    sp.add_argument("--scale", type=int, default=16)
    sp.add_argument("--fast", action="store_true")
    sp.set_defaults(func=cmd_eval_grid)

    sp = sub.add_parser("diff", help="difference of two accuracy grids (a - b)")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--scale", type=int, default=16)
    sp.set_defaults(func=cmd_diff)

    sp = sub.add_parser("occlude", help="occlude the test set with one stripe pattern")
    sp.add_argument("--w", type=int, required=True)
    sp.add_argument("--s", type=int, required=True)
    sp.add_argument("--direction", choices=[d.value for d in Direction], default="anti")
    sp.add_argument("--phase", type=int, default=0)
    sp.add_argument("--preview", help="PGM contact sheet of occluded samples")
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--export-idx", help="prefix for IDX export of the occluded test set")
    sp.set_defaults(func=cmd_occlude)

    sp = sub.add_parser("filters", help="export the front-end filter banks")
    sp.add_argument("--export", required=True, help="output directory")
    sp.add_argument("--random-seed", type=int, default=0)
    sp.add_argument("--scale", type=int, default=16)
    sp.set_defaults(func=cmd_filters)

    sp = sub.add_parser("orientmap", help="orientation map of an image")
    sp.add_argument("--image", required=True, help="PGM, .npy, or mnist-test:INDEX")
    sp.add_argument("--out", required=True, help="output prefix for .csv/.ppm")
    sp.add_argument("--method", choices=["central", "sobel"], default="central")
    sp.add_argument("--eps", type=float, default=orientation_map.EPS_REG)
    sp.add_argument("--scale", type=int, default=8)
    sp.set_defaults(func=cmd_orientmap)

    sp = sub.add_parser("reproduce", help="train all variants over several seeds and compare grids")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--trainable-front", action="store_true")
    sp.add_argument("--raw-filters", action="store_true")
    sp.add_argument("--train-limit", type=int, default=0)
    sp.add_argument("--test-limit", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command in ("train", "reproduce"):
        logging.getLogger("bordernet").setLevel(logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
