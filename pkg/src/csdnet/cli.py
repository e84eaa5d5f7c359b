"""Command-line driver.

    csdnet train <cfg> --out <dir> [--seed N]
    csdnet eval <ckpt> <data> [--dual-branch]
    csdnet augment <img> <ckpt>
    csdnet gradcheck
    csdnet gen-data <cfg> --out <dir>

Exit codes: 0 success, 1 gradient-suite failure, 2 bad config or missing
input, 3 training divergence. Everything except paths and the seed lives in
the JSON config so experiments stay declarative and diffable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .backbone import CsdModel
from .checkpoint import load_checkpoint, save_checkpoint
from .checks import TOLERANCE, failing_ops, run_gradient_suite
from .config import ConfigError, load_config
from .data import generate_dataset, load_dataset, write_dataset
from .ppm import read_ppm, write_ppm
from .ssdp import augment, binarize, largest_component_mask
from .tensor import no_grad
from .trainer import TrainingDiverged, raw_forward, timed_accuracy, train


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    dataset = generate_dataset(cfg.data_spec())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = train(cfg.train_config(), dataset)
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    (out_dir / cfg.metrics_name).write_bytes(result.metrics_bytes())
    save_checkpoint(
        out_dir / cfg.checkpoint_name,
        result.state.model.named_params(),
        digest=cfg.digest(),
    )
    final = result.reports[-1]
    print(f"steps {final.step + 1} final_total {final.total:.6f} final_acc {final.acc:.4f}")
    print(f"wrote {out_dir / cfg.metrics_name} and {out_dir / cfg.checkpoint_name}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = CsdModel.from_params(ckpt.params)
    dataset = load_dataset(args.data)
    idx = dataset.test_indices
    if idx.size == 0:
        raise ValueError(f"no test-split rows in {args.data}")
    acc, ips = timed_accuracy(
        model, dataset.images[idx], dataset.labels[idx], dual_branch=args.dual_branch
    )
    print(f"top1 {acc:.4f}")
    print(f"images_per_sec {ips:.2f}")
    return 0


def _cmd_augment(args) -> int:
    image = read_ppm(args.image)
    if image.shape[1] % 8 or image.shape[2] % 8:
        raise ValueError("augment: image extents must be divisible by 8")
    ckpt = load_checkpoint(args.checkpoint)
    model = CsdModel.from_params(ckpt.params)
    with no_grad():
        _, pm, _ = raw_forward(model, image)
    mask = largest_component_mask(binarize(pm.p_img))
    aug_img = augment(image, mask)

    overlay = image * 0.3  # dim everything outside the selected rectangle
    top, left, h, w = mask.rect
    overlay[:, top : top + h, left : left + w] = image[:, top : top + h, left : left + w]

    stem = Path(args.image)
    stem = stem.with_name(stem.name[: -len(".ppm")] if stem.name.endswith(".ppm") else stem.name)
    mask_path = stem.with_name(stem.name + ".mask.ppm")
    aug_path = stem.with_name(stem.name + ".aug.ppm")
    write_ppm(mask_path, overlay)
    write_ppm(aug_path, aug_img)
    print(f"rect top={top} left={left} height={h} width={w}")
    print(f"wrote {mask_path} and {aug_path}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite()
    for name, err in results.items():
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{name:<24} {err:.3e}  {status}")
    failures = failing_ops(results)
    if failures:
        print(f"failed: {', '.join(failures)}")
        return 1
    print(f"all {len(results)} ops within {TOLERANCE:.0e}")
    return 0


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    dataset = generate_dataset(cfg.data_spec())
    write_dataset(dataset, args.out)
    n_train = int(np.sum(dataset.is_train))
    print(
        f"wrote {len(dataset.images)} images ({n_train} train / "
        f"{len(dataset.images) - n_train} test, {dataset.classes} classes) to {args.out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csdnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the config's synthetic dataset")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="raw-only top-1 accuracy and throughput")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--dual-branch", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("augment", help="write the mask overlay and augmented image")
    p.add_argument("image")
    p.add_argument("checkpoint")
    p.set_defaults(fn=_cmd_augment)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write the synthetic dataset to a directory")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
