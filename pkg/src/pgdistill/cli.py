"""Command-line interface over bundle directories.

Subcommands:
    quality    render a bundle's quality heatmap (PGM or tensor file)
    mask       write weighting-mask tensors and heatmaps for one strategy
    loss       evaluate all distillation loss terms into a JSON report
    gradcheck  compare analytic gradients against central differences
    maskout    AP versus masking-ratio CSV
    compare    per-strategy support/entropy/overlap CSV
    synth      generate a synthetic bundle from a spec JSON

Exit codes: 0 on success, 1 on validation or format errors, 2 on usage
errors.  Output bytes are fully determined by the inputs; --workers only
parallelizes independent sub-evaluations and never changes content.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .core import DistillConfig, ValidationError
from .evaluate import maskout_experiment
from .losses import (
    finite_difference_gradients,
    loss_gradients,
    max_relative_gradient_error,
    total_loss,
)
from .pgm import write_pgm
from .pgw import WeightStrategy, strategy_mask
from .quality import quality_heatmap
from .synth import GenerationError, SynthSpec, generate_bundle
from .tensor_io import FormatError, read_bundle, write_array, write_bundle

_STRATEGY_ORDER = (
    WeightStrategy.BOX,
    WeightStrategy.BOX_GAUSS,
    WeightStrategy.CENTRE,
    WeightStrategy.QUALITY,
    WeightStrategy.TOPK_EQUAL,
    WeightStrategy.KDE,
    WeightStrategy.PGW,
)

GRADCHECK_TOLERANCE = 1e-3


def _load_config(path: str | None) -> DistillConfig:
    if path is None:
        return DistillConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ValidationError([f"config {path}: unparseable JSON ({exc})"]) from exc
    return DistillConfig.from_dict(data)


def _cmd_quality(args) -> int:
    out = Path(args.out)
    if out.suffix not in (".pgm", ".bin"):
        print(f"error: --out must end in .pgm or .bin, got {out.name}", file=sys.stderr)
        return 2
    bundle = read_bundle(args.bundle)
    heatmap = quality_heatmap(bundle, args.xi)
    if out.suffix == ".pgm":
        write_pgm(out, heatmap)
    else:
        write_array(out, heatmap)
    return 0


def _cmd_mask(args) -> int:
    bundle = read_bundle(args.bundle)
    config = DistillConfig(k=args.k)
    mask = strategy_mask(bundle, WeightStrategy(args.strategy), config, head=args.head)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for lv, values in zip(mask.levels, mask.values):
        write_array(out / f"mask_l{lv.level_index}.bin", values)
        write_pgm(out / f"mask_l{lv.level_index}.pgm", values)
    return 0


def _cmd_loss(args) -> int:
    bundle = read_bundle(args.bundle)
    config = _load_config(args.config)
    report = total_loss(bundle, config)
    Path(args.out).write_text(report.to_json())
    return 0


def _cmd_gradcheck(args) -> int:
    bundle = read_bundle(args.bundle)
    config = _load_config(args.config)
    analytic = loss_gradients(bundle, config)
    numeric = finite_difference_gradients(bundle, config, step=args.step)
    err = max_relative_gradient_error(analytic, numeric)
    print(f"max_relative_error {err:.6e}")
    return 0 if err < GRADCHECK_TOLERANCE else 1


def _parse_ratios(raw: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok != ""]
    except ValueError:
        raise ValidationError([f"unparseable ratio list: {raw!r}"]) from None


def _cmd_maskout(args) -> int:
    bundle = read_bundle(args.bundle)
    curve = maskout_experiment(
        bundle,
        _parse_ratios(args.ratios),
        xi=args.xi,
        nms_threshold=args.nms_threshold,
        workers=args.workers,
    )
    Path(args.out).write_text(curve.to_csv())
    return 0


def _mask_entropy(mask) -> float:
    total = sum(v.sum(dtype=np.float64) for v in mask.values)
    if total <= 0.0:
        return 0.0
    entropy = 0.0
    for values in mask.values:
        p = values[values > 0.0] / total
        entropy -= float(np.sum(p * np.log(p), dtype=np.float64))
    return entropy


def _cmd_compare(args) -> int:
    bundle = read_bundle(args.bundle)
    config = DistillConfig(k=args.k)

    def row_for(strategy: WeightStrategy):
        mask = strategy_mask(bundle, strategy, config, head="cls")
        return strategy, mask

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            masks = list(pool.map(row_for, _STRATEGY_ORDER))
    else:
        masks = [row_for(s) for s in _STRATEGY_ORDER]

    pgw_support = set(dict(masks)[WeightStrategy.PGW].support)
    lines = ["strategy,support_size,entropy,pgw_overlap"]
    for strategy, mask in masks:
        support = set(mask.support)
        if pgw_support:
            overlap = len(support & pgw_support) / len(pgw_support)
        else:
            overlap = 1.0 if not support else 0.0
        lines.append(
            f"{strategy.value},{len(support)},{_mask_entropy(mask):.6f},{overlap:.6f}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def _cmd_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec)
    bundle = generate_bundle(spec)
    write_bundle(args.out, bundle)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgdistill",
        description="Quality-guided weighting masks and distillation losses "
        "over scene bundle directories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_workers(p):
        p.add_argument("--workers", type=int, default=1,
                       help="parallel workers (content-neutral)")

    p = sub.add_parser("quality", help="render the quality heatmap")
    p.add_argument("--bundle", required=True)
    p.add_argument("--xi", type=float, default=0.8)
    p.add_argument("--out", required=True, help="output path (.pgm or .bin)")
    add_workers(p)
    p.set_defaults(func=_cmd_quality)

    p = sub.add_parser("mask", help="write weighting-mask tensors and heatmaps")
    p.add_argument("--bundle", required=True)
    p.add_argument("--strategy", required=True,
                   choices=[s.value for s in _STRATEGY_ORDER])
    p.add_argument("--head", choices=["cls", "reg"], default="cls")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--out", required=True, help="output directory")
    add_workers(p)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("loss", help="evaluate the distillation losses")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config", default=None, help="JSON config (defaults apply)")
    p.add_argument("--out", required=True, help="output JSON path")
    add_workers(p)
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("gradcheck",
                       help="compare analytic gradients to finite differences")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--step", type=float, default=1e-3)
    add_workers(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("maskout", help="AP vs quality-masking ratio CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--ratios", required=True,
                   help="comma-separated percentages starting at 0")
    p.add_argument("--xi", type=float, default=0.8)
    p.add_argument("--nms-threshold", type=float, default=0.6)
    p.add_argument("--out", required=True, help="output CSV path")
    add_workers(p)
    p.set_defaults(func=_cmd_maskout)

    p = sub.add_parser("compare", help="per-strategy mask statistics CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--out", required=True, help="output CSV path")
    add_workers(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    p.add_argument("--spec", required=True, help="SynthSpec JSON path")
    p.add_argument("--out", required=True, help="output bundle directory")
    add_workers(p)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError, GenerationError) as exc:
        if isinstance(exc, ValidationError):
            for violation in exc.violations:
                print(f"error: {violation}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
