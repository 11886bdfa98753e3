"""Command line entry point: ``aquashift {enhance,train,eval,uicm}``.

Exit codes: 0 success, 1 data/input error, 2 configuration/weights error.
Every run first prints a JSON header with all effective settings; records
are newline-delimited JSON with a fixed field order.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .colorfulness import uicm_raw, normalize_uicm
from .enhance import enhance
from .errors import AquashiftError, CheckpointFormatError, DatasetError, DecodeError
from .imaging import atomic_write_bytes, list_images, read_image, write_image
from .losses import LAMBDAS
from .metrics import evaluate
from .network import init_params, load_checkpoint, save_checkpoint
from .training import DEFAULT_LR, TrainConfig, config_header, format_record, pair_dataset, train

log = logging.getLogger("aquashift")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


def _num(x: float):
    """JSON-safe number: infinities become the strings "inf"/"-inf"."""
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def dumps(record: dict) -> str:
    return json.dumps({k: _num(v) for k, v in record.items()})


def _emit(record: dict) -> None:
    print(dumps(record), flush=True)


def _header(command: str, args: argparse.Namespace, **extra) -> None:
    fields = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    _emit({"run": command, "version": __version__, **fields, **extra})


# -- enhance ------------------------------------------------------------------


def _minmax(t: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo, hi = float(t.min()), float(t.max())
    span = hi - lo
    return (np.zeros_like(t) if span == 0 else (t - lo) / span), lo, hi


def cmd_enhance(args) -> int:
    _header("enhance", args)
    weights = Path(args.weights)
    if not weights.is_file():
        log.error("weights file %s not found", weights)
        return EXIT_CONFIG
    try:
        params = load_checkpoint(weights)
    except CheckpointFormatError as exc:
        log.error("cannot load weights %s: %s", weights, exc)
        return EXIT_CONFIG

    inputs = list_images(args.input)
    if not inputs or not inputs[0].exists():
        log.error("no inputs found at %s", args.input)
        return EXIT_DATA

    out_dir = Path(args.output)
    ok = 0
    for path in inputs:
        try:
            image = read_image(path)
            result = enhance(image, params)
        except (DecodeError, AquashiftError, OSError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        write_image(out_dir / f"{path.stem}.png", result.output)
        record = {"file": path.name, "output": f"{path.stem}.png", "channel_max": result.channel_max.tolist()}
        if args.dump_intermediate:
            from .report import plot_enhancement

            write_image(out_dir / f"{path.stem}_oprime.png", result.o_prime)
            scaling = {}
            for name, t in (("w", result.shift.w), ("b", result.shift.b)):
                vis, lo, hi = _minmax(t)
                write_image(out_dir / f"{path.stem}_{name}.png", vis)
                scaling[name] = {"min": lo, "max": hi}
            sidecar = {"file": path.name, "scaling": scaling, "note": "map = min + png/255 * (max - min)"}
            atomic_write_bytes(out_dir / f"{path.stem}_maps.json", (json.dumps(sidecar) + "\n").encode())
            plot_enhancement(image, result, out_dir / f"{path.stem}_panel.png")
        _emit(record)
        ok += 1
    if ok == 0:
        log.error("no inputs could be enhanced")
        return EXIT_DATA
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        config = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch,
            lr=args.lr,
            lambdas=(args.lambda1, args.lambda2, args.lambda3),
            seed=args.seed,
            patch_size=args.patch,
        )
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    _header("train", args, config=config_header(config))
    try:
        dataset = pair_dataset(args.data_dir, args.gt_dir)
    except DatasetError as exc:
        log.error("%s", exc)
        return EXIT_DATA

    out = Path(args.out)
    log_path = out.with_name(out.name + ".loss.jsonl")
    lines: list[str] = []

    def on_step(rec):
        lines.append(format_record(rec))
        log.info("step %d total %.6g", rec["step"], rec["total"])

    try:
        result = train(config, dataset, init_params(config.seed), on_step=on_step)
    except DatasetError as exc:
        log.error("%s", exc)
        return EXIT_DATA

    save_checkpoint(result.params, out)
    atomic_write_bytes(log_path, "".join(line + "\n" for line in lines).encode())
    from .report import plot_loss_history

    plot_loss_history(result.history, out.with_name(out.name + ".loss.png"))
    _emit({"checkpoint": str(out), "loss_log": str(log_path), "steps": result.state.step})
    return EXIT_OK


# -- eval -----------------------------------------------------------------------


def cmd_eval(args) -> int:
    _header("eval", args)
    try:
        dataset = pair_dataset(args.pred, args.gt)
    except DatasetError as exc:
        log.error("%s", exc)
        return EXIT_DATA

    records = []
    for pred_path, gt_path in dataset.pairs:
        try:
            pred, gt = read_image(pred_path), read_image(gt_path)
            rep = evaluate(pred, gt)
        except AquashiftError as exc:
            log.warning("skipping %s: %s", pred_path.stem, exc)
            continue
        records.append({"name": pred_path.stem, "mse": rep.mse, "psnr": rep.psnr, "ssim": rep.ssim})
    if not records:
        log.error("no evaluable pairs")
        return EXIT_DATA

    aggregate = {"name": "__mean__", "count": len(records)}
    for key in ("mse", "psnr", "ssim"):
        aggregate[key] = float(np.mean([r[key] for r in records]))
    text = "".join(dumps(r) + "\n" for r in records) + dumps(aggregate) + "\n"
    report = Path(args.report)
    atomic_write_bytes(report, text.encode())
    from .report import plot_metrics

    plot_metrics(records, report.with_name(report.name + ".png"))
    _emit(aggregate)
    return EXIT_OK


# -- uicm -----------------------------------------------------------------------


def cmd_uicm(args) -> int:
    _header("uicm", args)
    inputs = list_images(args.input)
    if not inputs or not inputs[0].exists():
        log.error("no inputs found at %s", args.input)
        return EXIT_DATA
    ok = 0
    for path in inputs:
        try:
            raw = uicm_raw(read_image(path))
        except (AquashiftError, OSError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        _emit({"file": path.name, "uicm_raw": raw, "uicm": normalize_uicm(raw)})
        ok += 1
    return EXIT_OK if ok else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aquashift", description="Underwater image enhancement.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance an image or a directory of images")
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--weights", required=True, help="checkpoint file")
    p.add_argument("--dump-intermediate", action="store_true", help="also write O', W and B maps and a panel figure")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train the shift-map network on paired images")
    p.add_argument("--data-dir", required=True, help="directory of degraded inputs")
    p.add_argument("--gt-dir", required=True, help="directory of ground truth images, matched by stem")
    p.add_argument("--out", required=True, help="final checkpoint path")
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--lambda1", type=float, default=LAMBDAS[0])
    p.add_argument("--lambda2", type=float, default=LAMBDAS[1])
    p.add_argument("--lambda3", type=float, default=LAMBDAS[2])
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--patch", type=int, default=None, help="random square crop side")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MSE/PSNR/SSIM of predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted images")
    p.add_argument("--gt", required=True, help="directory of ground truth images")
    p.add_argument("--report", required=True, help="output report path (newline-delimited JSON)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("uicm", help="print colorfulness of images")
    p.add_argument("--input", required=True, help="image file or directory")
    p.set_defaults(func=cmd_uicm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
