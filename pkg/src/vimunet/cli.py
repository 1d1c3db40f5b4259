"""Command-line entry point: ``generate``, ``train``, ``predict``, ``eval``, ``bench``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.
Every subcommand writes through temporary files, so re-running overwrites
outputs without leaving partial files behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .numerics import ConfigError, GradientError, ShapeError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _read_json(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _dataset(args, spec):
    from .harness import generate_dataset, load_dataset

    return load_dataset(args.data) if getattr(args, "data", None) else generate_dataset(spec)


def cmd_generate(args) -> None:
    from .harness import SyntheticDatasetSpec, generate_dataset

    data = _read_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = SyntheticDatasetSpec.from_dict(data)
    except TypeError as err:
        raise ConfigError(f"dataset config: {err}") from None
    ds = generate_dataset(spec)
    ds.save(args.out)
    print(f"wrote {len(ds.train)}/{len(ds.val)}/{len(ds.test)} train/val/test images to {args.out}")


def cmd_train(args) -> None:
    import numpy as np

    from .harness import TrainConfig, save_checkpoint, select_thresholds, train

    data = _read_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    config = TrainConfig.from_dict(data)
    ds = _dataset(args, config.dataset)
    result = train(config, ds)
    thresholds, val_msa = select_thresholds(
        result.model, np.stack([s.image for s in ds.val]), [s.labels for s in ds.val],
        config.pipeline)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", result.model, config,
                    {"best_iteration": str(result.best_iteration),
                     "thresholds": json.dumps(thresholds.to_dict(), sort_keys=True)})
    tmp = out / "train_log.csv.tmp"
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "lr"])
        for e in result.log:
            writer.writerow([e["iteration"], repr(e["loss"]), repr(e["lr"])])
    tmp.replace(out / "train_log.csv")
    report = {"config_digest": config.digest(), "seed": config.seed,
              "best_iteration": result.best_iteration, "best_val_loss": result.best_val_loss,
              "initial_loss": result.log[0]["loss"], "final_loss": result.log[-1]["loss"],
              "validation": result.val_log, "thresholds": thresholds.to_dict(),
              "val_msa": val_msa}
    tmp = out / "train_report.json.tmp"
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True))
    tmp.replace(out / "train_report.json")
    print(f"best validation loss {result.best_val_loss:.5f} at iteration "
          f"{result.best_iteration}; checkpoint in {out / 'checkpoint.bin'}")


def cmd_predict(args) -> None:
    import numpy as np

    from .harness import Thresholds, load_checkpoint, predict
    from .instseg import write_pgm

    model, config, meta = load_checkpoint(args.checkpoint)
    # thresholds chosen on the val split at train time; --config overrides single fields
    th = {**json.loads(meta.get("thresholds", "{}")), **_read_json(args.config)}
    try:
        thresholds = Thresholds(**th)
    except TypeError as err:
        raise ConfigError(f"threshold config: {err}") from None
    samples = _dataset(args, config.dataset).split(args.split)
    images = np.stack([s.image for s in samples]) if samples else np.zeros((0, 1, 1, 1))
    labels = predict(model, images, config.pipeline, thresholds) if samples else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, lab in enumerate(labels):
        write_pgm(out / f"{i:04d}.pgm", lab)
    print(f"wrote {len(labels)} label images to {out}")


def cmd_eval(args) -> None:
    from .harness import SyntheticDatasetSpec, evaluate, load_checkpoint
    from .instseg import read_pgm

    meta: dict[str, str] = {"split": args.split}
    if args.checkpoint:
        _, config, _ = load_checkpoint(args.checkpoint)
        spec = config.dataset
        meta.update(config_digest=config.digest(), seed=str(config.seed))
    elif args.data:
        spec = SyntheticDatasetSpec()
    else:
        raise ConfigError("eval needs --data or --checkpoint to locate ground truth")
    gts = [s.labels for s in _dataset(args, spec).split(args.split)]
    pred_dir = Path(args.pred)
    if not pred_dir.is_dir():
        raise ConfigError(f"{pred_dir}: prediction directory not found")
    preds = [read_pgm(p) for p in sorted(pred_dir.glob("*.pgm"))]
    for i, (p, g) in enumerate(zip(preds, gts)):
        if p.shape != g.shape:
            raise ShapeError(f"image {i}: prediction {p.shape} vs ground truth {g.shape}")
    report = evaluate(preds, gts, meta)
    report.write(args.out)
    print(f"mSA {report.msa:.4f} over {len(preds)} images")


def cmd_bench(args) -> None:
    from .harness import bench, default_configs
    from .models import ModelConfig

    data = _read_json(args.config)
    image_size = int(data.get("image_size", 256))
    if "models" in data:
        configs = [ModelConfig.from_dict(m) for m in data["models"]]
    else:
        configs = default_configs(image_size)
    report = bench(configs, image_size=image_size, runs=int(data.get("runs", 20)),
                   warmup=int(data.get("warmup", 2)), msa=data.get("msa"))
    report.write(args.out)
    for row in report.rows:
        print(f"{row.name:15s} params={row.params:>11,d}  time={row.timing or '-'}")
    for v in report.verdicts:
        print(f"[{'PASS' if v.passed else 'FAIL'}] {v.name}: {v.detail}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vimunet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config: bool = False):
        p.add_argument("--config", required=needs_config, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS threads; 1 gives bit-exact reruns")
        return p

    p = common(sub.add_parser("generate", help="write a synthetic dataset"))
    p.set_defaults(func=cmd_generate)
    p = common(sub.add_parser("train", help="train a model"), needs_config=True)
    p.add_argument("--data", help="dataset directory (default: regenerate from config)")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("predict", help="instance labels from a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_predict)
    p = common(sub.add_parser("eval", help="score predicted label images"))
    p.add_argument("--pred", required=True, help="directory of predicted .pgm label images")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("bench", help="parameter counts, memory and timing"))
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    from .harness import NumericError

    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except (NumericError, GradientError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, ValueError, KeyError, TypeError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
