"""Parameter counts, training-memory estimates and inference timings.

Full-size configs are counted analytically.  Desk configs are also run: one
training step for the memory estimate, then warm single-image inference
timings.  Two ordering verdicts mirror the efficiency table: parameter
counts across the published variants, and inference time across the three
desk architectures.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..models import ModelConfig, build_model, count_parameters
from ..numerics import Tensor

__all__ = ["BenchRow", "BenchReport", "Verdict", "bench", "PARAM_ORDER", "TIME_ORDER",
           "PUBLISHED_PARAMS", "default_configs", "format_time"]

# published sizes, smallest first
PARAM_ORDER = ("vimunet-tiny", "unet", "vimunet-small", "unetr-base", "unetr-large", "unetr-huge")
PUBLISHED_PARAMS = dict(zip(PARAM_ORDER, (18e6, 28e6, 39e6, 113e6, 334e6, 665e6)))
TIME_ORDER = ("unet-desk", "vimunet-desk", "unetr-desk")
TIME_SLACK = 0.10


@dataclass
class BenchRow:
    name: str
    params: int
    memory_estimate_bytes: int | None = None
    time_mean_s: float | None = None
    time_std_s: float | None = None
    msa: float | None = None
    image_size: int | None = None

    @property
    def timing(self) -> str:
        return format_time(self.time_mean_s, self.time_std_s)


@dataclass
class Verdict:
    name: str
    order: list[str]
    values: list[float]
    passed: bool
    detail: str


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)
    runs: int = 0
    image_size: int = 0

    def row(self, name: str) -> BenchRow:
        return next(r for r in self.rows if r.name == name)

    def to_dict(self) -> dict:
        return {"image_size": self.image_size, "runs": self.runs,
                "rows": [asdict(r) | {"timing": r.timing} for r in self.rows],
                "verdicts": [asdict(v) for v in self.verdicts]}

    def write(self, out_dir: str | Path, stem: str = "bench") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tmp = out / f"{stem}.json.tmp"
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        tmp.replace(out / f"{stem}.json")
        write_csv(out / f"{stem}.csv", self.rows)


def write_csv(path: Path, rows: Sequence[BenchRow]) -> None:
    cols = ("name", "params", "memory_estimate_bytes", "time_mean_s", "time_std_s", "msa")
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            writer.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in cols])
    tmp.replace(path)


def format_time(mean: float | None, std: float | None) -> str:
    """``mean (std)`` in seconds, the layout of the efficiency table."""
    if mean is None:
        return ""
    return f"{mean:.4f} ({std:.4f})"


def default_configs(image_size: int = 256) -> list[ModelConfig]:
    full = [ModelConfig("vimunet", "tiny"), ModelConfig("unet"), ModelConfig("vimunet", "small"),
            ModelConfig("unetr", "base"), ModelConfig("unetr", "large"),
            ModelConfig("unetr", "huge")]
    desk = [ModelConfig(arch, "desk", image_size=image_size) for arch in ("unet", "vimunet",
                                                                          "unetr")]
    return full + desk


def training_memory_estimate(config: ModelConfig, image_size: int, seed: int = 0) -> int:
    """Parameters + gradients + two Adam moments + tape high-water of one training step."""
    model = build_model(config.replace(image_size=image_size) if config.arch != "unet"
                        else config, seed=seed)
    x = np.random.default_rng(seed).normal(size=(1, config.in_channels, image_size, image_size))
    tape = nx.current_tape()
    tape.reset()
    tape.peak_bytes = 0
    out = model(Tensor(x.astype(np.float32)))
    loss = nx.mean(out * out)
    nx.backward(loss)
    param_bytes = sum(p.data.nbytes for p in model.parameters())
    return 4 * param_bytes + tape.peak_bytes


def _timing_setup(config: ModelConfig, image_size: int, seed: int):
    cfg = config.replace(image_size=image_size) if config.arch != "unet" else config
    model = build_model(cfg, seed=seed)
    x = Tensor(np.random.default_rng(seed).normal(
        size=(config.in_channels, image_size, image_size)).astype(np.float32))
    return model, x


def time_models(configs: Sequence[ModelConfig], image_size: int, runs: int = 20,
                warmup: int = 2, seed: int = 0) -> list[tuple[float, float]]:
    """Per-image inference ``(mean, std)`` seconds for each config.

    Runs are interleaved round-robin across the models, so slow drift in machine
    load lands on every model alike instead of on whichever happens to run last.
    """
    setups = [_timing_setup(cfg, image_size, seed) for cfg in configs]
    times: list[list[float]] = [[] for _ in configs]
    with nx.no_grad():
        for i in range(warmup + runs):
            for k, (model, x) in enumerate(setups):
                t0 = time.perf_counter()
                model(x)
                if i >= warmup:
                    times[k].append(time.perf_counter() - t0)
    return [(float(np.mean(t)), float(np.std(t))) for t in times]


def time_inference(config: ModelConfig, image_size: int, runs: int = 20, warmup: int = 2,
                   seed: int = 0) -> tuple[float, float]:
    return time_models([config], image_size, runs, warmup, seed)[0]


def _order_verdict(name: str, order: Sequence[str], values: Sequence[float],
                   slack: float = 0.0) -> Verdict:
    ok = all(a < b * (1.0 + slack) for a, b in zip(values, values[1:]))
    rel = " < ".join(order)
    detail = f"{rel}: " + ", ".join(f"{n}={v:.4g}" for n, v in zip(order, values))
    if slack:
        detail += f" (slack {slack:.0%})"
    return Verdict(name, list(order), [float(v) for v in values], ok, detail)


def bench(configs: Sequence[ModelConfig], image_size: int = 256, runs: int = 20,
          warmup: int = 2, measure_full: bool = False,
          msa: dict[str, float] | None = None) -> BenchReport:
    """Count every config; measure memory and timing for desk configs (or all, if asked)."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    report = BenchReport(runs=runs, image_size=image_size)
    measured = []
    for cfg in configs:
        row = BenchRow(cfg.name, count_parameters(cfg))
        if cfg.variant == "desk" or measure_full:
            row.image_size = image_size
            row.memory_estimate_bytes = training_memory_estimate(cfg, image_size)
            measured.append((row, cfg))
        if msa and cfg.name in msa:
            row.msa = msa[cfg.name]
        report.rows.append(row)
    if measured:
        timings = time_models([cfg for _, cfg in measured], image_size, runs, warmup)
        for (row, _), (mean, std) in zip(measured, timings):
            row.time_mean_s, row.time_std_s = mean, std
    by_name = {r.name: r for r in report.rows}
    if all(n in by_name for n in PARAM_ORDER):
        report.verdicts.append(_order_verdict(
            "param_order", PARAM_ORDER, [by_name[n].params for n in PARAM_ORDER]))
        within = [abs(by_name[n].params / PUBLISHED_PARAMS[n] - 1.0) <= 0.30 for n in PARAM_ORDER]
        report.verdicts.append(Verdict(
            "param_band", list(PARAM_ORDER), [by_name[n].params for n in PARAM_ORDER], all(within),
            "each count within 30% of " + ", ".join(
                f"{n}={PUBLISHED_PARAMS[n] / 1e6:.0f}M" for n in PARAM_ORDER)))
    if all(n in by_name and by_name[n].time_mean_s is not None for n in TIME_ORDER):
        report.verdicts.append(_order_verdict(
            "time_order", TIME_ORDER, [by_name[n].time_mean_s for n in TIME_ORDER], TIME_SLACK))
    return report
