"""Evaluation reports: per-image mSA, per-threshold SA, aggregate mean."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..metrics import THRESHOLDS, match_instances

__all__ = ["EvalReport", "evaluate"]


@dataclass
class EvalReport:
    per_image_msa: list[float]
    per_threshold_sa: dict[str, float]  # averaged over images
    msa: float
    metadata: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out_dir: str | Path, stem: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tmp = out / f"{stem}.json.tmp"
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        tmp.replace(out / f"{stem}.json")
        tmp = out / f"{stem}.csv.tmp"
        with tmp.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "msa"])
            for i, v in enumerate(self.per_image_msa):
                writer.writerow([i, repr(v)])
        tmp.replace(out / f"{stem}.csv")


def evaluate(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray],
             metadata: dict[str, str] | None = None) -> EvalReport:
    """Dataset score is the unweighted mean of per-image mSA; empty input scores 1.0."""
    if len(preds) != len(gts):
        raise ValueError(f"eval: {len(preds)} predictions for {len(gts)} ground-truth images")
    results = [match_instances(p, g) for p, g in zip(preds, gts)]
    per_image = [float(r.msa) for r in results]
    per_tau = {f"{t:.2f}": float(np.mean([r.sa[i] for r in results])) if results else 1.0
               for i, t in enumerate(THRESHOLDS)}
    msa = float(np.mean(per_image)) if per_image else 1.0
    return EvalReport(per_image, per_tau, msa, dict(metadata or {}))
