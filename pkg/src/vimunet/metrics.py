"""Mean segmentation accuracy over IoU thresholds.

For one threshold ``tau``, predicted and ground-truth instances are matched
one-to-one greedily in descending IoU order among pairs with IoU > tau, and

    SA(tau) = TP / (TP + FP + FN).

mSA is the mean of SA over tau in {0.50, 0.55, ..., 0.95}.  Two empty images
score 1.0; exactly one empty image scores 0.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "THRESHOLDS",
    "MatchResult",
    "iou_matrix",
    "greedy_match",
    "match_instances",
    "segmentation_accuracy",
    "mean_segmentation_accuracy",
    "dataset_msa",
]

THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def iou_matrix(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """IoU of every (pred, gt) instance pair, background excluded.

    Returns ``(iou, pred_ids, gt_ids)`` with ``iou`` of shape [n_pred, n_gt].
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"iou_matrix: shape mismatch {pred.shape} vs {gt.shape}")
    pred_ids, p_inv = np.unique(pred.ravel(), return_inverse=True)
    gt_ids, g_inv = np.unique(gt.ravel(), return_inverse=True)
    n_p, n_g = pred_ids.size, gt_ids.size
    joint = np.bincount(p_inv * n_g + g_inv, minlength=n_p * n_g).reshape(n_p, n_g)
    # drop background rows/columns
    keep_p = pred_ids > 0
    keep_g = gt_ids > 0
    area_p = joint.sum(axis=1)[keep_p]
    area_g = joint.sum(axis=0)[keep_g]
    inter = joint[np.ix_(keep_p, keep_g)].astype(np.float64)
    union = area_p[:, None] + area_g[None, :] - inter
    iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    return iou, pred_ids[keep_p], gt_ids[keep_g]


def greedy_match(iou: np.ndarray, tau: float) -> list[tuple[int, int]]:
    """One-to-one pairs (pred index, gt index) with IoU > tau, best IoU first.

    Ties are broken by (pred index, gt index) so the result is deterministic.
    """
    rows, cols = np.nonzero(iou > tau)
    if rows.size == 0:
        return []
    order = np.lexsort((cols, rows, -iou[rows, cols]))
    used_p, used_g, pairs = set(), set(), []
    for k in order.tolist():
        p, g = int(rows[k]), int(cols[k])
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g))
    return pairs


@dataclass
class MatchResult:
    iou: np.ndarray
    thresholds: tuple[float, ...]
    tp: list[int] = field(default_factory=list)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)
    sa: list[float] = field(default_factory=list)

    @property
    def msa(self) -> float:
        return float(np.mean(self.sa))

    def per_threshold(self) -> dict[str, float]:
        return {f"{t:.2f}": s for t, s in zip(self.thresholds, self.sa)}


def _sa(tp: int, fp: int, fn: int) -> float:
    total = tp + fp + fn
    return 1.0 if total == 0 else tp / total


def match_instances(pred: np.ndarray, gt: np.ndarray,
                    thresholds: tuple[float, ...] = THRESHOLDS) -> MatchResult:
    iou, _, _ = iou_matrix(pred, gt)
    n_pred, n_gt = iou.shape
    result = MatchResult(iou=iou, thresholds=tuple(thresholds))
    for tau in thresholds:
        tp = len(greedy_match(iou, tau))
        result.tp.append(tp)
        result.fp.append(n_pred - tp)
        result.fn.append(n_gt - tp)
        result.sa.append(_sa(tp, n_pred - tp, n_gt - tp))
    return result


def segmentation_accuracy(pred: np.ndarray, gt: np.ndarray, tau: float) -> float:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"segmentation_accuracy: tau must lie in (0, 1), got {tau}")
    return match_instances(pred, gt, (tau,)).sa[0]


def mean_segmentation_accuracy(pred: np.ndarray, gt: np.ndarray) -> tuple[float, dict[str, float]]:
    result = match_instances(pred, gt)
    return result.msa, result.per_threshold()


def dataset_msa(preds, gts) -> float:
    """Unweighted mean of per-image mSA; an empty dataset scores 1.0 like an empty image."""
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"dataset_msa: {len(preds)} predictions for {len(gts)} ground-truth images")
    scores = [mean_segmentation_accuracy(p, g)[0] for p, g in zip(preds, gts)]
    return float(np.mean(scores)) if scores else 1.0
