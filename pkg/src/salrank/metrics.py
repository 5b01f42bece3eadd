"""Saliency-ranking evaluation: SA-SOR, SOR, SSOR, MAE and rank-map rendering.

Per-image scores are floats, or ``None`` when the score is undefined for that
image (for example a single ground-truth instance).  :func:`dataset_aggregate`
averages the defined ones and tallies the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import MaskError, as_mask, mask_iou_matrix


@dataclass
class GtInstance:
    mask: np.ndarray
    rank_order: int  # 1 = most salient


@dataclass
class PredInstance:
    mask: np.ndarray
    saliency_score: float
    confidence: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.saliency_score):
            raise ValueError("saliency_score must be finite")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class Matching:
    pairs: list = field(default_factory=list)  # (gt_index, pred_index)
    unmatched_gt: set = field(default_factory=set)
    unmatched_pred: set = field(default_factory=set)

    def pred_for_gt(self) -> dict:
        return {g: p for g, p in self.pairs}


@dataclass(frozen=True)
class MetricConfig:
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")


@dataclass
class Aggregate:
    mean: float
    counted: int
    skipped: int


def _validate_gt_ranks(gts: Sequence[GtInstance]) -> None:
    ranks = sorted(g.rank_order for g in gts)
    if ranks != list(range(1, len(gts) + 1)):
        raise ValueError(f"ground-truth ranks {ranks} are not a permutation of 1..{len(gts)}")


def _check_dims(preds, gts) -> None:
    shapes = {np.shape(x.mask) for x in list(preds) + list(gts)}
    if len(shapes) > 1:
        raise MaskError(f"instances have differing mask dimensions: {sorted(shapes)}")


def pearson(x, y) -> Optional[float]:
    """Pearson correlation; ``None`` if either vector is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def spearman(x, y) -> Optional[float]:
    """Spearman correlation with average ranks for ties."""
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def ascending_ranks(scores) -> np.ndarray:
    """1 for the least salient score; equal scores ordered by index."""
    order = np.argsort(np.asarray(scores, dtype=float), kind="stable")
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def match_instances(preds: Sequence[PredInstance], gts: Sequence[GtInstance],
                    cfg: MetricConfig = MetricConfig()) -> Matching:
    """Greedy one-to-one matching in descending prediction confidence.

    Each prediction takes the still-free ground truth with the highest IoU if
    that IoU reaches ``cfg.iou_threshold``.
    """
    _check_dims(preds, gts)
    iou = mask_iou_matrix([p.mask for p in preds], [g.mask for g in gts])
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    free = np.ones(len(gts), dtype=bool)
    result = Matching(unmatched_gt=set(range(len(gts))), unmatched_pred=set(range(len(preds))))
    for p in order:
        if not free.any():
            break
        row = np.where(free, iou[p], -1.0)
        g = int(np.argmax(row))
        if row[g] >= cfg.iou_threshold:
            free[g] = False
            result.pairs.append((g, p))
            result.unmatched_gt.discard(g)
            result.unmatched_pred.discard(p)
    return result


def sa_sor_image(preds: Sequence[PredInstance], gts: Sequence[GtInstance],
                 cfg: MetricConfig = MetricConfig()) -> Optional[float]:
    """Segmentation-aware SOR for one image.

    Predictions are ranked among *all* predictions, so false positives occupy
    rank slots; missed ground truths get predicted rank 0.
    """
    if len(gts) == 0:
        raise ValueError("SA-SOR needs at least one ground-truth instance")
    _validate_gt_ranks(gts)
    n = len(gts)
    gt_asc = np.array([n - g.rank_order + 1 for g in gts], dtype=float)
    if n < 2:
        return None
    pred_asc = ascending_ranks([p.saliency_score for p in preds]) if preds else []
    matched = match_instances(preds, gts, cfg).pred_for_gt()
    p = np.array([pred_asc[matched[i]] if i in matched else 0 for i in range(n)], dtype=float)
    r = pearson(p, gt_asc)
    return 0.0 if r is None else r


def _region_mean(values: np.ndarray) -> float:
    # Exact for constant regions, so equally shaded instances tie.
    if values.min() == values.max():
        return float(values[0])
    return math.fsum(values.tolist()) / values.size


def _region_means(sal_map: np.ndarray, masks) -> np.ndarray:
    return np.array([_region_mean(sal_map[as_mask(m)]) for m in masks])


def sor_pixelwise_image(sal_map, gts: Sequence[GtInstance]) -> Optional[float]:
    """Spearman between per-GT mean map saliency and GT rank, mapped to [0, 1]."""
    if len(gts) < 2:
        return None
    _validate_gt_ranks(gts)
    sal_map = np.asarray(sal_map, dtype=float)
    for g in gts:
        if np.shape(g.mask) != sal_map.shape:
            raise MaskError(f"map shape {sal_map.shape} != mask shape {np.shape(g.mask)}")
    scores = _region_means(sal_map, [g.mask for g in gts])
    rho = spearman(scores, [-g.rank_order for g in gts])
    if rho is None:
        return None
    return (rho + 1.0) / 2.0


def ssor_match(preds: Sequence[PredInstance], gts: Sequence[GtInstance]) -> dict:
    """GT index -> prediction with the largest intersection area (not one-to-one)."""
    _check_dims(preds, gts)
    out = {}
    if not preds:
        return out
    pm = np.stack([as_mask(p.mask).ravel() for p in preds]).astype(np.int64)
    for gi, g in enumerate(gts):
        inter = pm @ as_mask(g.mask).ravel().astype(np.int64)
        best = int(np.argmax(inter))
        if inter[best] > 0:
            out[gi] = best
    return out


def ssor_image(preds: Sequence[PredInstance], gts: Sequence[GtInstance]) -> Optional[float]:
    _validate_gt_ranks(gts)
    matched = ssor_match(preds, gts)
    if len(matched) < 2:
        return None
    idx = sorted(matched)
    scores = [preds[matched[i]].saliency_score for i in idx]
    rho = spearman(scores, [-gts[i].rank_order for i in idx])
    if rho is None:
        return None
    return (rho + 1.0) / 2.0


def mae_image(pred_map, gt_map) -> float:
    pred_map = np.asarray(pred_map, dtype=float)
    gt_map = np.asarray(gt_map, dtype=float)
    if pred_map.shape != gt_map.shape:
        raise MaskError(f"map shapes differ: {pred_map.shape} vs {gt_map.shape}")
    return float(np.abs(pred_map - gt_map).mean())


def dataset_aggregate(per_image: Sequence[Optional[float]]) -> Aggregate:
    defined = [float(v) for v in per_image if v is not None]
    if not defined:
        raise ValueError("no defined per-image scores to aggregate")
    return Aggregate(mean=math.fsum(defined) / len(defined), counted=len(defined),
                     skipped=len(per_image) - len(defined))


def rank_value(position: int, n: int) -> int:
    """Gray level of the instance at descending rank ``position`` among ``n``."""
    return int(math.floor(255.0 * (n - position + 1) / n + 0.5))


def render_rank_map(masks: Sequence, rank_orders: Sequence[int], shape) -> np.ndarray:
    """Paint masks with gray levels evenly dividing [0, 255] by rank.

    ``rank_orders`` use the descending convention (1 = most salient).  More
    salient instances are painted last so they win on overlap.
    """
    out = np.zeros(shape, dtype=np.uint8)
    n = len(masks)
    for i in sorted(range(n), key=lambda i: -rank_orders[i]):
        out[as_mask(masks[i])] = rank_value(rank_orders[i], n)
    return out


def descending_ranks(scores) -> np.ndarray:
    """1 for the most salient score; ties go to the lower index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks = np.empty(len(scores), dtype=int)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def render_gt_map(gts: Sequence[GtInstance], shape) -> np.ndarray:
    return render_rank_map([g.mask for g in gts], [g.rank_order for g in gts], shape)


def render_pred_map(preds: Sequence[PredInstance], shape) -> np.ndarray:
    ranks = descending_ranks([p.saliency_score for p in preds])
    return render_rank_map([p.mask for p in preds], list(ranks), shape)
