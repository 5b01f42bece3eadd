"""Mask and box primitives.

Binary masks are plain 2-D numpy boolean arrays of shape ``(height, width)``.
Boxes are half-open: ``[x0, x1) x [y0, y1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MaskError(ValueError):
    """Raised for malformed masks, RLE payloads or mismatched dimensions."""


@dataclass(frozen=True)
class Bbox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise MaskError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def contains(self, other: "Bbox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)


@dataclass(frozen=True)
class RleMask:
    """Row-major run-length encoding; the first run counts background pixels."""

    width: int
    height: int
    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise MaskError("RLE counts must be non-negative")
        if sum(counts) != self.width * self.height:
            raise MaskError(
                f"RLE counts sum to {sum(counts)}, expected "
                f"{self.width}x{self.height}={self.width * self.height}")
        if any(c == 0 for c in counts[1:]):
            raise MaskError("RLE counts contain an interior zero-length run")


def as_mask(m) -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise MaskError(f"mask must be 2-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MaskError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def mask_iou(a, b) -> float:
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def mask_iou_matrix(masks_a: Sequence, masks_b: Sequence) -> np.ndarray:
    """Pairwise IoU, shape ``(len(masks_a), len(masks_b))``."""
    if len(masks_a) == 0 or len(masks_b) == 0:
        return np.zeros((len(masks_a), len(masks_b)))
    a = np.stack([as_mask(m) for m in masks_a]).reshape(len(masks_a), -1)
    b = np.stack([as_mask(m) for m in masks_b]).reshape(len(masks_b), -1)
    if a.shape[1] != b.shape[1]:
        raise MaskError("mask dimensions differ between the two sets")
    a = a.astype(np.int64)
    b = b.astype(np.int64)
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return iou


def rle_encode(m) -> RleMask:
    m = as_mask(m)
    h, w = m.shape
    flat = m.ravel(order="C").astype(np.int8)
    if flat.size == 0:
        return RleMask(w, h, ())
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return RleMask(w, h, tuple(counts))


def rle_decode(r: RleMask) -> np.ndarray:
    if not isinstance(r, RleMask):
        raise MaskError("expected an RleMask")
    values = np.arange(len(r.counts)) % 2 == 1
    flat = np.repeat(values, r.counts)
    return flat.reshape(r.height, r.width)


def bbox_of_mask(m) -> Bbox:
    m = as_mask(m)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        raise MaskError("bounding box of an empty mask is undefined")
    cols = np.flatnonzero(m.any(axis=0))
    return Bbox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def enlarge_bbox(b: Bbox, factor: float, bounds: tuple[int, int]) -> Bbox:
    """Scale ``b`` about its center and clip to ``bounds = (width, height)``.

    Edges round outward (floor for mins, ceil for maxes) before clipping.
    """
    if factor < 1:
        raise MaskError(f"enlargement factor must be >= 1, got {factor}")
    width, height = bounds
    cx = (b.x0 + b.x1) / 2.0
    cy = (b.y0 + b.y1) / 2.0
    hw = b.width * factor / 2.0
    hh = b.height * factor / 2.0
    x0 = max(0, math.floor(cx - hw))
    y0 = max(0, math.floor(cy - hh))
    x1 = min(width, math.ceil(cx + hw))
    y1 = min(height, math.ceil(cy + hh))
    return Bbox(x0, y0, x1, y1)


def box_mask(box: Bbox, shape: tuple[int, int]) -> np.ndarray:
    """Filled mask of ``box`` on an image of ``shape = (height, width)``."""
    m = np.zeros(shape, dtype=bool)
    m[box.y0:box.y1, box.x0:box.x1] = True
    return m
