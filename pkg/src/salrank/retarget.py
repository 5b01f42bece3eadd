"""Seam carving with a saliency-ranking-modulated energy map.

The gradient energy of the image is multiplied by ``rank_map + epsilon``
before each seam search, so seams avoid highly ranked instances and cut
through background (and low-ranked instances) first.  Only vertical seams
(width reduction) are supported.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class SeamError(ValueError):
    pass


@dataclass(frozen=True)
class RetargetConfig:
    epsilon: float = 0.05

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class CarveResult:
    image: np.ndarray
    rank_map: np.ndarray
    source_columns: np.ndarray  # (H, target_width) original column of each kept pixel


def _as_float_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise SeamError(f"expected an (H, W) or (H, W, C) image, got shape {img.shape}")
    return img


def gradient_energy(image) -> np.ndarray:
    """Sum over channels of ``|dI/dx| + |dI/dy|`` (forward differences, replicated border)."""
    img = _as_float_image(image)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise SeamError(f"image of shape {img.shape[:2]} is too small for an energy map")
    if img.ndim == 2:
        img = img[:, :, None]
    dx = np.diff(img, axis=1, append=img[:, -1:])
    dy = np.diff(img, axis=0, append=img[-1:])
    return (np.abs(dx) + np.abs(dy)).sum(axis=2)


def modulate_energy(energy, rank_map, cfg: RetargetConfig = RetargetConfig()) -> np.ndarray:
    energy = np.asarray(energy, dtype=np.float64)
    rank_map = np.asarray(rank_map, dtype=np.float64)
    if energy.shape != rank_map.shape:
        raise SeamError(f"energy {energy.shape} and rank map {rank_map.shape} differ in size")
    return energy * (rank_map + cfg.epsilon)


def find_min_seam(energy) -> np.ndarray:
    """Minimum-energy 8-connected vertical seam; ties go to the leftmost column."""
    energy = np.ascontiguousarray(energy, dtype=np.float64)
    if energy.ndim != 2 or energy.shape[1] < 2:
        raise SeamError(f"need an (H, W>=2) energy map, got {energy.shape}")
    if not np.isfinite(energy).all() or (energy < 0).any():
        raise SeamError("energy must be finite and non-negative")
    return kernels.backtrack(kernels.cumulative_cost(energy))


def seam_cost(energy, seam) -> float:
    energy = np.asarray(energy, dtype=np.float64)
    total = 0.0
    for r, c in enumerate(seam):
        total += energy[r, c]
    return total


def validate_seam(seam, height: int, width: int) -> np.ndarray:
    seam = np.asarray(seam)
    if seam.shape != (height,):
        raise SeamError(f"seam has {seam.shape} entries, image has {height} rows")
    if seam.size and (seam.min() < 0 or seam.max() >= width):
        raise SeamError("seam column out of range")
    if height > 1 and np.abs(np.diff(seam)).max() > 1:
        raise SeamError("seam is not 8-connected")
    return np.ascontiguousarray(seam, dtype=np.intp)


def remove_seam(image, seam) -> np.ndarray:
    img = _as_float_image(image)
    seam = validate_seam(seam, img.shape[0], img.shape[1])
    if img.shape[1] < 2:
        raise SeamError("cannot remove a seam from a 1-pixel-wide image")
    return kernels.remove_seam(img, seam)


def carve_width(image, rank_map, target_width: int,
                cfg: RetargetConfig = RetargetConfig()) -> CarveResult:
    img = _as_float_image(image)
    rmap = np.asarray(rank_map, dtype=np.float64)
    H, W = img.shape[:2]
    if rmap.shape != (H, W):
        raise SeamError(f"rank map {rmap.shape} does not match image {(H, W)}")
    if not 1 <= target_width < W:
        raise SeamError(f"target width {target_width} must be in [1, {W})")
    cols = np.tile(np.arange(W, dtype=np.float64), (H, 1))
    for _ in range(W - target_width):
        seam = find_min_seam(modulate_energy(gradient_energy(img), rmap, cfg))
        img = kernels.remove_seam(img, seam)
        rmap = kernels.remove_seam(rmap, seam)
        cols = kernels.remove_seam(cols, seam)
    return CarveResult(img, rmap, cols.astype(np.intp))


def retarget_width(image, rank_map, target_width: int,
                   cfg: RetargetConfig = RetargetConfig()) -> np.ndarray:
    """Shrink ``image`` to ``target_width`` columns, recomputing energy per seam.

    ``rank_map`` is in [0, 1] (a rendered rank map divided by 255).
    """
    return carve_width(image, rank_map, target_width, cfg).image
