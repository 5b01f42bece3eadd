"""Numpy implementation of the seam kernels (used when the extension is absent)."""
import numpy as np


def cumulative_cost(energy):
    energy = np.ascontiguousarray(energy, dtype=np.float64)
    H, W = energy.shape
    cost = np.empty_like(energy)
    cost[0] = energy[0]
    left = np.empty(W)
    right = np.empty(W)
    for r in range(1, H):
        prev = cost[r - 1]
        left[0] = np.inf
        left[1:] = prev[:-1]
        right[-1] = np.inf
        right[:-1] = prev[1:]
        cost[r] = energy[r] + np.minimum(np.minimum(prev, left), right)
    return cost


def backtrack(cost):
    H, W = cost.shape
    seam = np.empty(H, dtype=np.intp)
    seam[-1] = int(np.argmin(cost[-1]))
    for r in range(H - 2, -1, -1):
        c = seam[r + 1]
        lo = max(c - 1, 0)
        seam[r] = lo + int(np.argmin(cost[r, lo:min(c + 2, W)]))
    return seam


def remove_seam(image, seam):
    arr = np.asarray(image, dtype=np.float64)
    H, W = arr.shape[:2]
    keep = np.ones((H, W), dtype=bool)
    keep[np.arange(H), seam] = False
    return arr[keep].reshape((H, W - 1) + arr.shape[2:])
