# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled seam-carving dynamic program."""
import numpy as np


def cumulative_cost(double[:, ::1] energy):
    cdef Py_ssize_t H = energy.shape[0], W = energy.shape[1]
    cdef Py_ssize_t r, c
    cdef double m
    out = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] cost = out
    for c in range(W):
        cost[0, c] = energy[0, c]
    for r in range(1, H):
        for c in range(W):
            m = cost[r - 1, c]
            if c > 0 and cost[r - 1, c - 1] < m:
                m = cost[r - 1, c - 1]
            if c + 1 < W and cost[r - 1, c + 1] < m:
                m = cost[r - 1, c + 1]
            cost[r, c] = energy[r, c] + m
    return out


def backtrack(double[:, ::1] cost):
    cdef Py_ssize_t H = cost.shape[0], W = cost.shape[1]
    cdef Py_ssize_t r, c, best, lo, hi
    seam_arr = np.empty(H, dtype=np.intp)
    cdef Py_ssize_t[::1] seam = seam_arr
    best = 0
    for c in range(1, W):
        if cost[H - 1, c] < cost[H - 1, best]:
            best = c
    seam[H - 1] = best
    for r in range(H - 2, -1, -1):
        c = seam[r + 1]
        lo = c - 1 if c > 0 else 0
        hi = c + 1 if c + 1 < W else W - 1
        best = lo
        for c in range(lo + 1, hi + 1):
            if cost[r, c] < cost[r, best]:
                best = c
        seam[r] = best
    return seam_arr


def remove_seam(image, Py_ssize_t[::1] seam):
    """Drop one pixel per row; ``image`` is (H, W) or (H, W, C) float64."""
    arr = np.ascontiguousarray(image, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    cdef double[:, :, ::1] src = arr
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], C = src.shape[2]
    out_arr = np.empty((H, W - 1, C), dtype=np.float64)
    cdef double[:, :, ::1] dst = out_arr
    cdef Py_ssize_t r, c, k, s
    for r in range(H):
        s = seam[r]
        for c in range(s):
            for k in range(C):
                dst[r, c, k] = src[r, c, k]
        for c in range(s + 1, W):
            for k in range(C):
                dst[r, c - 1, k] = src[r, c, k]
    return out_arr[:, :, 0] if squeeze else out_arr
