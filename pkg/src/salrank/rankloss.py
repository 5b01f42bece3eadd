"""Pairwise ranking loss with rank-difference pair weights.

For every pair ``(q1, q2)`` with ``r[q1] < r[q2]`` (q1 is the more salient
instance) the loss adds ``beta_q * softplus(s[q2] - s[q1])`` where::

    beta_q = |r[q1] - r[q2]| ** gamma / sum_o |r[o1] - r[o2]| ** gamma

``gamma = 0`` gives uniform weights ``1 / C(N, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def _check_ranks(gt_ranks) -> np.ndarray:
    r = np.asarray(gt_ranks)
    if sorted(r.tolist()) != list(range(1, len(r) + 1)):
        raise ValueError(f"ranks {r.tolist()} are not a permutation of 1..{len(r)}")
    return r


def enumerate_pairs(gt_ranks) -> list:
    """All C(N, 2) pairs, each ordered (more salient, less salient)."""
    r = _check_ranks(gt_ranks)
    pairs = []
    for i in range(len(r)):
        for j in range(i + 1, len(r)):
            pairs.append((i, j) if r[i] < r[j] else (j, i))
    return pairs


def _pair_arrays(gt_ranks):
    pairs = enumerate_pairs(gt_ranks)
    if not pairs:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    q = np.array(pairs)
    return q[:, 0], q[:, 1]


def pair_weights(gt_ranks, cfg: LossConfig = LossConfig()) -> np.ndarray:
    r = np.asarray(gt_ranks)
    q1, q2 = _pair_arrays(r)
    if q1.size == 0:
        raise ValueError("pair weights need at least two instances")
    w = np.abs(r[q1] - r[q2]).astype(float) ** cfg.gamma
    return w / w.sum()


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def ranking_loss(scores, gt_ranks, cfg: LossConfig = LossConfig()):
    """Weighted pairwise logistic loss.

    ``scores`` may carry leading batch axes, ``(..., N)``; the result then has
    shape ``(...)``.
    """
    s = np.asarray(scores, dtype=float)
    r = np.asarray(gt_ranks)
    if s.shape[-1] != len(r):
        raise ValueError(f"{s.shape[-1]} scores for {len(r)} ranks")
    if len(r) < 2:
        raise ValueError("the ranking loss needs at least two instances")
    q1, q2 = _pair_arrays(r)
    beta = pair_weights(r, cfg)
    return softplus(s[..., q2] - s[..., q1]) @ beta


def ranking_loss_grad(scores, gt_ranks, cfg: LossConfig = LossConfig()) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    r = np.asarray(gt_ranks)
    if len(r) < 2:
        raise ValueError("the ranking loss needs at least two instances")
    q1, q2 = _pair_arrays(r)
    coef = pair_weights(r, cfg) * sigmoid(s[q2] - s[q1])
    grad = np.zeros(len(s))
    np.add.at(grad, q2, coef)
    np.add.at(grad, q1, -coef)
    return grad
