"""Central finite-difference check of graph-module + ranking-loss gradients.

Every entry of every parameter tensor and every input feature is perturbed
by ``+-h``; all perturbations of one tensor are evaluated in a single
batched forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphnet import ATTENTION_GRAPHS, GRAPHS, FeatureBundle, GraphParams, backward, forward, forward_batched
from .rankloss import LossConfig, ranking_loss, ranking_loss_grad

GAMMA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)

# Gradients smaller than this are compared in absolute rather than relative terms.
REL_FLOOR = 1e-5
# Configurations with an attention pre-activation closer than this to the ReLU
# kink are redrawn: a central difference straddling the kink is not a derivative.
KINK_MARGIN = 1e-3


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def rel_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def _min_kink_distance(bundle, params) -> float:
    _, cache = forward(bundle, params, return_cache=True)
    d = np.inf
    for x in ATTENTION_GRAPHS:
        if x in cache["graph"]:
            d = min(d, float(np.abs(cache["graph"][x]["z"]).min()))
    return d


def random_problem(rng, N, D, K, M, graphs=GRAPHS):
    """Random bundle, parameters and GT ranks, redrawn until clear of ReLU kinks."""
    while True:
        bundle = FeatureBundle(rng.normal(size=(N, D)), rng.normal(size=(N, D)),
                               rng.normal(size=(M * M, D)), rng.normal(size=(N, D)))
        params = GraphParams.init(D, K, graphs, rng)
        if "p" in params.graphs:
            params.tensors["alpha_p"] = rng.uniform(0.5, 1.5, size=K)
        params.tensors["b_s"] = np.asarray(rng.normal())
        if _min_kink_distance(bundle, params) > KINK_MARGIN:
            return bundle, params, rng.permutation(N) + 1


def numeric_gradient(arrays: dict, name: str, graphs, loss_fn, h: float = 1e-5) -> np.ndarray:
    base = np.asarray(arrays[name], dtype=float)
    size = base.size
    eye = np.eye(size).reshape((size,) + base.shape)
    batch = np.concatenate([base + h * eye, base - h * eye])
    perturbed = dict(arrays)
    perturbed[name] = batch
    losses = loss_fn(forward_batched(perturbed, graphs))
    return ((losses[:size] - losses[size:]) / (2 * h)).reshape(base.shape)


def check_gradients(bundle: FeatureBundle, params: GraphParams, gt_ranks,
                    cfg: LossConfig = LossConfig(), h: float = 1e-5) -> GradCheckReport:
    out, cache = forward(bundle, params, return_cache=True)
    g = ranking_loss_grad(out.scores, gt_ranks, cfg)
    pgrads, fgrads = backward(bundle, params, g, cache)
    arrays = dict(params.tensors)
    arrays.update(bundle.arrays())
    analytic = dict(pgrads.tensors)
    analytic.update(fgrads)

    def loss_fn(scores):
        return ranking_loss(scores, gt_ranks, cfg)

    report = GradCheckReport(0.0, config={"N": bundle.N, "D": bundle.D, "K": params.K,
                                          "M": bundle.M, "gamma": cfg.gamma})
    for name in arrays:
        num = numeric_gradient(arrays, name, params.graphs, loss_fn, h)
        err = float(rel_error(analytic[name], num).max()) if num.size else 0.0
        report.per_tensor[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report


def random_config(rng) -> dict:
    return {"N": int(rng.integers(2, 6)), "D": int(rng.choice([16, 32])),
            "K": int(rng.choice([1, 2, 4])), "M": int(rng.integers(1, 4)),
            "gamma": float(rng.choice(GAMMA_GRID))}


def run(seed: int, n_configs: int = 1) -> list:
    """Check ``n_configs`` random configurations; returns one report each."""
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(n_configs):
        c = random_config(rng)
        bundle, params, ranks = random_problem(rng, c["N"], c["D"], c["K"], c["M"])
        reports.append(check_gradients(bundle, params, ranks, LossConfig(c["gamma"])))
    return reports
