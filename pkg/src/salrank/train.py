"""Synthetic ranking tasks and a small trainer for the graph module.

The synthetic generator plants a latent saliency per instance that depends on
four cues, one per graph:

* ``base``     - a fixed direction of the instance feature,
* ``relation`` - the instance's alignment with the scene's mean instance,
* ``local``    - distance between instance and its local-context feature,
* ``global``   - distance between instance and the mean global-grid feature,
* ``person``   - a bonus when the person flag of the person feature is set.

Ground-truth ranks are the descending order of the latent value, so a model
blind to a cue cannot recover that part of the ordering.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graphnet import MODEL_GRAPHS, FeatureBundle, GraphParams, backward, forward
from .metrics import ascending_ranks, pearson
from .rankloss import LossConfig, ranking_loss, ranking_loss_grad

N_RANK_CLASSES = 8

# Coordinates of the feature vectors with a planted meaning.  Coordinate 0 is
# a constant always-on unit in every feature type.
LOCAL_AXIS = 1
GLOBAL_AXES = (2, 3)
PERSON_AXIS = 1

DEFAULT_WEIGHTS = {"base": 1.0, "relation": 1.0, "local": 1.0, "global": 1.0, "person": 1.0}


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class Sample:
    bundle: FeatureBundle
    gt_ranks: np.ndarray   # 1 = most salient
    latent: np.ndarray


@dataclass
class SyntheticTask:
    seed: int = 0
    n_samples: int = 400
    n_min: int = 2
    n_max: int = 8
    D: int = 32
    M: int = 3
    recipe: str = "four-cue"
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    person_bonus: float = 1.0
    swap_prob: float = 0.0  # annotator confusion: chance each adjacent rank pair is swapped

    def __post_init__(self):
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ValueError("swap_prob must be in [0, 1]")
        if self.recipe != "four-cue":
            raise ValueError(f"unknown recipe {self.recipe!r}")
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        if self.D < 8:
            raise ValueError("the four-cue recipe needs D >= 8")


def _recipe_directions(D: int):
    # Fixed across seeds: the task is defined by these, the seed only draws samples.
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(3, D - 1))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def latent_terms(bundle: FeatureBundle, D: int) -> dict:
    """Unweighted per-instance cue values of the four-cue recipe."""
    w_base, w_rel_a, w_rel_b = _recipe_directions(D)
    x = bundle.f[:, 1:]
    g_mean = bundle.f_global.mean(axis=0)
    return {
        "base": x @ w_base,
        "relation": (x @ w_rel_a) * (x.mean(axis=0) @ w_rel_b),
        "local": np.linalg.norm(bundle.f - bundle.f_local, axis=1),
        "global": np.linalg.norm(bundle.f - g_mean, axis=1),
        "person": bundle.f_person[:, PERSON_AXIS],
    }


# Scales that bring each cue to roughly unit within-image spread.
_TERM_SCALE = {"base": 1.8, "relation": 3.0, "local": 2.4, "global": 4.2, "person": 2.5}


def latent_saliency(bundle: FeatureBundle, task: SyntheticTask) -> np.ndarray:
    terms = latent_terms(bundle, task.D)
    s = np.zeros(bundle.N)
    for name, v in terms.items():
        w = task.weights.get(name, 0.0) * _TERM_SCALE[name]
        if name == "person":
            w *= task.person_bonus
        s = s + w * v
    return s


def descending_rank_order(values) -> np.ndarray:
    order = np.argsort(-np.asarray(values), kind="stable")
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def _draw_bundle(rng, N: int, D: int, M: int) -> FeatureBundle:
    d = D - 1
    scene = rng.normal(size=d)
    x = scene + rng.normal(size=(N, d))
    x *= math.sqrt(d) / np.linalg.norm(x, axis=1, keepdims=True)
    ones = np.ones((N, 1))
    f = np.hstack([ones, x])

    push = np.abs(rng.normal(size=N))
    fl = f + 0.05 * rng.normal(size=(N, D))
    fl[:, 0] = 1.0
    fl[:, LOCAL_AXIS] += push

    g_img = np.zeros(d)
    g_img[[a - 1 for a in GLOBAL_AXES]] = 2.0 * rng.normal(size=len(GLOBAL_AXES))
    fg = np.hstack([np.ones((M * M, 1)), g_img + 0.3 * rng.normal(size=(M * M, d))])

    flag = (rng.random(N) < 0.4).astype(float)
    fp = np.hstack([ones, 0.1 * rng.normal(size=(N, d))])
    fp[:, PERSON_AXIS] = flag
    return FeatureBundle(f, fl, fg, fp)


def confuse_adjacent(ranks, p: float, rng) -> np.ndarray:
    """Walk the ranking top-down, swapping each neighbouring pair with chance ``p``."""
    order = np.argsort(ranks, kind="stable")
    flips = rng.random(max(len(order) - 1, 0)) < p
    for i, flip in enumerate(flips):
        if flip:
            order[i], order[i + 1] = order[i + 1], order[i]
    out = np.empty(len(order), dtype=int)
    out[order] = np.arange(1, len(order) + 1)
    return out


def generate_synthetic(task: SyntheticTask) -> list:
    """Samples whose ranks follow the latent, up to annotator confusion."""
    rng = np.random.default_rng(task.seed)
    samples = []
    for _ in range(task.n_samples):
        N = int(rng.integers(task.n_min, task.n_max + 1))
        bundle = _draw_bundle(rng, N, task.D, task.M)
        latent = latent_saliency(bundle, task)
        while len(np.unique(latent)) < N:
            latent = latent + 1e-9 * rng.normal(size=N)
        ranks = descending_rank_order(latent)
        if task.swap_prob > 0:
            ranks = confuse_adjacent(ranks, task.swap_prob, rng)
        samples.append(Sample(bundle, ranks, latent))
    return samples


# -- optimisation -------------------------------------------------------------

@dataclass
class TrainConfig:
    optimizer: str = "adam"          # "adam" | "sgd"
    lr: float = 3e-3
    steps: int = 2000
    gamma: float = 1.0
    loss: str = "weighted-ranking"   # | "uniform-ranking" | "rank-classification"
    model: str = "full-graphs"
    K: int = 4
    seed: int = 0
    decay_at: tuple = (0.75, 0.9)    # lr /= 10 at these fractions of the run
    eval_every: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("weighted-ranking", "uniform-ranking", "rank-classification"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.model not in MODEL_GRAPHS:
            raise ValueError(f"unknown model {self.model!r}")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(0.0 if self.loss == "uniform-ranking" else self.gamma)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m[k] = b1 * self.m.get(k, 0.0) + (1 - b1) * g
            v = self.v[k] = b2 * self.v.get(k, 0.0) + (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def step(self, params: dict, grads: dict, lr: float) -> None:
        for k, g in grads.items():
            params[k] = params[k] - lr * g


@dataclass
class Model:
    """Graph module plus, for rank classification, an 8-way softmax head."""
    graph: GraphParams
    head: Optional[dict] = None  # {"W_cls": (8, D), "b_cls": (8,)}

    def copy(self) -> "Model":
        head = None if self.head is None else {k: v.copy() for k, v in self.head.items()}
        return Model(self.graph.copy(), head)

    def flat(self) -> dict:
        d = {f"graph.{k}": v for k, v in self.graph.tensors.items()}
        if self.head:
            d.update({f"head.{k}": v for k, v in self.head.items()})
        return d

    def assign(self, flat: dict) -> None:
        for k, v in flat.items():
            group, name = k.split(".", 1)
            (self.graph.tensors if group == "graph" else self.head)[name] = v


def init_model(D: int, cfg: TrainConfig) -> Model:
    rng = np.random.default_rng(cfg.seed)
    graph = GraphParams.init(D, cfg.K, MODEL_GRAPHS[cfg.model], rng)
    head = None
    if cfg.loss == "rank-classification":
        bound = 1.0 / math.sqrt(D)
        head = {"W_cls": rng.uniform(-bound, bound, size=(N_RANK_CLASSES, D)),
                "b_cls": np.zeros(N_RANK_CLASSES)}
    return Model(graph, head)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_scores(model: Model, bundle: FeatureBundle) -> np.ndarray:
    """Saliency scores; for a classification head, minus the expected rank."""
    out = forward(bundle, model.graph)
    if model.head is None:
        return out.scores
    probs = _softmax(out.f_updated @ model.head["W_cls"].T + model.head["b_cls"])
    return -(probs @ np.arange(1, N_RANK_CLASSES + 1))


def loss_and_grads(model: Model, sample: Sample, cfg: TrainConfig):
    out, cache = forward(sample.bundle, model.graph, return_cache=True)
    if model.head is None:
        lcfg = cfg.loss_config
        loss = float(ranking_loss(out.scores, sample.gt_ranks, lcfg))
        g = ranking_loss_grad(out.scores, sample.gt_ranks, lcfg)
        pgrads, _ = backward(sample.bundle, model.graph, g, cache)
        return loss, {f"graph.{k}": v for k, v in pgrads.tensors.items()}
    W, b = model.head["W_cls"], model.head["b_cls"]
    fu = out.f_updated
    probs = _softmax(fu @ W.T + b)
    target = np.clip(sample.gt_ranks - 1, 0, N_RANK_CLASSES - 1)
    n = len(target)
    loss = float(-np.log(probs[np.arange(n), target] + 1e-300).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), target] -= 1.0
    dlogits /= n
    pgrads, _ = backward(sample.bundle, model.graph, np.zeros(n), cache, grad_fu=dlogits @ W)
    grads = {f"graph.{k}": v for k, v in pgrads.tensors.items()}
    grads["head.W_cls"] = dlogits.T @ fu
    grads["head.b_cls"] = dlogits.sum(axis=0)
    return loss, grads


def sample_loss(model: Model, sample: Sample, cfg: TrainConfig) -> float:
    return loss_and_grads(model, sample, cfg)[0]


def mean_loss(model: Model, dataset: Sequence[Sample], cfg: TrainConfig) -> float:
    return math.fsum(sample_loss(model, s, cfg) for s in dataset) / len(dataset)


def lr_at(step: int, cfg: TrainConfig) -> float:
    lr = cfg.lr
    for frac in cfg.decay_at:
        if step >= int(frac * cfg.steps):
            lr /= 10.0
    return lr


@dataclass
class TrainResult:
    model: Model
    losses: list
    log: list  # dict records: {"step", "loss"} plus "eval" every eval_every steps


def train(model: Model, dataset: Sequence[Sample], cfg: TrainConfig,
          eval_set: Optional[Sequence[Sample]] = None) -> TrainResult:
    """One image per step, visiting the dataset in per-epoch shuffled order."""
    model = model.copy()
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(cfg.lr) if cfg.optimizer == "adam" else SGD()
    losses, log = [], []
    order = np.array([], dtype=int)
    flat = model.flat()
    for step in range(cfg.steps):
        if order.size == 0:
            order = rng.permutation(len(dataset))
        idx, order = order[0], order[1:]
        model.assign(flat)
        loss, grads = loss_and_grads(model, dataset[idx], cfg)
        if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise TrainingDiverged(step)
        opt.step(flat, grads, lr_at(step, cfg))
        losses.append(loss)
        rec = {"step": step, "loss": loss}
        if cfg.eval_every and eval_set is not None and (step + 1) % cfg.eval_every == 0:
            model.assign(flat)
            rec["eval"] = evaluate_ranking(model, eval_set)
        log.append(rec)
    model.assign(flat)
    return TrainResult(model, losses, log)


def rank_correlation(scores, gt_ranks) -> float:
    """Pearson between ascending predicted ranks and ascending GT ranks."""
    n = len(gt_ranks)
    r = pearson(ascending_ranks(scores), n - np.asarray(gt_ranks) + 1)
    return 0.0 if r is None else r


def evaluate_ranking(model, dataset: Sequence[Sample], threads: int = 1) -> float:
    """Mean rank correlation over samples (every instance counts as matched)."""
    if isinstance(model, GraphParams):
        model = Model(model)

    def one(sample):
        return rank_correlation(predict_scores(model, sample.bundle), sample.gt_ranks)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            vals = list(ex.map(one, dataset))
    else:
        vals = [one(s) for s in dataset]
    return math.fsum(vals) / len(vals)


@dataclass(frozen=True)
class Protocol:
    """Fixed comparison setup for ablations: noisy training labels, clean test labels."""
    n_train: int = 1000
    n_test: int = 1000
    swap_prob: float = 0.5
    steps: int = 2000
    lr: float = 3e-3
    train_seed_offset: int = 100
    test_seed: int = 999

    def test_set(self) -> list:
        return generate_synthetic(SyntheticTask(seed=self.test_seed, n_samples=self.n_test))

    def train_set(self, seed: int) -> list:
        return generate_synthetic(SyntheticTask(seed=self.train_seed_offset + seed,
                                                n_samples=self.n_train, swap_prob=self.swap_prob))


def protocol_score(protocol: Protocol, seed: int, test_set=None, **overrides) -> float:
    """Train one model under ``protocol`` and return its held-out rank correlation."""
    cfg = TrainConfig(steps=protocol.steps, lr=protocol.lr, seed=seed, **overrides)
    test_set = protocol.test_set() if test_set is None else test_set
    data = protocol.train_set(seed)
    result = train(init_model(data[0].bundle.D, cfg), data, cfg)
    return evaluate_ranking(result.model, test_set)


def write_log(path, log: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
