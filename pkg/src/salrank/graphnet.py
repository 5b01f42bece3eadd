"""Four-graph attention reasoning over salient instances.

Instance nodes receive messages from

* every instance, itself included (interaction relation graph, ``r``),
* their own enlarged-box context feature (local contrast graph, ``l``),
* an M x M grid of pooled scene features (global contrast graph, ``g``),
* a person-classification feature, statically weighted (person prior, ``p``).

The graph is replicated into ``K`` subgraphs of width ``C = D / K`` whose
update signals are concatenated and added to the instance features
(residual), after which a linear head regresses one saliency score per
instance.

Parameters live in :class:`GraphParams` as stacked arrays with a leading
subgraph axis::

    U_X, V_X, Wa_X : (K, C, D)      X in {r, l, g}
    w_alpha_X      : (K, 2C)
    Wu_X           : (K, C, C)
    Wa_p           : (K, C, D)
    alpha_p        : (K,)
    w_s            : (D,)
    b_s            : ()

:func:`forward` also accepts arrays with extra *leading* batch axes on any
parameter or feature; the finite-difference checker relies on this.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

GRAPHS = ("r", "l", "g", "p")
ATTENTION_GRAPHS = ("r", "l", "g")

# Model ladder used by the trainer; names follow the ablation table rows.
MODEL_GRAPHS = {
    "no-graph": (),
    "relation-only": ("r",),
    "relation+local": ("r", "l"),
    "relation+local+global": ("r", "l", "g"),
    "full-graphs": ("r", "l", "g", "p"),
}


class GraphError(ValueError):
    pass


@dataclass
class FeatureBundle:
    f: np.ndarray         # (N, D) instance features
    f_local: np.ndarray   # (N, D) enlarged-box context features
    f_global: np.ndarray  # (M*M, D) pooled scene grid, row-major
    f_person: np.ndarray  # (N, D) person-classifier features

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.f_local = np.asarray(self.f_local, dtype=float)
        self.f_global = np.asarray(self.f_global, dtype=float)
        self.f_person = np.asarray(self.f_person, dtype=float)
        n, d = self.f.shape
        if n < 1:
            raise GraphError("a bundle needs at least one instance")
        for name in ("f_local", "f_person"):
            if getattr(self, name).shape != (n, d):
                raise GraphError(f"{name} has shape {getattr(self, name).shape}, expected {(n, d)}")
        g, dg = self.f_global.shape
        if dg != d:
            raise GraphError(f"f_global feature width {dg} != {d}")
        m = int(round(np.sqrt(g)))
        if g < 1 or m * m != g:
            raise GraphError(f"f_global has {g} rows, not a square grid")
        for name in ("f", "f_local", "f_global", "f_person"):
            if not np.isfinite(getattr(self, name)).all():
                raise GraphError(f"{name} contains non-finite values")

    @property
    def N(self) -> int:
        return self.f.shape[0]

    @property
    def D(self) -> int:
        return self.f.shape[1]

    @property
    def M(self) -> int:
        return int(round(np.sqrt(self.f_global.shape[0])))

    def permuted(self, perm) -> "FeatureBundle":
        perm = np.asarray(perm)
        return FeatureBundle(self.f[perm], self.f_local[perm], self.f_global, self.f_person[perm])

    def arrays(self) -> dict:
        return {"f": self.f, "f_local": self.f_local,
                "f_global": self.f_global, "f_person": self.f_person}


def _tensor_shapes(D: int, K: int, graphs: Iterable[str]) -> dict:
    C = D // K
    shapes = {}
    for x in ATTENTION_GRAPHS:
        if x in graphs:
            shapes[f"U_{x}"] = (K, C, D)
            shapes[f"V_{x}"] = (K, C, D)
            shapes[f"w_alpha_{x}"] = (K, 2 * C)
            shapes[f"Wa_{x}"] = (K, C, D)
            shapes[f"Wu_{x}"] = (K, C, C)
    if "p" in graphs:
        shapes["Wa_p"] = (K, C, D)
        shapes["alpha_p"] = (K,)
    shapes["w_s"] = (D,)
    shapes["b_s"] = ()
    return shapes


@dataclass
class GraphParams:
    D: int
    K: int
    graphs: tuple
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1 or self.D % self.K:
            raise GraphError(f"feature dimension {self.D} is not divisible by K={self.K}")
        unknown = set(self.graphs) - set(GRAPHS)
        if unknown:
            raise GraphError(f"unknown graphs {sorted(unknown)}")
        self.graphs = tuple(g for g in GRAPHS if g in self.graphs)
        expected = _tensor_shapes(self.D, self.K, self.graphs)
        if not self.tensors:
            self.tensors = {k: np.zeros(s) for k, s in expected.items()}
        if set(self.tensors) != set(expected):
            raise GraphError(f"tensor names {sorted(self.tensors)} do not match {sorted(expected)}")
        for k, s in expected.items():
            arr = np.asarray(self.tensors[k], dtype=float)
            if arr.shape != s:
                raise GraphError(f"{k} has shape {arr.shape}, expected {s}")
            self.tensors[k] = arr

    @property
    def C(self) -> int:
        return self.D // self.K

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "GraphParams":
        return GraphParams(self.D, self.K, self.graphs, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "GraphParams":
        return GraphParams(self.D, self.K, self.graphs)

    @classmethod
    def init(cls, D: int, K: int, graphs=GRAPHS, rng=None) -> "GraphParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, alpha_p = 1, b_s = 0."""
        rng = np.random.default_rng(rng)
        params = cls(D, K, tuple(graphs))
        for name, shape in _tensor_shapes(D, K, params.graphs).items():
            if name == "alpha_p":
                params.tensors[name] = np.ones(shape)
            elif name == "b_s":
                params.tensors[name] = np.zeros(shape)
            else:
                fan_in = shape[-1]
                bound = 1.0 / np.sqrt(fan_in)
                params.tensors[name] = rng.uniform(-bound, bound, size=shape)
        return params

    # -- checkpoint -----------------------------------------------------

    def to_flat_dict(self, M: Optional[int] = None) -> dict:
        """Per-subgraph named arrays: ``U_r_k0``, ``alpha_p_k3``, ``w_s`` ..."""
        out = {"D": np.array(self.D), "K": np.array(self.K),
               "graphs": np.array("".join(self.graphs))}
        if M is not None:
            out["M"] = np.array(M)
        for name, arr in self.tensors.items():
            if name in ("w_s", "b_s"):
                out[name] = arr
            else:
                for k in range(self.K):
                    out[f"{name}_k{k}"] = arr[k]
        return out

    @classmethod
    def from_flat_dict(cls, d) -> "GraphParams":
        D, K = int(d["D"]), int(d["K"])
        graphs = tuple(str(d["graphs"]))
        tensors = {}
        for name in _tensor_shapes(D, K, graphs):
            if name in ("w_s", "b_s"):
                tensors[name] = np.asarray(d[name], dtype=float)
            else:
                tensors[name] = np.stack([np.asarray(d[f"{name}_k{k}"], dtype=float)
                                          for k in range(K)])
        return cls(D, K, graphs, tensors)

    def save(self, path, M: Optional[int] = None) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, **self.to_flat_dict(M))

    @classmethod
    def load(cls, path) -> "GraphParams":
        with np.load(path, allow_pickle=False) as data:
            return cls.from_flat_dict({k: data[k] for k in data.files})


@dataclass
class AggregateOutputs:
    h: dict       # graph id -> (K, N, C) messages
    alphas: dict  # graph id -> attention weights, (K, N, N) / (K, N) / (K, N, M*M)


@dataclass
class ModuleOutput:
    f_updated: np.ndarray  # (N, D)
    scores: np.ndarray     # (N,)


def _T(x):
    return np.swapaxes(x, -1, -2)


def _relu(x):
    return np.maximum(x, 0.0)


def _proj(x, W):
    # x (..., N, D), W (..., K, C, D) -> (..., K, N, C)
    return x[..., None, :, :] @ _T(W)


def _dot_last(x, w):
    # x (..., K, N, C), w (..., K, C) -> (..., K, N)
    return (x @ w[..., :, None])[..., 0]


def _split_alpha(w_alpha):
    C = w_alpha.shape[-1] // 2
    return w_alpha[..., :C], w_alpha[..., C:]


def _check(bundle: FeatureBundle, params: GraphParams) -> None:
    if bundle.D != params.D:
        raise GraphError(f"bundle feature width {bundle.D} != parameter width {params.D}")


def _pairwise_graph(f, ctx, U, V, w_alpha, Wa, norm):
    """Shared by the relation graph (ctx = f) and the global graph (ctx = grid)."""
    wa1, wa2 = _split_alpha(w_alpha)
    a = _proj(f, U)
    b = _proj(ctx, V)
    z = _dot_last(a, wa1)[..., :, None] + _dot_last(b, wa2)[..., None, :]
    A = _relu(z) / norm
    m = _proj(ctx, Wa)
    return A @ m, {"a": a, "b": b, "z": z, "A": A, "m": m}


def _local_graph(f, fl, U, V, w_alpha, Wa):
    wa1, wa2 = _split_alpha(w_alpha)
    a = _proj(f, U)
    b = _proj(fl, V)
    z = _dot_last(a, wa1) + _dot_last(b, wa2)
    alpha = _relu(z)
    m = _proj(fl, Wa)
    return alpha[..., None] * m, {"a": a, "b": b, "z": z, "A": alpha, "m": m}


def _aggregate(t, f, fl, fg, fp, graphs):
    h, cache = {}, {}
    if "r" in graphs:
        n = f.shape[-2]
        h["r"], cache["r"] = _pairwise_graph(f, f, t["U_r"], t["V_r"], t["w_alpha_r"], t["Wa_r"], n)
    if "l" in graphs:
        h["l"], cache["l"] = _local_graph(f, fl, t["U_l"], t["V_l"], t["w_alpha_l"], t["Wa_l"])
    if "g" in graphs:
        G = fg.shape[-2]
        h["g"], cache["g"] = _pairwise_graph(f, fg, t["U_g"], t["V_g"], t["w_alpha_g"], t["Wa_g"], G)
    if "p" in graphs:
        m = _proj(fp, t["Wa_p"])
        h["p"] = t["alpha_p"][..., :, None, None] * m
        cache["p"] = {"m": m}
    return h, cache


def _forward_arrays(t, f, fl, fg, fp, graphs):
    h, cache = _aggregate(t, f, fl, fg, fp, graphs)
    u = None
    for x in ATTENTION_GRAPHS:
        if x in h:
            term = h[x] @ _T(t[f"Wu_{x}"])
            u = term if u is None else u + term
    if "p" in h:
        u = h["p"] if u is None else u + h["p"]
    if u is None:
        fu = f
    else:
        K, N, C = u.shape[-3:]
        u_cat = np.swapaxes(u, -3, -2).reshape(u.shape[:-3] + (N, K * C))
        fu = f + u_cat
    s = (fu @ t["w_s"][..., :, None])[..., 0] + np.asarray(t["b_s"])[..., None]
    return fu, s, h, cache


def forward(bundle: FeatureBundle, params: GraphParams, return_cache: bool = False):
    """Updated features and saliency scores for one image."""
    _check(bundle, params)
    fu, s, h, cache = _forward_arrays(params.tensors, bundle.f, bundle.f_local,
                                      bundle.f_global, bundle.f_person, params.graphs)
    out = ModuleOutput(fu, s)
    if return_cache:
        return out, {"h": h, "graph": cache, "fu": fu}
    return out


def forward_batched(arrays: dict, graphs) -> np.ndarray:
    """Scores from raw arrays that may carry leading batch axes.

    ``arrays`` holds every parameter tensor plus ``f``, ``f_local``,
    ``f_global`` and ``f_person``.
    """
    _, s, _, _ = _forward_arrays(arrays, arrays["f"], arrays["f_local"],
                                 arrays["f_global"], arrays["f_person"], graphs)
    return s


def aggregate(bundle: FeatureBundle, params: GraphParams) -> AggregateOutputs:
    _check(bundle, params)
    h, cache = _aggregate(params.tensors, bundle.f, bundle.f_local,
                          bundle.f_global, bundle.f_person, params.graphs)
    return AggregateOutputs(h=h, alphas={x: c["A"] for x, c in cache.items() if "A" in c})


def _single(bundle, params, graph, k):
    if graph not in params.graphs:
        raise GraphError(f"graph {graph!r} is not enabled in these parameters")
    if not 0 <= k < params.K:
        raise GraphError(f"subgraph index {k} out of range for K={params.K}")
    return aggregate(bundle, params).h[graph][k]


def relation_aggregate(bundle, params, k):
    """Fully connected instance graph with 1/N-scaled ReLU attention."""
    return _single(bundle, params, "r", k)


def local_aggregate(bundle, params, k):
    return _single(bundle, params, "l", k)


def global_aggregate(bundle, params, k):
    return _single(bundle, params, "g", k)


def person_aggregate(bundle, params, k):
    return _single(bundle, params, "p", k)


def _nkc_dot_kcd(x, W):
    # sum over k, c of x[k, n, c] * W[k, c, d]
    return np.einsum("knc,kcd->nd", x, W)


def _pairwise_backward(dh, f, ctx, U, V, w_alpha, Wa, c, norm):
    wa1, wa2 = _split_alpha(w_alpha)
    dA = dh @ _T(c["m"])
    dm = _T(c["A"]) @ dh
    dWa = _T(dm) @ ctx
    dctx = _nkc_dot_kcd(dm, Wa)
    dz = dA * (c["z"] > 0) / norm
    dp = dz.sum(-1)
    dq = dz.sum(-2)
    dwa = np.concatenate([np.einsum("knc,kn->kc", c["a"], dp),
                          np.einsum("knc,kn->kc", c["b"], dq)], axis=-1)
    da = dp[..., None] * wa1[:, None, :]
    db = dq[..., None] * wa2[:, None, :]
    dU = _T(da) @ f
    dV = _T(db) @ ctx
    df = _nkc_dot_kcd(da, U)
    dctx = dctx + _nkc_dot_kcd(db, V)
    return {"U": dU, "V": dV, "w_alpha": dwa, "Wa": dWa}, df, dctx


def _local_backward(dh, f, fl, U, V, w_alpha, Wa, c):
    wa1, wa2 = _split_alpha(w_alpha)
    dalpha = (dh * c["m"]).sum(-1)
    dm = c["A"][..., None] * dh
    dWa = _T(dm) @ fl
    dfl = _nkc_dot_kcd(dm, Wa)
    dz = dalpha * (c["z"] > 0)
    dwa = np.concatenate([np.einsum("knc,kn->kc", c["a"], dz),
                          np.einsum("knc,kn->kc", c["b"], dz)], axis=-1)
    da = dz[..., None] * wa1[:, None, :]
    db = dz[..., None] * wa2[:, None, :]
    dU = _T(da) @ f
    dV = _T(db) @ fl
    df = _nkc_dot_kcd(da, U)
    dfl = dfl + _nkc_dot_kcd(db, V)
    return {"U": dU, "V": dV, "w_alpha": dwa, "Wa": dWa}, df, dfl


def backward(bundle: FeatureBundle, params: GraphParams, grad_scores,
             cache=None, grad_fu=None):
    """Exact gradients of ``sum_i g_i * s_i (+ <grad_fu, f_u>)``.

    Returns ``(param_grads, feature_grads)``: a :class:`GraphParams` holding
    gradients for every tensor, and a dict with ``f``, ``f_local``,
    ``f_global`` and ``f_person`` gradients.  The ReLU derivative at 0 is 0.
    """
    if cache is None:
        _, cache = forward(bundle, params, return_cache=True)
    t = params.tensors
    K, C, N = params.K, params.C, bundle.N
    f, fl, fg, fp = bundle.f, bundle.f_local, bundle.f_global, bundle.f_person
    g = np.asarray(grad_scores, dtype=float)
    fu = cache["fu"]

    grads = params.zeros_like()
    G = grads.tensors
    G["w_s"] = fu.T @ g
    G["b_s"] = np.asarray(g.sum())
    dfu = g[:, None] * t["w_s"][None, :]
    if grad_fu is not None:
        dfu = dfu + grad_fu

    df = dfu.copy()
    dfl = np.zeros_like(fl)
    dfg = np.zeros_like(fg)
    dfp = np.zeros_like(fp)
    du = dfu.reshape(N, K, C).transpose(1, 0, 2)

    h, gc = cache["h"], cache["graph"]
    if "p" in params.graphs:
        m = gc["p"]["m"]
        G["alpha_p"] = (du * m).sum(axis=(1, 2))
        dm = t["alpha_p"][:, None, None] * du
        G["Wa_p"] = _T(dm) @ fp
        dfp += _nkc_dot_kcd(dm, t["Wa_p"])
    for x in ATTENTION_GRAPHS:
        if x not in params.graphs:
            continue
        G[f"Wu_{x}"] = _T(du) @ h[x]
        dh = du @ t[f"Wu_{x}"]
        args = (t[f"U_{x}"], t[f"V_{x}"], t[f"w_alpha_{x}"], t[f"Wa_{x}"], gc[x])
        if x == "r":
            pg, d_f, d_ctx = _pairwise_backward(dh, f, f, *args, N)
            df += d_f + d_ctx
        elif x == "l":
            pg, d_f, d_ctx = _local_backward(dh, f, fl, *args)
            df += d_f
            dfl += d_ctx
        else:
            pg, d_f, d_ctx = _pairwise_backward(dh, f, fg, *args, fg.shape[0])
            df += d_f
            dfg += d_ctx
        for name, val in pg.items():
            G[f"{name}_{x}"] = val
    return grads, {"f": df, "f_local": dfl, "f_global": dfg, "f_person": dfp}


def _cell_edges(size: int, M: int) -> list:
    return [int(np.floor(size * m / M + 0.5)) for m in range(M + 1)]


def pool_global_grid(feature_map, M: int) -> np.ndarray:
    """Non-overlapping M x M average pooling of an (H, W, D) map -> (M*M, D)."""
    fmap = np.asarray(feature_map, dtype=float)
    if fmap.ndim != 3:
        raise GraphError(f"feature map must be (H, W, D), got {fmap.shape}")
    H, W, D = fmap.shape
    if M < 1 or H < M or W < M:
        raise GraphError(f"cannot pool a {H}x{W} map into a {M}x{M} grid")
    ys, xs = _cell_edges(H, M), _cell_edges(W, M)
    out = np.empty((M * M, D))
    for i in range(M):
        for j in range(M):
            out[i * M + j] = fmap[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].mean(axis=(0, 1))
    return out
