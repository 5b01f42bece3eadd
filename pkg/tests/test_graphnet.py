import numpy as np
import pytest

from salrank import gradcheck
from salrank.graphnet import (GRAPHS, FeatureBundle, GraphError, GraphParams, aggregate, backward,
                              forward, global_aggregate, local_aggregate, person_aggregate,
                              pool_global_grid, relation_aggregate)


def relu(x):
    return x if x > 0 else 0.0


def dense_oracle(bundle, params):
    """Scores by explicit loops over subgraphs, instances and context nodes."""
    t = params.tensors
    f, fl, fg, fp = bundle.f, bundle.f_local, bundle.f_global, bundle.f_person
    N, D = f.shape
    G = fg.shape[0]
    K, C = params.K, params.C
    fu = f.copy()
    for k in range(K):
        u = np.zeros((N, C))
        for i in range(N):
            for x in ("r", "l", "g"):
                if x not in params.graphs:
                    continue
                U, V, Wa, Wu = t[f"U_{x}"][k], t[f"V_{x}"][k], t[f"Wa_{x}"][k], t[f"Wu_{x}"][k]
                w1, w2 = t[f"w_alpha_{x}"][k][:C], t[f"w_alpha_{x}"][k][C:]
                ctx = {"r": list(f), "l": [fl[i]], "g": list(fg)}[x]
                norm = {"r": N, "l": 1, "g": G}[x]
                h = np.zeros(C)
                for c in ctx:
                    alpha = relu(float(w1 @ (U @ f[i]) + w2 @ (V @ c))) / norm
                    h += alpha * (Wa @ c)
                u[i] += Wu @ h
            if "p" in params.graphs:
                u[i] += t["alpha_p"][k] * (t["Wa_p"][k] @ fp[i])
        fu[:, k * C:(k + 1) * C] += u
    return fu, np.array([t["w_s"] @ fu[i] + t["b_s"] for i in range(N)])


def random_bundle(rng, N, D, M):
    return FeatureBundle(rng.normal(size=(N, D)), rng.normal(size=(N, D)),
                         rng.normal(size=(M * M, D)), rng.normal(size=(N, D)))


def random_params(rng, D, K, graphs=GRAPHS):
    p = GraphParams.init(D, K, graphs, rng)
    if "p" in graphs:
        p.tensors["alpha_p"] = rng.uniform(0.5, 1.5, size=K)
    p.tensors["b_s"] = np.asarray(rng.normal())
    return p


def test_forward_matches_dense_oracle():
    rng = np.random.default_rng(0)
    bundle = random_bundle(rng, 3, 8, 2)
    params = random_params(rng, 8, 2)
    out = forward(bundle, params)
    fu, s = dense_oracle(bundle, params)
    assert np.abs(out.f_updated - fu).max() < 1e-12
    assert np.abs(out.scores - s).max() < 1e-12


@pytest.mark.parametrize("graphs", [(), ("r",), ("r", "l"), ("r", "l", "g"), ("l", "p"), GRAPHS])
@pytest.mark.parametrize("K", [1, 2, 4])
def test_forward_oracle_subsets(graphs, K):
    rng = np.random.default_rng(K)
    bundle = random_bundle(rng, 4, 16, 3)
    params = random_params(rng, 16, K, graphs)
    assert np.abs(forward(bundle, params).scores - dense_oracle(bundle, params)[1]).max() < 1e-12


def _one_graph(D, graphs=("r",)):
    return GraphParams(D, 1, graphs)


def test_relation_hand_case():
    bundle = FeatureBundle(np.eye(2), np.zeros((2, 2)), np.zeros((1, 2)), np.zeros((2, 2)))
    p = _one_graph(2)
    p.tensors["U_r"][0] = np.eye(2)
    p.tensors["V_r"][0] = np.eye(2)
    p.tensors["w_alpha_r"][0] = [1, 1, 1, 1]      # every pre-activation = 2, /N -> 1
    p.tensors["Wa_r"][0] = [[1, 2], [3, 4]]
    assert np.array_equal(relation_aggregate(bundle, p, 0), [[3, 7], [3, 7]])


def test_relation_single_node_and_relu_kill():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(1, 4))
    bundle = FeatureBundle(f, f, f, f)
    p = random_params(rng, 4, 1, ("r",))
    t = {k: v[0] for k, v in p.tensors.items() if v.ndim}
    z = t["w_alpha_r"][:4] @ (t["U_r"] @ f[0]) + t["w_alpha_r"][4:] @ (t["V_r"] @ f[0])
    want = max(z, 0.0) * (t["Wa_r"] @ f[0])
    assert np.allclose(relation_aggregate(bundle, p, 0)[0], want, atol=1e-14)

    pos = np.abs(rng.normal(size=(3, 4)))
    bundle = FeatureBundle(pos, pos, pos[:1], pos)
    p.tensors["U_r"][0] = np.eye(4)
    p.tensors["V_r"][0] = np.eye(4)
    p.tensors["w_alpha_r"][0] = -1.0
    assert not relation_aggregate(bundle, p, 0).any()


def test_local_zero_context_and_negative_attention():
    rng = np.random.default_rng(2)
    f = rng.normal(size=(3, 4))
    p = random_params(rng, 4, 2, ("l",))
    assert not local_aggregate(FeatureBundle(f, np.zeros_like(f), f[:1], f), p, 1).any()
    pos = np.abs(f)
    p.tensors["U_l"][:] = np.eye(2, 4)
    p.tensors["V_l"][:] = np.eye(2, 4)
    p.tensors["w_alpha_l"][:] = -1.0
    assert not local_aggregate(FeatureBundle(pos, pos, pos[:1], pos), p, 0).any()


def test_local_hand_case():
    f = np.array([[1.0, 2.0]])
    fl = np.array([[0.5, -1.0]])
    p = _one_graph(2, ("l",))
    p.tensors["U_l"][0] = [[1, 0], [0, 1]]
    p.tensors["V_l"][0] = [[2, 0], [0, 2]]
    p.tensors["w_alpha_l"][0] = [1, 0, 0, -1]      # z = 1 + 2 = 3
    p.tensors["Wa_l"][0] = [[1, 1], [0, 1]]
    assert np.allclose(local_aggregate(FeatureBundle(f, fl, fl, f), p, 0), [[3 * -0.5, 3 * -1.0]])


def test_global_identical_nodes_collapse():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(3, 6))
    c = rng.normal(size=6)
    bundle = FeatureBundle(f, f, np.tile(c, (4, 1)), f)
    p = random_params(rng, 6, 2, ("g",))
    for k in range(2):
        t = {n: v[k] for n, v in p.tensors.items() if v.ndim}
        for i in range(3):
            z = t["w_alpha_g"][:3] @ (t["U_g"] @ f[i]) + t["w_alpha_g"][3:] @ (t["V_g"] @ c)
            want = max(z, 0.0) * (t["Wa_g"] @ c)
            assert np.allclose(global_aggregate(bundle, p, k)[i], want, atol=1e-13)


def test_person_aggregate_cases():
    rng = np.random.default_rng(4)
    b = random_bundle(rng, 3, 8, 1)
    p = random_params(rng, 8, 2, ("p",))
    p.tensors["alpha_p"][:] = 0.0
    assert not person_aggregate(b, p, 0).any()
    p.tensors["alpha_p"][:] = 1.0
    p.tensors["Wa_p"][0] = np.eye(4, 8)
    assert np.array_equal(person_aggregate(b, p, 0), b.f_person[:, :4])


def test_attention_nonnegative():
    rng = np.random.default_rng(5)
    out = aggregate(random_bundle(rng, 5, 16, 3), random_params(rng, 16, 4))
    assert all((a >= 0).all() for a in out.alphas.values())


def test_residual_identity():
    rng = np.random.default_rng(6)
    b = random_bundle(rng, 4, 8, 2)
    p = random_params(rng, 8, 2)
    for x in ("r", "l", "g"):
        p.tensors[f"Wu_{x}"][:] = 0.0
    p.tensors["alpha_p"][:] = 0.0
    out = forward(b, p)
    assert np.array_equal(out.f_updated, b.f)
    assert np.allclose(out.scores, b.f @ p["w_s"] + p["b_s"], atol=1e-14)


def test_permutation_equivariance():
    rng = np.random.default_rng(7)
    for _ in range(200):
        N = int(rng.integers(2, 8))
        b = random_bundle(rng, N, 16, 2)
        p = random_params(rng, 16, 4)
        perm = rng.permutation(N)
        s = forward(b, p).scores
        assert np.abs(forward(b.permuted(perm), p).scores - s[perm]).max() < 1e-10


def test_global_node_order_invariance():
    rng = np.random.default_rng(8)
    b = random_bundle(rng, 3, 8, 3)
    p = random_params(rng, 8, 2)
    shuffled = FeatureBundle(b.f, b.f_local, b.f_global[rng.permutation(9)], b.f_person)
    assert np.abs(forward(shuffled, p).scores - forward(b, p).scores).max() < 1e-12


def test_backward_trivial_cases():
    rng = np.random.default_rng(9)
    b = random_bundle(rng, 4, 8, 2)
    p = random_params(rng, 8, 2)
    grads, fgrads = backward(b, p, np.zeros(4))
    assert all(not g.any() for g in grads.tensors.values())
    assert all(not g.any() for g in fgrads.values())
    g = rng.normal(size=4)
    grads, _ = backward(b, p, g)
    assert grads["b_s"] == pytest.approx(g.sum(), abs=1e-14)


def test_backward_finite_differences():
    for rep in gradcheck.run(seed=3, n_configs=5):
        assert rep.passed(1e-4), rep


def test_gradcheck_redraws_near_kinks():
    rng = np.random.default_rng(10)
    b, p, ranks = gradcheck.random_problem(rng, 5, 16, 4, 3)
    assert gradcheck._min_kink_distance(b, p) > gradcheck.KINK_MARGIN
    assert sorted(ranks) == [1, 2, 3, 4, 5]


def test_pool_global_grid():
    const = np.full((6, 5, 3), 2.5)
    assert np.array_equal(pool_global_grid(const, 2), np.full((4, 3), 2.5))
    rng = np.random.default_rng(11)
    fmap = rng.normal(size=(7, 9, 4))
    assert np.allclose(pool_global_grid(fmap, 1)[0], fmap.mean(axis=(0, 1)))
    grid = np.arange(16, dtype=float).reshape(4, 4, 1)
    # quadrants: {0,1,4,5} {2,3,6,7} {8,9,12,13} {10,11,14,15}
    assert pool_global_grid(grid, 2)[:, 0].tolist() == [2.5, 4.5, 10.5, 12.5]
    with pytest.raises(GraphError):
        pool_global_grid(grid, 5)


def test_bundle_validation():
    with pytest.raises(GraphError):
        FeatureBundle(np.zeros((2, 4)), np.zeros((3, 4)), np.zeros((1, 4)), np.zeros((2, 4)))
    with pytest.raises(GraphError):
        FeatureBundle(np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((3, 4)), np.zeros((2, 4)))
    with pytest.raises(GraphError):
        GraphParams(10, 4, GRAPHS)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    p = random_params(rng, 16, 4)
    path = tmp_path / "ckpt.npz"
    p.save(path, M=3)
    q = GraphParams.load(path)
    assert q.graphs == p.graphs and q.K == 4
    assert all(np.array_equal(p[k], q[k]) for k in p.tensors)
    flat = p.to_flat_dict(M=3)
    assert "U_r_k3" in flat and int(flat["M"]) == 3
