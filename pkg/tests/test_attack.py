"""Gradient-guided perturbations: ranking, budgets, masks, effectiveness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcontrast.attack import (PerturbationBudget, adversarial_feature_mask,
                              compute_gradients, flip_feature_perturb,
                              generate_adversarial_view,
                              ranked_structural_candidates, structural_perturb)
from gcontrast.graph import adjacency_from_edges, random_attack
from gcontrast.loss import pairwise_loss_value
from gcontrast.model import encode_graph, init_params
from gcontrast.train import TrainConfig

from conftest import make_clustered_graph


def test_budget_realized_is_ceil():
    b = PerturbationBudget(0.3, 0.1)
    assert b.realized(10, 55) == (3, 6)
    assert b.realized(0, 0) == (0, 0)
    assert PerturbationBudget(0.0, 0.0).realized(100, 100) == (0, 0)


def test_budget_validation():
    with pytest.raises(ValueError):
        PerturbationBudget(-0.1, 0.0)
    with pytest.raises(ValueError):
        PerturbationBudget(0.0, 1.5)


def ranked_oracle(G, A):
    """All legal single flips sorted by descending score, ties by (i, j)."""
    n = G.shape[0]
    rows = []
    for i in range(n):
        for j in range(i + 1, n):
            if A[i, j] == 0 and G[i, j] > 0:
                rows.append((G[i, j], i, j, True))
            elif A[i, j] == 1 and G[i, j] < 0:
                rows.append((-G[i, j], i, j, False))
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    return rows


def test_ranked_candidates_match_bruteforce():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = 12
        a = np.triu((rng.random((n, n)) < 0.3).astype(float), 1)
        a = a + a.T
        g = rng.standard_normal((n, n))
        g = (g + g.T) / 2
        np.fill_diagonal(g, 0.0)
        import scipy.sparse as sp
        pairs, scores, is_add = ranked_structural_candidates(g, sp.csr_matrix(a))
        want = ranked_oracle(g, a)
        assert len(pairs) == len(want)
        for got_pair, got_score, got_add, (score, i, j, add) in zip(
                pairs, scores, is_add, want):
            assert tuple(got_pair) == (i, j)
            assert got_score == pytest.approx(score)
            assert bool(got_add) == add


def test_ranked_candidates_tie_break_lexicographic():
    import scipy.sparse as sp
    n = 5
    g = np.zeros((n, n))
    # three non-edges share the same positive score
    for i, j in ((0, 4), (0, 2), (1, 3)):
        g[i, j] = g[j, i] = 0.7
    pairs, _, _ = ranked_structural_candidates(g, sp.csr_matrix((n, n)))
    assert [tuple(p) for p in pairs] == [(0, 2), (0, 4), (1, 3)]


def test_structural_perturb_flips_and_symmetry():
    import scipy.sparse as sp
    rng = np.random.default_rng(3)
    n = 15
    a = np.triu((rng.random((n, n)) < 0.3).astype(float), 1)
    a = a + a.T
    g = rng.standard_normal((n, n))
    g = (g + g.T) / 2
    np.fill_diagonal(g, 0.0)
    adj = sp.csr_matrix(a)
    pairs, _, is_add = ranked_structural_candidates(g, adj)

    count = 5
    out = structural_perturb(g, adj, count).toarray()
    assert np.array_equal(out, out.T)
    assert not out.diagonal().any()
    flipped = np.argwhere(np.triu(out != a, 1))
    assert len(flipped) == min(count, len(pairs))
    for (i, j), add in zip(pairs[:count], is_add[:count]):
        assert out[i, j] == (1.0 if add else 0.0)


def test_structural_perturb_zero_count_copies():
    import scipy.sparse as sp
    a = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    g = np.array([[0.0, -0.5], [-0.5, 0.0]])
    out = structural_perturb(g, a, 0)
    assert np.array_equal(out.toarray(), a.toarray())
    with pytest.raises(ValueError):
        structural_perturb(g, a, -1)


def test_feature_mask_zeroes_most_negative():
    X = np.array([[1.0, 1.0, 0.0],
                  [0.0, 1.0, 1.0]])
    G = np.array([[-3.0, 0.5, -9.0],
                  [-1.0, -2.0, 4.0]])
    # eligible (X>0, G<0): (0,0)=-3, (1,1)=-2, (1,0) ineligible (X=0),
    # (0,2) ineligible (X=0); most negative first
    M = adversarial_feature_mask(G, X, 1)
    assert M[0, 0] == 0.0 and M.sum() == X.size - 1
    M = adversarial_feature_mask(G, X, 2)
    assert M[0, 0] == 0.0 and M[1, 1] == 0.0
    # budget above pool size: everything eligible masked, no more
    M = adversarial_feature_mask(G, X, 50)
    assert M[0, 0] == 0.0 and M[1, 1] == 0.0
    assert M[0, 1] == 1.0 and M[1, 2] == 1.0


def test_feature_mask_tie_break():
    X = np.ones((2, 2))
    G = np.full((2, 2), -1.0)
    M = adversarial_feature_mask(G, X, 1)
    assert M[0, 0] == 0.0  # lowest (row, col) among equal scores
    assert M.sum() == 3


def test_flip_perturb_both_directions():
    X = np.array([[1.0, 0.0],
                  [0.0, 1.0]])
    G = np.array([[-5.0, 4.0],
                  [0.1, -0.2]])
    # scores: (0,0) on->off 5; (0,1) off->on 4; (1,0) off->on 0.1;
    # (1,1) on->off 0.2
    out = flip_feature_perturb(G, X, 2)
    assert out[0, 0] == 0.0 and out[0, 1] == 1.0
    assert out[1, 0] == 0.0 and out[1, 1] == 1.0


def test_compute_gradients_symmetrized_zero_diag():
    g = make_clustered_graph(n=20, num_features=10, seed=8, with_split=False)
    rng = np.random.default_rng(0)
    enc, proj = init_params(10, 8, 6, 6, rng)
    pair = compute_gradients(enc, proj, g.as_view(), g.as_view(), 0.5)
    assert np.array_equal(pair.G_A, pair.G_A.T)
    assert not pair.G_A.diagonal().any()
    assert pair.G_X.shape == g.features.shape
    assert np.abs(pair.G_A).max() > 0


def test_compute_gradients_mlp_has_no_structure_gradient():
    g = make_clustered_graph(n=15, num_features=8, seed=9, with_split=False)
    rng = np.random.default_rng(1)
    enc, proj = init_params(8, 6, 4, 4, rng, mode="mlp")
    pair = compute_gradients(enc, proj, g.as_view(), g.as_view(), 0.5)
    assert not pair.G_A.any()
    assert np.abs(pair.G_X).max() > 0


def test_compute_gradients_size_guard():
    g = make_clustered_graph(n=12, num_features=6, seed=2, with_split=False)
    rng = np.random.default_rng(0)
    enc, proj = init_params(6, 4, 4, 4, rng)
    with pytest.raises(ValueError):
        compute_gradients(enc, proj, g.as_view(), g.as_view(), 0.5,
                          max_dense_n=8)


def test_generate_adversarial_view_budgets():
    g = make_clustered_graph(n=24, num_features=12, seed=5, with_split=False)
    rng = np.random.default_rng(4)
    enc, proj = init_params(12, 8, 6, 6, rng)
    budget = PerturbationBudget(0.2, 0.1)
    view = generate_adversarial_view(enc, proj, g.as_view(), g.as_view(),
                                     0.5, budget)
    assert view.provenance == "adversarial"
    a0, a1 = g.adjacency.toarray(), view.adjacency.toarray()
    want_edges, want_feats = budget.realized(
        g.num_edges, int(np.count_nonzero(g.features)))
    n_flipped = int((np.triu(a1 != a0, 1)).sum())
    assert n_flipped <= want_edges  # pool can be smaller than budget
    assert n_flipped > 0
    zeroed = (view.features == 0) & (g.features > 0)
    assert zeroed.sum() <= want_feats
    # masked view never invents features
    assert ((view.features > 0) <= (g.features > 0)).all()


def test_generate_adversarial_view_feature_modes():
    g = make_clustered_graph(n=18, num_features=10, seed=6, with_split=False)
    rng = np.random.default_rng(2)
    enc, proj = init_params(10, 8, 5, 5, rng)
    budget = PerturbationBudget(0.1, 0.2)
    v_none = generate_adversarial_view(enc, proj, g.as_view(), g.as_view(),
                                       0.5, budget, feature_mode="none")
    assert np.array_equal(v_none.features, g.features)
    v_flip = generate_adversarial_view(enc, proj, g.as_view(), g.as_view(),
                                       0.5, budget, feature_mode="flip")
    changed = (v_flip.features != g.features)
    assert changed.any()
    with pytest.raises(ValueError):
        generate_adversarial_view(enc, proj, g.as_view(), g.as_view(),
                                  0.5, budget, feature_mode="spin")


def test_gradient_attack_beats_random_on_frozen_model():
    """Structure flips chosen by gradient should raise the frozen-model
    loss more often than random additions at the same budget."""
    wins = 0
    trials = 12
    for t in range(trials):
        g = make_clustered_graph(n=30, num_features=12, seed=100 + t,
                                 with_split=False)
        rng = np.random.default_rng(t)
        enc, proj = init_params(12, 10, 6, 6, rng)
        z_clean = encode_graph(enc, g)

        pair = compute_gradients(enc, proj, g.as_view(), g.as_view(), 0.5)
        count = int(np.ceil(0.1 * g.num_edges))
        adj_grad = structural_perturb(pair.G_A, g.adjacency, count)
        from gcontrast.graph import SparseGraph
        g_grad = SparseGraph(g.n, adj_grad, g.features)
        g_rand = SparseGraph(
            g.n, random_attack(g, 0.1, rng).adjacency, g.features)

        loss_grad = pairwise_loss_value(
            encode_graph(enc, g_grad), z_clean, proj, 0.5)
        loss_rand = pairwise_loss_value(
            encode_graph(enc, g_rand), z_clean, proj, 0.5)
        wins += loss_grad > loss_rand
    assert wins >= 9, "gradient attack won only %d/%d trials" % (wins, trials)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0.05, 0.6))
def test_structural_perturb_budget_property(seed, ratio):
    import scipy.sparse as sp
    rng = np.random.default_rng(seed)
    n = 14
    a = np.triu((rng.random((n, n)) < 0.35).astype(float), 1)
    a = a + a.T
    g = rng.standard_normal((n, n))
    g = (g + g.T) / 2
    np.fill_diagonal(g, 0.0)
    adj = sp.csr_matrix(a)
    m = int(np.triu(a, 1).sum())
    count = int(np.ceil(ratio * max(m, 1)))
    out = structural_perturb(g, adj, count).toarray()
    pairs, _, _ = ranked_structural_candidates(g, adj)
    assert np.array_equal(out, out.T)
    assert (np.triu(out != a, 1)).sum() == min(count, len(pairs))
