"""Adversarial view generation: loss gradients with respect to structure
and features, budgeted edge flips, and the feature mask.

The gradient pass runs the encoder through the dense differentiable
adjacency path, so it is restricted to graphs below a configurable node
limit (subgraph scale). Structural candidates are ranked jointly: non-
edges with positive gradient compete with existing edges with negative
gradient for a single flip budget, so the add/delete split adapts to
whichever pool raises the loss more. Ties break lexicographically on
(i, j) for determinism.
"""

import math
from dataclasses import dataclass

import numpy as np

from .graph import View, adjacency_from_edges
from .loss import pairwise_loss
from .model import encode, make_vars
from .tape import Tape

DENSE_ATTACK_LIMIT = 4000


@dataclass
class PerturbationBudget:
    """l0 budgets as fractions: delta_a_ratio of the view's undirected
    edge count, delta_x_ratio of the view's feature nonzeros."""

    delta_a_ratio: float = 0.0
    delta_x_ratio: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.delta_a_ratio <= 1.0 and 0.0 <= self.delta_x_ratio <= 1.0):
            raise ValueError("budget ratios must lie in [0, 1]")

    def realized(self, num_edges, nnz_features):
        return (
            math.ceil(self.delta_a_ratio * num_edges),
            math.ceil(self.delta_x_ratio * nnz_features),
        )


@dataclass
class GradientPair:
    """Summed loss gradients over both stochastic views. G_A is
    symmetrized to (G + G^T)/2 with a zero diagonal since the free
    variables of a symmetric adjacency are unordered pairs."""

    G_A: np.ndarray
    G_X: np.ndarray


def compute_gradients(enc, proj, view1, view2, tau, max_dense_n=DENSE_ATTACK_LIMIT):
    """Gradients of the two-view contrastive loss w.r.t. adjacency and
    features of both views, summed.

    Returns
    -------
    GradientPair
    """
    n = view1.n
    if view2.n != n or view1.features.shape != view2.features.shape:
        raise ValueError("views must share n and F")
    if n > max_dense_n:
        raise ValueError(
            "dense attack path limited to %d nodes, got %d" % (max_dense_n, n)
        )
    tape = Tape()
    evars = make_vars(tape, enc)
    pvars = make_vars(tape, proj)
    x1 = tape.leaf(view1.features)
    x2 = tape.leaf(view2.features)
    if enc.mode == "mlp":
        z1 = encode(tape, evars, enc.mode, x1, None)
        z2 = encode(tape, evars, enc.mode, x2, None)
        a1 = a2 = None
    else:
        a1 = tape.leaf(view1.adjacency.toarray())
        a2 = tape.leaf(view2.adjacency.toarray())
        z1 = encode(tape, evars, enc.mode, x1, a1)
        z2 = encode(tape, evars, enc.mode, x2, a2)
    loss = pairwise_loss(tape, z1, z2, pvars, tau)
    tape.backward(loss)

    if a1 is None:
        g_a = np.zeros((n, n))
    else:
        g_a = tape.grad(a1) + tape.grad(a2)
        g_a = 0.5 * (g_a + g_a.T)
        np.fill_diagonal(g_a, 0.0)
    g_x = tape.grad(x1) + tape.grad(x2)
    return GradientPair(g_a, g_x)


def ranked_structural_candidates(G_A, adjacency):
    """The structural flip pool, ranked best-first.

    Returns
    -------
    (pairs, scores, is_add)
        pairs: (p, 2) array of candidate (i, j) with i < j, ordered by
        descending loss-increase score with lexicographic (i, j)
        tie-break; scores: the corresponding |G_A| scores; is_add: True
        where the action is an edge addition.
    """
    n = adjacency.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    present = np.asarray(adjacency.todense(), dtype=bool)[iu, ju]
    grad = np.asarray(G_A)[iu, ju]
    adds = ~present & (grad > 0)
    dels = present & (grad < 0)
    pool = np.flatnonzero(adds | dels)
    score = np.where(adds, grad, -grad)[pool]
    order = np.lexsort((ju[pool], iu[pool], -score))
    pool = pool[order]
    pairs = np.stack([iu[pool], ju[pool]], axis=1)
    return pairs, score[order], adds[pool]


def structural_perturb(G_A, adjacency, count):
    """Flip the `count` highest-scoring structural candidates.

    Candidates are non-edges (i < j) with G_A > 0 (score G_A, action add)
    and existing edges with G_A < 0 (score -G_A, action delete). Exactly
    min(count, pool size) flips are applied symmetrically.

    Returns
    -------
    CSR adjacency of the perturbed view.
    """
    n = adjacency.shape[0]
    if count < 0:
        raise ValueError("count must be >= 0")
    pairs, _, is_add = ranked_structural_candidates(G_A, adjacency)
    if count == 0 or len(pairs) == 0:
        return adjacency.copy()
    take = min(count, len(pairs))
    out = adjacency.tolil(copy=True)
    for (i, j), add in zip(pairs[:take], is_add[:take]):
        val = 1.0 if add else 0.0
        out[i, j] = val
        out[j, i] = val
    out = out.tocsr()
    out.eliminate_zeros()
    return out


def adversarial_feature_mask(G_X, X1, count):
    """Binary mask zeroing the `count` present features whose gradients
    are most negative.

    Candidates are positions with X1 > 0 and G_X < 0; the mask never
    creates a feature. Returns an all-ones matrix when count is 0 or the
    pool is empty.
    """
    n, f = X1.shape
    mask = np.ones((n, f))
    if count <= 0:
        return mask
    pool = np.flatnonzero(((X1 > 0) & (G_X < 0)).ravel())
    if pool.size == 0:
        return mask
    scores = G_X.ravel()[pool]
    rows, cols = pool // f, pool % f
    order = np.lexsort((cols, rows, scores))
    chosen = pool[order[: min(count, pool.size)]]
    mask.ravel()[chosen] = 0.0
    return mask


def flip_feature_perturb(G_X, X1, count):
    """Ablation comparator: flip binary features in the loss-increasing
    direction (0 -> 1 where the gradient is most positive, 1 -> 0 where
    most negative), jointly ranked by gradient magnitude."""
    n, f = X1.shape
    out = X1.copy()
    if count <= 0:
        return out
    up = (X1 == 0) & (G_X > 0)
    down = (X1 > 0) & (G_X < 0)
    pool = np.flatnonzero((up | down).ravel())
    if pool.size == 0:
        return out
    score = np.where(up, G_X, -G_X).ravel()[pool]
    rows, cols = pool // f, pool % f
    order = np.lexsort((cols, rows, -score))
    chosen = pool[order[: min(count, pool.size)]]
    flat = out.ravel()
    flat[chosen] = np.where(flat[chosen] > 0, 0.0, 1.0)
    return flat.reshape(n, f)


def assemble_adversarial_view(A_adv, X1, M):
    """(A_adv, M . X1) with adversarial provenance. Masked entries are
    exactly 0; everything else is bit-for-bit X1."""
    if M.shape != X1.shape:
        raise ValueError("mask shape mismatch")
    return View(A_adv, M * X1, "adversarial")


def generate_adversarial_view(enc, proj, view1, view2, tau, budget,
                              feature_mode="mask", max_dense_n=DENSE_ATTACK_LIMIT):
    """Full pipeline: gradients -> structural flips within the edge
    budget -> feature perturbation within the feature budget.

    feature_mode: "mask" (default), "flip" (ablation comparator), or
    "none" (structure-only perturbation).
    """
    if feature_mode not in ("mask", "flip", "none"):
        raise ValueError("unknown feature_mode %r" % (feature_mode,))
    pair = compute_gradients(enc, proj, view1, view2, tau, max_dense_n)
    c_a, c_x = budget.realized(view1.num_edges, np.count_nonzero(view1.features))
    a_adv = structural_perturb(pair.G_A, view1.adjacency, c_a)
    if feature_mode == "mask":
        m = adversarial_feature_mask(pair.G_X, view1.features, c_x)
        return assemble_adversarial_view(a_adv, view1.features, m)
    if feature_mode == "flip":
        x_adv = flip_feature_perturb(pair.G_X, view1.features, c_x)
        return View(a_adv, x_adv, "adversarial")
    return View(a_adv, view1.features.copy(), "adversarial")
