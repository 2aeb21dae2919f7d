"""Analysis artifacts: gradient scatter records over the structural flip
pool, and the closed-form single-edge perturbation check for a 1-layer
linear encoder.

The decomposition check validates the factored identity

    z_i - z_i^atk = (alpha * z_i - W x_k / sqrt(d_k + 1)) / sqrt(d_i + 1),
    alpha = sqrt(d_i + 1) - sqrt(d_i),

for adding one edge (i, k). Normalization convention for this check:
degrees count true neighbors only (no self bump) while the sums include
the self term, and the second normalization factor of every surviving
term keeps its pre-attack degree; only the center node's first factor
and the new neighbor's own count update. That is the semantics the
factored form is derived under (a full re-propagation would also rescale
the self term and differs at second order in 1/d). The center node needs
degree >= 1.
"""

from dataclasses import dataclass

import numpy as np

from .attack import compute_gradients, ranked_structural_candidates
from .graph import cosine_similarity_matrix


@dataclass
class ScatterRecord:
    i: int
    j: int
    degree_sum: float  # d_i + d_j on the clean graph
    feature_cosine: float
    gradient: float
    selected: bool


def gradient_scatter(graph, enc, proj, config, sample_size, rng):
    """Structural-candidate records for external plotting.

    Computes G_A once on identical un-augmented views of the graph, ranks
    the flip pool, and emits all pairs the realized budget selects plus
    `sample_size` further pool pairs sampled uniformly.

    Returns
    -------
    list of ScatterRecord, selected pairs first.
    """
    import math

    view = graph.as_view()
    pair = compute_gradients(enc, proj, view, view, config.tau,
                             max_dense_n=config.dense_attack_limit)
    pairs, _, _ = ranked_structural_candidates(pair.G_A, graph.adjacency)
    budget = math.ceil(config.delta_a_ratio * graph.num_edges)
    n_sel = min(budget, len(pairs))

    rest = np.arange(n_sel, len(pairs))
    take = min(sample_size, rest.size)
    sampled = rng.choice(rest, size=take, replace=False) if take else np.empty(0, int)

    deg = graph.degrees()
    norms = np.linalg.norm(graph.features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = graph.features / safe[:, None]

    records = []
    for idx in list(range(n_sel)) + sorted(sampled.tolist()):
        i, j = map(int, pairs[idx])
        records.append(ScatterRecord(
            i=i,
            j=j,
            degree_sum=float(deg[i] + deg[j]),
            feature_cosine=float(unit[i] @ unit[j]),
            gradient=float(pair.G_A[i, j]),
            selected=idx < n_sel,
        ))
    return records


def population_pair_means(graph):
    """Exact means of degree sum and feature cosine over all node pairs
    i < j, without materializing the n^2 pair set.

    mean degree sum: sum_{i<j}(d_i + d_j) / C(n,2) = 2 * mean(d).
    mean cosine: (||sum_i u_i||^2 - #nonzero rows) / (n (n - 1)) with
    u_i the unit (or zero) feature rows.
    """
    n = graph.n
    if n < 2:
        raise ValueError("need at least 2 nodes")
    deg_mean = 2.0 * graph.degrees().mean()
    norms = np.linalg.norm(graph.features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = graph.features / safe[:, None]
    total = unit.sum(axis=0)
    self_sim = float((norms > 0).sum())
    cos_mean = (float(total @ total) - self_sim) / (n * (n - 1))
    return deg_mean, cos_mean


def write_scatter(records, path):
    """TSV export: i, j, degree_sum, feature_cosine, gradient, selected."""
    with open(path, "w") as fh:
        fh.write("i\tj\tdegree_sum\tfeature_cosine\tgradient\tselected\n")
        for r in records:
            fh.write("%d\t%d\t%.17g\t%.17g\t%.17g\t%d\n" % (
                r.i, r.j, r.degree_sum, r.feature_cosine, r.gradient,
                int(r.selected)))


# ----------------------------------------------------------------------
# closed-form perturbation decomposition

def alpha(d):
    """sqrt(d + 1) - sqrt(d); equals 1 at d = 0 and falls below 1 for
    every d >= 1, decreasing toward 0."""
    return np.sqrt(d + 1.0) - np.sqrt(d)


def degree_term(d):
    """1 / sqrt(d + 1), the attenuation the center node's degree applies
    to any single-edge perturbation."""
    return 1.0 / np.sqrt(d + 1.0)


def _wx(W, x):
    return W @ x


def _linear_representation(graph, W, i, deg):
    """z_i under the raw-neighbor-count convention of this check."""
    nbrs = graph.adjacency[i].indices
    z = _wx(W, graph.features[i]) / (np.sqrt(deg[i]) * np.sqrt(deg[i]))
    for j in nbrs:
        z = z + _wx(W, graph.features[j]) / (np.sqrt(deg[i]) * np.sqrt(deg[j]))
    return z


def perturbation_difference(graph, W, i, k):
    """Direct z_i - z_i^atk for adding edge (i, k) with identical views,
    under the frozen-old-degree semantics described in the module
    docstring.

    Raises ValueError when k is already a neighbor, k == i, or node i is
    isolated.
    """
    deg = graph.degrees()
    if k == i:
        raise ValueError("k must differ from i")
    if graph.adjacency[i, k] != 0:
        raise ValueError("k is already a neighbor of i")
    if deg[i] < 1:
        raise ValueError("node i must have at least one neighbor")
    nbrs = graph.adjacency[i].indices
    z_clean = _linear_representation(graph, W, i, deg)
    z_atk = _wx(W, graph.features[i]) / (np.sqrt(deg[i] + 1.0) * np.sqrt(deg[i]))
    for j in nbrs:
        z_atk = z_atk + _wx(W, graph.features[j]) / (
            np.sqrt(deg[i] + 1.0) * np.sqrt(deg[j]))
    z_atk = z_atk + _wx(W, graph.features[k]) / (
        np.sqrt(deg[i] + 1.0) * np.sqrt(deg[k] + 1.0))
    return z_clean - z_atk


def eq4_decomposition_check(graph, W, i, k):
    """Max absolute residual between the direct difference and the
    factored degree-term x feature-difference-term form."""
    deg = graph.degrees()
    direct = perturbation_difference(graph, W, i, k)
    z_clean = _linear_representation(graph, W, i, deg)
    closed = degree_term(deg[i]) * (
        alpha(deg[i]) * z_clean
        - _wx(W, graph.features[k]) / np.sqrt(deg[k] + 1.0)
    )
    return float(np.max(np.abs(direct - closed)))


def write_eq4_residuals(rows, path):
    """TSV export: i, k, d_i, residual."""
    with open(path, "w") as fh:
        fh.write("i\tk\td_i\tresidual\n")
        for i, k, d_i, res in rows:
            fh.write("%d\t%d\t%g\t%.17g\n" % (i, k, d_i, res))
