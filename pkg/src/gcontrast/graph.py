"""Graph storage, bundle IO, normalization, kNN view construction,
stochastic augmentation, random edge attack, and subgraph sampling.

All adjacencies are symmetric scipy CSR matrices with unit weights, no
self-loops, and no duplicate edges. Feature matrices are dense float64.
Everything here is immutable by convention: operations return new objects
and never mutate their inputs.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

PROVENANCES = ("stochastic", "knn", "adversarial", "clean", "external-attack")


@dataclass
class SparseGraph:
    """An undirected graph with node features and optional labels/splits.

    Attributes
    ----------
    n : int
        Node count.
    adjacency : scipy.sparse.csr_matrix
        Symmetric binary adjacency, no self-loops, no duplicates.
    features : ndarray, shape (n, F)
        Dense float64 node features, values expected in [0, 1].
    labels : ndarray of int, shape (n,), or None
        Class ids in [0, C).
    split : ndarray of str, shape (n,), or None
        Per-node tag in {"train", "val", "test", "none"}.
    """

    n: int
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray = None
    split: np.ndarray = None

    @property
    def num_edges(self):
        """Undirected edge count |E|."""
        return self.adjacency.nnz // 2

    @property
    def num_features(self):
        return self.features.shape[1]

    def degrees(self):
        """Degree vector without self-loops."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def as_view(self, provenance="clean"):
        return View(self.adjacency, self.features, provenance)

    def validate(self):
        """Check structural invariants; raises ValueError on violation."""
        a = self.adjacency
        if a.shape != (self.n, self.n):
            raise ValueError("adjacency shape does not match node count")
        if (a != a.T).nnz != 0:
            raise ValueError("adjacency is not symmetric")
        if a.diagonal().any():
            raise ValueError("adjacency has self-loops")
        if a.nnz and not np.all(a.data == 1.0):
            raise ValueError("adjacency has non-unit weights")
        if self.features.shape[0] != self.n:
            raise ValueError("feature row count does not match node count")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature value")
        if self.labels is not None:
            c = self.labels.max() + 1 if self.n else 0
            if self.labels.min() < 0 or self.labels.max() >= c:
                raise ValueError("label ids outside [0, C)")


@dataclass
class View:
    """An (adjacency, features) pair produced by augmentation, kNN
    construction, or attack. Same n and F as its source graph."""

    adjacency: sp.csr_matrix
    features: np.ndarray
    provenance: str = "clean"
    drop_edge_rate: float = None
    drop_feat_rate: float = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError("unknown provenance %r" % (self.provenance,))

    @property
    def n(self):
        return self.adjacency.shape[0]

    @property
    def num_edges(self):
        return self.adjacency.nnz // 2


@dataclass
class NormalizedAdjacency:
    """D^{-1/2} (A + I) D^{-1/2} with D the self-loop-augmented degrees."""

    matrix: sp.csr_matrix
    degrees: np.ndarray  # d_i + 1, strictly positive


def edges_upper(adjacency):
    """Return the undirected edge list as an (m, 2) int array with i < j,
    sorted lexicographically."""
    coo = sp.triu(adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    return np.stack([coo.row[order], coo.col[order]], axis=1)


def adjacency_from_edges(n, edges):
    """Build a symmetric binary CSR adjacency from an (m, 2) array of
    undirected edges (either orientation, duplicates tolerated)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        r = np.concatenate([edges[:, 0], edges[:, 1]])
        c = np.concatenate([edges[:, 1], edges[:, 0]])
        a = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(n, n)).tocsr()
        a.data[:] = 1.0  # collapse duplicates to unit weight
        a.eliminate_zeros()
    else:
        a = sp.csr_matrix((n, n))
    return a


def _parse_error(path, lineno, msg):
    return ValueError("%s:%d: %s" % (path, lineno, msg))


def load_graph_bundle(path):
    """Load a graph bundle directory.

    The directory must contain `edges.tsv` (two 0-based node ids per line)
    and `features.tsv` (node id followed by `idx:val` sparse pairs, one
    line per node). Optional `labels.tsv` (id, class) and `splits.tsv`
    (id, tag) are picked up when present.

    Returns
    -------
    SparseGraph

    Raises
    ------
    ValueError
        On malformed lines (reported with file and line number), node ids
        out of range, or non-finite feature values.
    """
    feat_path = os.path.join(path, "features.tsv")
    edge_path = os.path.join(path, "edges.tsv")

    rows = []
    with open(feat_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                nid = int(parts[0])
            except ValueError:
                raise _parse_error(feat_path, lineno, "bad node id %r" % parts[0])
            pairs = []
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise _parse_error(feat_path, lineno, "bad idx:val token %r" % tok)
                try:
                    idx = int(idx)
                    val = float(val)
                except ValueError:
                    raise _parse_error(feat_path, lineno, "bad idx:val token %r" % tok)
                if idx < 0:
                    raise _parse_error(feat_path, lineno, "negative feature index")
                if not math.isfinite(val):
                    raise _parse_error(feat_path, lineno, "non-finite feature value")
                pairs.append((idx, val))
            rows.append((lineno, nid, pairs))

    n = len(rows)
    seen = set()
    for lineno, nid, _ in rows:
        if nid < 0 or nid >= n:
            raise _parse_error(feat_path, lineno, "node id %d outside [0, %d)" % (nid, n))
        if nid in seen:
            raise _parse_error(feat_path, lineno, "duplicate node id %d" % nid)
        seen.add(nid)

    nfeat = max((idx for _, _, pairs in rows for idx, _ in pairs), default=-1) + 1
    features = np.zeros((n, nfeat))
    for _, nid, pairs in rows:
        for idx, val in pairs:
            features[nid, idx] = val

    edge_list = []
    with open(edge_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise _parse_error(edge_path, lineno, "expected two node ids")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise _parse_error(edge_path, lineno, "bad node id")
            if u < 0 or u >= n or v < 0 or v >= n:
                raise _parse_error(edge_path, lineno, "node id outside [0, %d)" % n)
            if u == v:
                raise _parse_error(edge_path, lineno, "self-loop %d-%d" % (u, v))
            edge_list.append((u, v))
    adjacency = adjacency_from_edges(n, np.asarray(edge_list).reshape(-1, 2))

    labels = None
    label_path = os.path.join(path, "labels.tsv")
    if os.path.exists(label_path):
        labels = np.full(n, -1, dtype=np.int64)
        with open(label_path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 2:
                    raise _parse_error(label_path, lineno, "expected id and label")
                try:
                    nid, lab = int(parts[0]), int(parts[1])
                except ValueError:
                    raise _parse_error(label_path, lineno, "bad id or label")
                if nid < 0 or nid >= n:
                    raise _parse_error(label_path, lineno, "node id outside [0, %d)" % n)
                if lab < 0:
                    raise _parse_error(label_path, lineno, "negative label")
                labels[nid] = lab
        if (labels < 0).any():
            missing = int(np.argmax(labels < 0))
            raise ValueError("%s: node %d has no label" % (label_path, missing))

    split = None
    split_path = os.path.join(path, "splits.tsv")
    if os.path.exists(split_path):
        split = np.full(n, "none", dtype=object)
        with open(split_path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 2 or parts[1] not in ("train", "val", "test"):
                    raise _parse_error(split_path, lineno, "expected id and train/val/test tag")
                try:
                    nid = int(parts[0])
                except ValueError:
                    raise _parse_error(split_path, lineno, "bad node id")
                if nid < 0 or nid >= n:
                    raise _parse_error(split_path, lineno, "node id outside [0, %d)" % n)
                split[nid] = parts[1]

    graph = SparseGraph(n, adjacency, features, labels, split)
    graph.validate()
    return graph


def save_graph_bundle(graph, path):
    """Write a SparseGraph as a bundle directory (inverse of
    load_graph_bundle). Floats are written with repr-exact precision."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "edges.tsv"), "w") as fh:
        for u, v in edges_upper(graph.adjacency):
            fh.write("%d\t%d\n" % (u, v))
    with open(os.path.join(path, "features.tsv"), "w") as fh:
        for i in range(graph.n):
            nz = np.nonzero(graph.features[i])[0]
            toks = ["%d:%.17g" % (j, graph.features[i, j]) for j in nz]
            fh.write("\t".join([str(i)] + toks) + "\n")
    if graph.labels is not None:
        with open(os.path.join(path, "labels.tsv"), "w") as fh:
            for i, lab in enumerate(graph.labels):
                fh.write("%d\t%d\n" % (i, lab))
    if graph.split is not None:
        with open(os.path.join(path, "splits.tsv"), "w") as fh:
            for i, tag in enumerate(graph.split):
                if tag != "none":
                    fh.write("%d\t%s\n" % (i, tag))


def normalize(adjacency):
    """Symmetric GCN normalization with self-loops.

    Parameters
    ----------
    adjacency : CSR, symmetric, no self-loops.

    Returns
    -------
    NormalizedAdjacency
        H[i, j] = (A + I)[i, j] / sqrt((d_i + 1) (d_j + 1)). Isolated
        nodes get H[i, i] = 1.
    """
    n = adjacency.shape[0]
    deg = np.asarray(adjacency.sum(axis=1)).ravel() + 1.0
    inv = 1.0 / np.sqrt(deg)
    a_hat = (adjacency + sp.identity(n, format="csr")).tocoo()
    data = a_hat.data * inv[a_hat.row] * inv[a_hat.col]
    matrix = sp.csr_matrix((data, (a_hat.row, a_hat.col)), shape=(n, n))
    return NormalizedAdjacency(matrix, deg)


def cosine_similarity_matrix(features):
    """Pairwise cosine similarity; rows with zero norm get similarity 0
    to every node (including themselves)."""
    norms = np.linalg.norm(features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = features / safe[:, None]
    return unit @ unit.T


def knn_view(features, k):
    """Build the feature-similarity view: each node links to its k most
    cosine-similar other nodes, symmetrized by union.

    Ties are broken toward the lowest node index. All-zero feature rows
    have similarity 0 to every node and therefore pick the k lowest
    indices. Features are passed through unchanged.

    Parameters
    ----------
    features : ndarray, shape (n, F)
    k : int
        1 <= k < n.

    Returns
    -------
    View with provenance "knn".
    """
    n = features.shape[0]
    if k < 1 or k >= n:
        raise ValueError("k must satisfy 1 <= k < n, got k=%d n=%d" % (k, n))
    sim = cosine_similarity_matrix(features)
    np.fill_diagonal(sim, -np.inf)
    # stable sort on the negated similarities: ties resolve to lowest index
    picks = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    directed = sp.coo_matrix(
        (np.ones(n * k), (rows, picks.ravel())), shape=(n, n)
    ).tocsr()
    adjacency = directed.maximum(directed.T)
    adjacency.data[:] = 1.0
    return View(adjacency, features, "knn")


def knn_out_neighbors(features, k):
    """The per-node top-k selections before symmetrization, as an (n, k)
    index array. Same ordering rules as knn_view."""
    n = features.shape[0]
    if k < 1 or k >= n:
        raise ValueError("k must satisfy 1 <= k < n, got k=%d n=%d" % (k, n))
    sim = cosine_similarity_matrix(features)
    np.fill_diagonal(sim, -np.inf)
    return np.argsort(-sim, axis=1, kind="stable")[:, :k]


def stochastic_augment(view, p_e, p_f, rng):
    """Random edge dropping plus column-wise feature masking.

    Each undirected edge is removed independently with probability p_e;
    each feature column is zeroed across all nodes independently with
    probability p_f. Deterministic given the rng state: the edge draws
    are consumed first, then the column draws.

    Parameters
    ----------
    view : View or SparseGraph
    p_e, p_f : float in [0, 1)
    rng : numpy Generator
    """
    if not (0.0 <= p_e < 1.0 and 0.0 <= p_f < 1.0):
        raise ValueError("drop rates must lie in [0, 1)")
    if isinstance(view, SparseGraph):
        view = view.as_view()
    edges = edges_upper(view.adjacency)
    keep = rng.random(len(edges)) >= p_e
    adjacency = adjacency_from_edges(view.n, edges[keep])
    col_keep = rng.random(view.features.shape[1]) >= p_f
    features = view.features * col_keep[None, :]
    return View(adjacency, features, "stochastic", p_e, p_f)


def sample_non_edges(adjacency, count, rng):
    """Sample `count` distinct non-edges (i < j) uniformly at random.

    Raises ValueError when fewer than `count` non-edges exist.
    """
    n = adjacency.shape[0]
    total_pairs = n * (n - 1) // 2
    available = total_pairs - adjacency.nnz // 2
    if count > available:
        raise ValueError(
            "requested %d non-edges but only %d exist" % (count, available)
        )
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)
    if total_pairs <= 20_000_000:
        # exact uniform sampling over the enumerated non-edge set
        dense = adjacency.toarray().astype(bool)
        iu, ju = np.triu_indices(n, k=1)
        cand = np.flatnonzero(~dense[iu, ju])
        chosen = rng.choice(cand, size=count, replace=False)
        return np.stack([iu[chosen], ju[chosen]], axis=1)
    # rejection sampling; collision probability is negligible at this scale
    have = set(map(tuple, edges_upper(adjacency)))
    picked = set()
    while len(picked) < count:
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        if u > v:
            u, v = v, u
        if (u, v) in have or (u, v) in picked:
            continue
        picked.add((u, v))
    return np.asarray(sorted(picked))


def random_attack(graph, ratio, rng):
    """Add ceil(ratio * |E|) distinct non-edges uniformly at random.

    Raises ValueError when the requested count exceeds the number of
    available non-edges (e.g. a complete graph).
    """
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    count = math.ceil(ratio * graph.num_edges)
    if count == 0:
        return View(graph.adjacency.copy(), graph.features, "external-attack")
    new_edges = sample_non_edges(graph.adjacency, count, rng)
    all_edges = np.concatenate([edges_upper(graph.adjacency), new_edges])
    return View(adjacency_from_edges(graph.n, all_edges), graph.features,
                "external-attack")


def sample_subgraph(graph, m, rng):
    """Node-induced subgraph on m uniformly sampled distinct nodes.

    Returns
    -------
    (View, ndarray)
        The induced subgraph (provenance "clean") and the sorted array of
        original node ids mapping subgraph row r to graph node ids[r].
    """
    if not (1 <= m <= graph.n):
        raise ValueError("m must satisfy 1 <= m <= n")
    ids = np.sort(rng.choice(graph.n, size=m, replace=False))
    sub_adj = graph.adjacency[ids][:, ids].tocsr()
    sub_adj.eliminate_zeros()
    return View(sub_adj, graph.features[ids], "clean"), ids


def restrict_adjacency(adjacency, ids):
    """Edge-filter an adjacency to the node subset `ids` (sorted array),
    reindexed to subgraph rows."""
    out = adjacency[ids][:, ids].tocsr()
    out.eliminate_zeros()
    return out
