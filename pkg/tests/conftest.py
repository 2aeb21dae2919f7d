"""Shared fixtures: synthetic planted-partition graphs and dataset lookup.

Real citation datasets are not shipped with the repository. Tests that
need them look under data/<name> relative to the repo root and skip with
a pointer when the bundle is absent (see README for how to prepare one).
"""

import os

import numpy as np
import pytest

from gcontrast.graph import SparseGraph, adjacency_from_edges, save_graph_bundle

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def make_clustered_graph(n=60, num_classes=3, num_features=24, p_in=0.2,
                         p_out=0.02, flip=0.08, seed=0, with_split=True):
    """Planted-partition graph with class-correlated binary features.

    Nodes take labels round-robin; intra-class edges appear with
    probability p_in, inter-class with p_out, and each node's feature
    vector is its class prototype with `flip` of the bits toggled.
    Isolated nodes get one edge to a same-class neighbour so degree >= 1
    holds everywhere.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    prototypes = (rng.random((num_classes, num_features)) < 0.5)
    X = np.zeros((n, num_features))
    for i in range(n):
        X[i] = prototypes[labels[i]] ^ (rng.random(num_features) < flip)
        if not X[i].any():
            X[i, rng.integers(num_features)] = 1.0
    edges = []
    for a in range(n):
        for b in range(a + 1, n):
            p = p_in if labels[a] == labels[b] else p_out
            if rng.random() < p:
                edges.append((a, b))
    adj = adjacency_from_edges(n, np.asarray(edges))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    extra = []
    for i in np.flatnonzero(deg == 0):
        same = np.flatnonzero((labels == labels[i]) & (np.arange(n) != i))
        extra.append((min(i, same[0]), max(i, same[0])))
    if extra:
        all_edges = np.vstack([np.argwhere(np.triu(adj.toarray(), 1) > 0),
                               np.asarray(extra)])
        adj = adjacency_from_edges(n, all_edges)
    split = None
    if with_split:
        # deterministic shuffled split, roughly 40/20/40
        order = rng.permutation(n)
        split = np.empty(n, dtype=object)
        split[order[: int(0.4 * n)]] = "train"
        split[order[int(0.4 * n): int(0.6 * n)]] = "val"
        split[order[int(0.6 * n):]] = "test"
        # every class must appear in train for the probe
        for c in range(num_classes):
            if not np.any((split == "train") & (labels == c)):
                split[np.flatnonzero(labels == c)[0]] = "train"
    return SparseGraph(n, adj, X, labels, split)


@pytest.fixture
def small_graph():
    return make_clustered_graph(n=40, num_features=16, seed=3)


@pytest.fixture
def bundle_dir(tmp_path, small_graph):
    path = str(tmp_path / "bundle")
    save_graph_bundle(small_graph, path)
    return path


def dataset_bundle(name):
    """Path to a prepared real-world bundle, or skip the calling test."""
    path = os.path.join(REPO_ROOT, "data", name)
    if not os.path.isfile(os.path.join(path, "edges.tsv")):
        pytest.skip("no %s bundle at %s (see README: preparing datasets)"
                    % (name, path))
    return path
