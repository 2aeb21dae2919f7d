"""Downstream measurements on frozen embeddings: linear-probe node
classification (overall and by degree bucket), link prediction AUC,
k-means clustering NMI, and the feature-similarity overlap score.

All functions are pure over immutable inputs; probe seeds and sampling
streams are passed in explicitly so every number is reproducible.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.cluster import KMeans

from .graph import edges_upper, knn_view, sample_non_edges

L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


# ----------------------------------------------------------------------
# linear probe

def _fit_softmax(zb, y, num_classes, l2, rng, max_iter=2000, tol=1e-6):
    """Full-batch gradient descent with Armijo backtracking on the
    L2-regularized softmax cross-entropy. zb carries a trailing all-ones
    bias column, which is excluded from the penalty. Stops at gradient
    max-norm < tol or max_iter."""
    n, d = zb.shape
    w = 0.01 * rng.standard_normal((d, num_classes))
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0

    def loss_grad(w):
        logits = zb @ w
        logits = logits - logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        prob = expl / expl.sum(axis=1, keepdims=True)
        nll = -np.mean(np.log(prob[np.arange(n), y] + 1e-300))
        reg = 0.5 * l2 * np.sum(w[:-1] ** 2)
        g = zb.T @ (prob - onehot) / n
        g[:-1] += l2 * w[:-1]
        return nll + reg, g

    f, g = loss_grad(w)
    lr = 1.0
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            break
        gn2 = np.sum(g * g)
        while True:
            w_next = w - lr * g
            f_next, g_next = loss_grad(w_next)
            if f_next <= f - 1e-4 * lr * gn2 or lr < 1e-12:
                break
            lr *= 0.5
        w, f, g = w_next, f_next, g_next
        lr *= 1.3
    return w


def _predict(zb, w):
    return np.argmax(zb @ w, axis=1)


@dataclass
class ProbeResult:
    mean: float
    std: float
    accuracies: list
    best_l2: list
    test_idx: np.ndarray
    predictions: list  # one test-prediction array per probe seed


def linear_probe(Z, labels, split, probe_seeds=(0, 1, 2, 3, 4), l2_grid=L2_GRID):
    """Multinomial logistic-regression probe on frozen embeddings.

    The L2 strength is selected per seed from `l2_grid` by validation
    accuracy (ties go to the smaller strength); test accuracy is reported
    as mean and population std over the probe seeds. With no validation
    nodes the first grid value is used.

    Raises ValueError when train or test is empty or a class present in
    the data is absent from the train split.
    """
    split = np.asarray(split)
    train_idx = np.flatnonzero(split == "train")
    val_idx = np.flatnonzero(split == "val")
    test_idx = np.flatnonzero(split == "test")
    if train_idx.size == 0 or test_idx.size == 0:
        raise ValueError("split needs nonempty train and test")
    num_classes = int(labels.max()) + 1
    present = np.unique(labels[train_idx])
    if present.size < num_classes:
        missing = sorted(set(range(num_classes)) - set(present))
        raise ValueError("classes %s absent from train split" % (missing,))

    zb = np.concatenate([Z, np.ones((Z.shape[0], 1))], axis=1)
    accuracies, best_l2s, predictions = [], [], []
    for s in probe_seeds:
        best = None
        for l2 in l2_grid:
            w = _fit_softmax(zb[train_idx], labels[train_idx], num_classes, l2,
                             np.random.default_rng(s))
            if val_idx.size:
                score = np.mean(_predict(zb[val_idx], w) == labels[val_idx])
            else:
                score = 0.0
            if best is None or score > best[0]:
                best = (score, l2, w)
            if val_idx.size == 0:
                break
        _, l2, w = best
        pred = _predict(zb[test_idx], w)
        accuracies.append(float(np.mean(pred == labels[test_idx])))
        best_l2s.append(l2)
        predictions.append(pred)
    return ProbeResult(
        mean=float(np.mean(accuracies)),
        std=float(np.std(accuracies)),
        accuracies=accuracies,
        best_l2=best_l2s,
        test_idx=test_idx,
        predictions=predictions,
    )


def degree_bucket_accuracy(result, labels, adjacency, thresholds=(2,)):
    """Test accuracy partitioned by clean-graph degree.

    Buckets are defined by the sorted thresholds: d <= t0,
    t0 < d <= t1, ..., d > t_last. Empty buckets are absent from the
    returned dict rather than reported as zero. Accuracies are averaged
    over the probe seeds stored in `result`.
    """
    thresholds = sorted(thresholds)
    deg = np.asarray(adjacency.sum(axis=1)).ravel()[result.test_idx]
    truth = labels[result.test_idx]

    names, masks = [], []
    lo = None
    for t in thresholds:
        if lo is None:
            names.append("d<=%g" % t)
            masks.append(deg <= t)
        else:
            names.append("%g<d<=%g" % (lo, t))
            masks.append((deg > lo) & (deg <= t))
        lo = t
    names.append("d>%g" % lo)
    masks.append(deg > lo)

    out = {}
    for name, mask in zip(names, masks):
        if not mask.any():
            continue
        accs = [float(np.mean(pred[mask] == truth[mask])) for pred in result.predictions]
        out[name] = float(np.mean(accs))
    return out


# ----------------------------------------------------------------------
# link prediction

def cosine_scores(Z, pairs):
    norms = np.linalg.norm(Z, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = Z / safe[:, None]
    return np.sum(unit[pairs[:, 0]] * unit[pairs[:, 1]], axis=1)


def link_prediction_auc(Z, adjacency, holdout=0.1, rng=None):
    """AUC of cosine scores separating held-out edges from an equal count
    of uniformly sampled non-edges, via the midrank statistic."""
    if not (0.0 < holdout <= 0.5):
        raise ValueError("holdout fraction must lie in (0, 0.5]")
    rng = np.random.default_rng(0) if rng is None else rng
    edges = edges_upper(adjacency)
    m = len(edges)
    if m == 0:
        raise ValueError("graph has no edge to hold out")
    p = math.ceil(holdout * m)
    pos = edges[rng.choice(m, size=p, replace=False)]
    neg = sample_non_edges(adjacency, p, rng)
    s_pos = cosine_scores(Z, pos)
    s_neg = cosine_scores(Z, neg)
    ranks = rankdata(np.concatenate([s_pos, s_neg]))
    return float((ranks[:p].sum() - p * (p + 1) / 2) / (p * len(s_neg)))


# ----------------------------------------------------------------------
# clustering

def nmi(pred, truth):
    """Normalized mutual information with geometric normalization,
    I(pred; truth) / sqrt(H(pred) H(truth)); 0.0 when either labeling is
    constant."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    n = pred.size
    pk = np.unique(pred, return_inverse=True)[1]
    tk = np.unique(truth, return_inverse=True)[1]
    contingency = np.zeros((pk.max() + 1, tk.max() + 1))
    np.add.at(contingency, (pk, tk), 1.0)
    pxy = contingency / n
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    nzx, nzy = np.nonzero(pxy)
    vals = pxy[nzx, nzy]
    info = float(np.sum(vals * np.log(vals / (px[nzx] * py[nzy]))))
    hx = -float(np.sum(px[px > 0] * np.log(px[px > 0])))
    hy = -float(np.sum(py[py > 0] * np.log(py[py > 0])))
    if hx <= 0.0 or hy <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, info / math.sqrt(hx * hy))))


def kmeans_nmi(Z, labels, num_clusters, restarts=10, rng=None):
    """k-means++ with `restarts` initializations (best inertia kept),
    scored by NMI against the labels."""
    if num_clusters < 2:
        raise ValueError("need at least 2 clusters")
    if np.unique(Z, axis=0).shape[0] < num_clusters:
        raise ValueError("fewer distinct points than clusters")
    rng = np.random.default_rng(0) if rng is None else rng
    km = KMeans(
        n_clusters=num_clusters,
        init="k-means++",
        n_init=restarts,
        random_state=int(rng.integers(2**31 - 1)),
    )
    pred = km.fit_predict(Z)
    return nmi(pred, labels)


# ----------------------------------------------------------------------
# overlap score

def ol_score(Z, X, k):
    """Fraction of the feature-kNN edges that also appear in the
    embedding-kNN graph; both graphs use the identical knn_view
    construction."""
    a_z = knn_view(Z, k).adjacency
    a_x = knn_view(X, k).adjacency
    shared = a_x.multiply(a_z).nnz // 2
    return float(shared / (a_x.nnz // 2))


# ----------------------------------------------------------------------
# report container

@dataclass
class EvalReport:
    """JSON-serializable bundle of requested metrics; fields stay None
    for tasks that were not run."""

    accuracy_mean: float = None
    accuracy_std: float = None
    auc: float = None
    nmi: float = None
    ol: dict = None  # str(k) -> score
    degree_buckets: dict = None
    metadata: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "auc": self.auc,
            "nmi": self.nmi,
            "ol": self.ol,
            "degree_buckets": self.degree_buckets,
            "metadata": self.metadata,
        }

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"
