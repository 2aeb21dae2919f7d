"""Training loop: per-epoch subgraph sampling, four-view generation,
cross-view loss, Adam updates, and embedding export.

Determinism: all randomness derives from the single config seed through
named SeedSequence spawn keys, one independent stream per (role, epoch).
Skipping an optional view therefore never shifts the draws of any other
stream, which keeps the lambda1 = lambda2 = 0 configuration identical
step-for-step to a plain two-view contrastive run on the same seed.
"""

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .attack import PerturbationBudget, generate_adversarial_view
from .graph import (View, knn_view, normalize, restrict_adjacency,
                    sample_subgraph, stochastic_augment)
from .loss import LossTerms, cross_view_loss
from .model import AdamState, adam_step, encode, encode_graph, init_params, make_vars
from .tape import Tape

# fixed role ids for seed derivation; appending is fine, reordering is not
_ROLES = ("init", "subgraph", "aug1", "aug2", "attack", "probe", "eval", "scatter")

DECAY_KEYS = ("W1", "W2", "Wp1", "Wp2")


def rng_for(seed, role, epoch=None):
    """Independent generator for (seed, role[, epoch])."""
    key = (_ROLES.index(role),) if epoch is None else (_ROLES.index(role), epoch)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class TrainConfig:
    tau: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 2.0
    p_e1: float = 0.3
    p_f1: float = 0.3
    p_e2: float = 0.3
    p_f2: float = 0.3
    k: int = 10
    delta_a_ratio: float = 0.3
    delta_x_ratio: float = 0.1
    lr: float = 5e-4
    weight_decay: float = 1e-5
    epochs: int = 400
    subgraph_size: int = 3000  # 0 = always full graph
    seed: int = 0
    hidden_dim: int = 256
    out_dim: int = 128
    proj_dim: int = 128
    encoder: str = "gcn"
    feature_perturb: str = "mask"  # mask | flip | none
    anchor_view: int = 1  # which stochastic view anchors the auxiliary terms
    knn_recompute: bool = False  # rebuild the kNN view per subgraph
    dense_attack_limit: int = 4000

    def validate(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        for name in ("p_e1", "p_f1", "p_e2", "p_f2", "delta_a_ratio", "delta_x_ratio"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError("%s must lie in [0, 1), got %r" % (name, v))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.subgraph_size < 0:
            raise ValueError("subgraph_size must be >= 0")
        if min(self.hidden_dim, self.out_dim, self.proj_dim) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.encoder not in ("gcn", "mlp"):
            raise ValueError("encoder must be gcn or mlp")
        if self.feature_perturb not in ("mask", "flip", "none"):
            raise ValueError("feature_perturb must be mask, flip, or none")
        if self.anchor_view not in (1, 2):
            raise ValueError("anchor_view must be 1 or 2")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("bad optimizer settings")
        return self


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _parse_value(key, raw):
    ftype = _FIELD_TYPES[key]
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError("config key %r expects a boolean, got %r" % (key, raw))
    try:
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
    except ValueError:
        raise ValueError("config key %r expects %s, got %r"
                         % (key, ftype.__name__, raw))
    return raw


def parse_config(text):
    """Parse flat `key = value` config text into a TrainConfig.

    Blank lines and `#` comments are ignored; unknown keys are errors.
    """
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key or not raw:
            raise ValueError("config line %d: expected `key = value`" % lineno)
        if key not in _FIELD_TYPES:
            raise ValueError("config line %d: unknown key %r" % (lineno, key))
        overrides[key] = _parse_value(key, raw)
    return TrainConfig(**overrides).validate()


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def config_to_text(config):
    lines = []
    for f in dataclasses.fields(TrainConfig):
        v = getattr(config, f.name)
        lines.append("%s = %s" % (f.name, repr(v) if isinstance(v, float) else v))
    return "\n".join(lines) + "\n"


@dataclass
class TrainReport:
    trace: list
    wall_time: float
    encoder: object
    projection: object
    embeddings: np.ndarray


def train(graph, config):
    """Run the full training loop and return a TrainReport whose
    embeddings cover the un-augmented input graph.

    Raises RuntimeError with the epoch index if the loss goes non-finite.
    """
    config.validate()
    if graph.n < 2:
        raise ValueError("graph must have at least 2 nodes")
    start = time.perf_counter()

    enc, proj = init_params(
        graph.num_features,
        config.hidden_dim,
        config.out_dim,
        config.proj_dim,
        rng_for(config.seed, "init"),
        mode=config.encoder,
    )
    params = {**enc.as_dict(), **proj.as_dict()}
    adam = AdamState(
        params,
        lr=config.lr,
        weight_decay=config.weight_decay,
        decay_keys=DECAY_KEYS,
    )
    budget = PerturbationBudget(config.delta_a_ratio, config.delta_x_ratio)

    full_knn = None
    if config.lambda2 > 0 and not config.knn_recompute:
        # the similarity view depends only on the raw features, so it is
        # built once and edge-filtered to each sampled subgraph
        full_knn = knn_view(graph.features, config.k)

    m_sub = graph.n if config.subgraph_size == 0 else min(config.subgraph_size, graph.n)
    trace = []
    for epoch in range(config.epochs):
        if m_sub < graph.n:
            base, ids = sample_subgraph(graph, m_sub, rng_for(config.seed, "subgraph", epoch))
        else:
            base, ids = graph.as_view(), np.arange(graph.n)

        aug1 = stochastic_augment(base, config.p_e1, config.p_f1,
                                  rng_for(config.seed, "aug1", epoch))
        aug2 = stochastic_augment(base, config.p_e2, config.p_f2,
                                  rng_for(config.seed, "aug2", epoch))

        adv = None
        if config.lambda1 > 0:
            adv = generate_adversarial_view(
                enc, proj, aug1, aug2, config.tau, budget,
                feature_mode=config.feature_perturb,
                max_dense_n=config.dense_attack_limit,
            )
        sp = None
        if config.lambda2 > 0:
            if config.knn_recompute:
                sp = knn_view(base.features, config.k)
            else:
                sp = View(restrict_adjacency(full_knn.adjacency, ids),
                          base.features, "knn")

        tape = Tape()
        evars = make_vars(tape, enc)
        pvars = make_vars(tape, proj)

        def embed(view):
            x = tape.constant(view.features)
            adj = None if enc.mode == "mlp" else normalize(view.adjacency)
            return encode(tape, evars, enc.mode, x, adj)

        z1 = embed(aug1)
        z2 = embed(aug2)
        z_adv = embed(adv) if adv is not None else None
        z_sp = embed(sp) if sp is not None else None
        anchor = z1 if config.anchor_view == 1 else z2

        terms, total = cross_view_loss(
            tape, z1, z2, z_adv, z_sp, pvars, config.tau,
            config.lambda1, config.lambda2, anchor=anchor,
        )
        if not np.isfinite(terms.total):
            raise RuntimeError("non-finite loss at epoch %d" % epoch)
        tape.backward(total)
        grads = {k: tape.grad(v) for k, v in {**evars, **pvars}.items()}
        adam_step(adam, params, grads)
        trace.append(terms)

    embeddings = encode_graph(enc, graph)
    return TrainReport(trace, time.perf_counter() - start, enc, proj, embeddings)


def export_embeddings(embeddings, path):
    """Write `embeddings.tsv`: node id then the embedding floats, with
    repr-exact precision so a read round-trips bit-for-bit."""
    with open(path, "w") as fh:
        for i, row in enumerate(embeddings):
            fh.write("\t".join([str(i)] + ["%.17g" % v for v in row]) + "\n")


def read_embeddings(path):
    rows = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            rows[int(parts[0])] = [float(t) for t in parts[1:]]
    if sorted(rows) != list(range(len(rows))):
        raise ValueError("%s: node ids are not 0..n-1" % path)
    return np.asarray([rows[i] for i in range(len(rows))])
