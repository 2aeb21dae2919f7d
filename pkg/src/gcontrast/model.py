"""Encoders, projection head, parameter initialization, Adam, and model
checkpoint IO.

Encoder modes:
  gcn    -- Z = H . prelu(H . X . W1) . W2 with H the self-loop-normalized
            adjacency of the view
  mlp    -- Z = prelu(X . W1) . W2, structure-free
  linear -- Z = H . X . W1, the 1-layer no-nonlinearity configuration used
            by the diagnostics module

The projection head is a 2-layer MLP with an ELU hidden activation; it is
used only inside the contrastive loss, never for exported embeddings.
"""

from dataclasses import dataclass

import numpy as np

from .graph import NormalizedAdjacency, normalize
from .tape import Var

ENCODER_MODES = ("gcn", "mlp", "linear")


@dataclass
class EncoderParams:
    W1: np.ndarray
    W2: np.ndarray  # None in linear mode
    slope: np.ndarray  # 0-d prelu slope; None in linear mode
    mode: str = "gcn"

    def as_dict(self):
        out = {"W1": self.W1}
        if self.W2 is not None:
            out["W2"] = self.W2
        if self.slope is not None:
            out["slope"] = self.slope
        return out


@dataclass
class ProjectionParams:
    Wp1: np.ndarray
    bp1: np.ndarray
    Wp2: np.ndarray
    bp2: np.ndarray

    def as_dict(self):
        return {"Wp1": self.Wp1, "bp1": self.bp1, "Wp2": self.Wp2, "bp2": self.bp2}


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(num_features, hidden, out_dim, proj_dim, rng, mode="gcn"):
    """Glorot-uniform weights, zero biases, prelu slope 0.25.

    Deterministic given the rng state; the draw order is W1, W2, Wp1, Wp2.

    Returns
    -------
    (EncoderParams, ProjectionParams)
    """
    if mode not in ENCODER_MODES:
        raise ValueError("unknown encoder mode %r" % (mode,))
    dims = (num_features, hidden, out_dim, proj_dim)
    if any(d < 1 for d in dims):
        raise ValueError("all dimensions must be >= 1, got %s" % (dims,))
    if mode == "linear":
        enc = EncoderParams(_glorot(rng, num_features, out_dim), None, None, mode)
    else:
        enc = EncoderParams(
            _glorot(rng, num_features, hidden),
            _glorot(rng, hidden, out_dim),
            np.asarray(0.25),
            mode,
        )
    proj = ProjectionParams(
        _glorot(rng, out_dim, proj_dim),
        np.zeros(proj_dim),
        _glorot(rng, proj_dim, proj_dim),
        np.zeros(proj_dim),
    )
    return enc, proj


def make_vars(tape, params):
    """Create tape leaves for every array in a parameter container.

    Returns a dict name -> Var aligned with params.as_dict()."""
    return {k: tape.leaf(v) for k, v in params.as_dict().items()}


def encode(tape, enc_vars, mode, x, adjacency):
    """Record the encoder forward pass on the tape.

    Parameters
    ----------
    enc_vars : dict name -> Var (from make_vars)
    x : Var, shape (n, F)
    adjacency : NormalizedAdjacency (sparse constant path), Var of the
        dense raw adjacency (differentiable path, normalized on tape), or
        None (mlp mode ignores structure).

    Returns
    -------
    Var, shape (n, out_dim)
    """
    if mode == "mlp":
        h = tape.prelu(tape.matmul(x, enc_vars["W1"]), enc_vars["slope"])
        return tape.matmul(h, enc_vars["W2"])

    if isinstance(adjacency, NormalizedAdjacency):
        def prop(t):
            return tape.spmm(adjacency.matrix, t)
    elif isinstance(adjacency, Var):
        h_hat = tape.gcn_norm_from_dense_adjacency(adjacency)

        def prop(t):
            return tape.matmul(h_hat, t)
    else:
        raise ValueError("gcn/linear modes need an adjacency")

    if mode == "linear":
        return prop(tape.matmul(x, enc_vars["W1"]))
    if mode != "gcn":
        raise ValueError("unknown encoder mode %r" % (mode,))
    h = tape.prelu(prop(tape.matmul(x, enc_vars["W1"])), enc_vars["slope"])
    return tape.matmul(prop(h), enc_vars["W2"])


def project(tape, proj_vars, z):
    """2-layer projection head g: ELU hidden, linear output."""
    h = tape.elu(tape.add(tape.matmul(z, proj_vars["Wp1"]), proj_vars["bp1"]))
    return tape.add(tape.matmul(h, proj_vars["Wp2"]), proj_vars["bp2"])


def encode_graph(enc, graph_or_view, tape=None):
    """Convenience forward pass over a full un-augmented graph or view,
    returning the embedding matrix as a plain array."""
    from .tape import Tape

    tape = Tape() if tape is None else tape
    evars = make_vars(tape, enc)
    x = tape.constant(graph_or_view.features)
    adj = None
    if enc.mode != "mlp":
        adj = normalize(graph_or_view.adjacency)
    return encode(tape, evars, enc.mode, x, adj).value


class AdamState:
    """Adam with decoupled weight decay applied to the keys listed in
    decay_keys (the W matrices only; slopes and biases are excluded)."""

    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999,
                 eps=1e-8, decay_keys=()):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay_keys = frozenset(decay_keys)


def adam_step(state, params, grads):
    """One Adam update, in place on the arrays in `params`.

    Raises ValueError (aborting before any mutation) when a gradient is
    non-finite. The step counter increments by exactly 1 per call.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient for %r" % (k,))
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        if k in state.decay_keys and state.weight_decay:
            update = update + state.weight_decay * p
        p -= state.lr * update
    return params


def save_model(path, enc, proj):
    """Persist encoder + projection parameters as an .npz checkpoint."""
    arrays = {"mode": np.asarray(enc.mode)}
    arrays.update({"enc_" + k: v for k, v in enc.as_dict().items()})
    arrays.update({"proj_" + k: v for k, v in proj.as_dict().items()})
    np.savez(path, **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        mode = str(data["mode"])
        enc = EncoderParams(
            data["enc_W1"],
            data["enc_W2"] if "enc_W2" in data else None,
            data["enc_slope"] if "enc_slope" in data else None,
            mode,
        )
        proj = ProjectionParams(
            data["proj_Wp1"], data["proj_bp1"], data["proj_Wp2"], data["proj_bp2"]
        )
    return enc, proj
