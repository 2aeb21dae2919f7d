"""Minimal reverse-mode gradient engine over dense float64 matrices.

Supports exactly the operations the encoder, contrastive loss, and
gradient-based attack need, including gradients with respect to a dense
adjacency matrix through the GCN normalization. Records are kept on an
append-only tape; the backward pass walks it in strict reverse order and
accumulates adjoints per variable.

A Tape is single-owner while recording. Gradients returned by backward()
are plain arrays and safe to share.
"""

import numpy as np
import scipy.sparse as sp


class Var:
    """A node on the tape: a cached forward value plus an id. `watched`
    variables accumulate adjoints; constants do not."""

    __slots__ = ("value", "idx", "watched")

    def __init__(self, value, idx, watched):
        self.value = value
        self.idx = idx
        self.watched = watched

    @property
    def shape(self):
        return self.value.shape


class Tape:
    def __init__(self, check_finite=False):
        self.records = []  # (out Var, backward closure)
        self._n_vars = 0
        self._adjoints = None
        self.check_finite = check_finite

    # ------------------------------------------------------------------
    # variable creation

    def _new(self, value, watched):
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise FloatingPointError("non-finite value recorded on tape")
        var = Var(value, self._n_vars, watched)
        self._n_vars += 1
        return var

    def leaf(self, value):
        """A differentiable input (parameter, adjacency, features)."""
        return self._new(value, True)

    def constant(self, value):
        """A non-differentiable input; receives no adjoint."""
        return self._new(value, False)

    def _record(self, value, inputs, backward):
        """backward(g) must return a gradient array per input, aligned
        with `inputs`; entries for unwatched inputs may be None."""
        out = self._new(value, True)
        self.records.append((out, inputs, backward))
        return out

    # ------------------------------------------------------------------
    # operations

    def matmul(self, a, b):
        if a.value.shape[1] != b.value.shape[0]:
            raise ValueError("matmul shape mismatch %s @ %s" % (a.shape, b.shape))
        return self._record(
            a.value @ b.value,
            (a, b),
            lambda g: (g @ b.value.T, a.value.T @ g),
        )

    def spmm(self, s, b):
        """Sparse-constant @ dense: s is a scipy CSR held outside the
        tape; gradients flow only to the dense operand."""
        if not sp.issparse(s):
            raise ValueError("spmm expects a scipy sparse matrix")
        st = s.T.tocsr()
        return self._record(s @ b.value, (b,), lambda g: (st @ g,))

    def add(self, a, b):
        """Elementwise sum; b may also be a (cols,) or (1, cols) row
        vector broadcast over rows."""
        bshape = b.value.shape
        if bshape == a.value.shape:
            return self._record(a.value + b.value, (a, b), lambda g: (g, g))
        if bshape in ((a.value.shape[1],), (1, a.value.shape[1])):
            return self._record(
                a.value + b.value,
                (a, b),
                lambda g: (g, g.sum(axis=0).reshape(bshape)),
            )
        raise ValueError("add shape mismatch %s + %s" % (a.shape, b.shape))

    def hadamard(self, a, b):
        if a.value.shape != b.value.shape:
            raise ValueError("hadamard shape mismatch %s * %s" % (a.shape, b.shape))
        return self._record(
            a.value * b.value,
            (a, b),
            lambda g: (g * b.value, g * a.value),
        )

    def scale(self, a, c):
        c = float(c)
        return self._record(a.value * c, (a,), lambda g: (g * c,))

    def prelu(self, a, slope):
        """Leaky rectifier with a learnable scalar slope (a 0-d Var)."""
        s = float(slope.value)
        if not np.isfinite(s):
            raise ValueError("prelu slope must be finite")
        pos = a.value > 0
        value = np.where(pos, a.value, s * a.value)

        def backward(g):
            ga = g * np.where(pos, 1.0, s)
            gs = np.asarray(np.sum(g * np.where(pos, 0.0, a.value)))
            return ga, gs

        return self._record(value, (a, slope), backward)

    def elu(self, a):
        pos = a.value > 0
        expm = np.expm1(np.minimum(a.value, 0.0))
        value = np.where(pos, a.value, expm)
        return self._record(
            value, (a,), lambda g: (g * np.where(pos, 1.0, expm + 1.0),)
        )

    def row_l2_normalize(self, a):
        norms = np.sqrt(np.sum(a.value**2, axis=1, keepdims=True))
        safe = np.maximum(norms, 1e-30)
        y = a.value / safe

        def backward(g):
            return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / safe,)

        return self._record(y, (a,), backward)

    def gcn_norm_from_dense_adjacency(self, a):
        """H = D^{-1/2} (A + I) D^{-1/2} with D from continuous row sums
        plus one, so gradients flow through the normalization and the
        message passing. Caller supplies a symmetric nonnegative A; the
        backward rule itself is exact for any dense A."""
        n = a.value.shape[0]
        if a.value.shape != (n, n):
            raise ValueError("adjacency must be square")
        d = a.value.sum(axis=1) + 1.0
        if np.any(d <= 0):
            raise ValueError("nonpositive augmented degree")
        p = d**-0.5
        s = a.value + np.eye(n)
        value = s * np.outer(p, p)

        def backward(g):
            w = g * s
            u = w @ p + w.T @ p
            r = -0.5 * u * p**3
            return (np.outer(p, p) * g + r[:, None],)

        return self._record(value, (a,), backward)

    def transpose(self, a):
        return self._record(a.value.T.copy(), (a,), lambda g: (g.T,))

    def sum(self, a):
        return self._record(
            np.asarray(np.sum(a.value)),
            (a,),
            lambda g: (np.broadcast_to(g, a.value.shape).copy(),),
        )

    def logsumexp_rows(self, a):
        """Row-wise log(sum(exp(.))) with max subtraction, shape (n, 1)."""
        m = np.max(a.value, axis=1, keepdims=True)
        value = m + np.log(np.sum(np.exp(a.value - m), axis=1, keepdims=True))
        softmax = np.exp(a.value - value)
        return self._record(value, (a,), lambda g: (g * softmax,))

    def gather_rows(self, a, idx):
        idx = np.asarray(idx, dtype=np.int64)

        def backward(g):
            ga = np.zeros_like(a.value)
            np.add.at(ga, idx, g)
            return (ga,)

        return self._record(a.value[idx], (a,), backward)

    def hconcat(self, a, b):
        if a.value.shape[0] != b.value.shape[0]:
            raise ValueError("hconcat row mismatch %s | %s" % (a.shape, b.shape))
        ca = a.value.shape[1]
        return self._record(
            np.concatenate([a.value, b.value], axis=1),
            (a, b),
            lambda g: (g[:, :ca], g[:, ca:]),
        )

    # ------------------------------------------------------------------
    # backward

    def backward(self, loss):
        """Accumulate adjoints for every watched variable reachable from
        `loss` (a recorded scalar). Unreached leaves read back as zero."""
        if loss.value.size != 1:
            raise ValueError("loss must be a scalar")
        adjoints = {loss.idx: np.ones_like(loss.value)}
        for out, inputs, backward in reversed(self.records):
            g = adjoints.get(out.idx)
            if g is None:
                continue
            grads = backward(g)
            for var, grad in zip(inputs, grads):
                if not var.watched or grad is None:
                    continue
                if var.idx in adjoints:
                    adjoints[var.idx] = adjoints[var.idx] + grad
                else:
                    adjoints[var.idx] = grad
        self._adjoints = adjoints

    def grad(self, var):
        """Adjoint of `var` from the last backward() call; zeros if the
        variable never reached the loss."""
        if self._adjoints is None:
            raise RuntimeError("backward() has not been run")
        g = self._adjoints.get(var.idx)
        if g is None:
            return np.zeros_like(var.value)
        return g


def finite_difference_check(build, arrays, h=1e-6, samples=50, rng=None):
    """Compare tape gradients against central finite differences.

    Parameters
    ----------
    build : callable(tape, *vars) -> Var
        Deterministic closure constructing a scalar loss from leaf Vars
        created for each array in `arrays`.
    arrays : sequence of ndarray
        Leaf values; each gets `samples` coordinates checked.
    h : float
        Central-difference step, must be > 0.

    Returns
    -------
    float
        max over sampled entries of
        |analytic - central| / (|central| + 1e-8).
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    rng = np.random.default_rng(0) if rng is None else rng
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    tape = Tape()
    leaves = [tape.leaf(a.copy()) for a in arrays]
    loss = build(tape, *leaves)
    tape.backward(loss)
    analytic = [tape.grad(v) for v in leaves]

    def value_at(perturbed):
        t = Tape()
        vs = [t.leaf(a) for a in perturbed]
        return float(build(t, *vs).value)

    worst = 0.0
    for ai, arr in enumerate(arrays):
        size = arr.size
        take = min(samples, size)
        coords = rng.choice(size, size=take, replace=False)
        for flat in coords:
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[ai].flat[flat] += h
            minus[ai].flat[flat] -= h
            central = (value_at(plus) - value_at(minus)) / (2 * h)
            err = abs(analytic[ai].flat[flat] - central) / (abs(central) + 1e-8)
            worst = max(worst, err)
    return worst
