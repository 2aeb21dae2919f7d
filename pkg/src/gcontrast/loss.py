"""Pairwise contrastive loss and the weighted cross-view objective.

Sign convention: the printed objective is the log of a probability-like
fraction and would be maximized; this module returns its NEGATION so that
minimizing the returned scalar maximizes cross-view agreement. Frozen
closed-form values (e.g. -log(e / (e + 2)) for the 2-node orthonormal
case, log(2n - 1) when all projected rows coincide) pin the convention in
the test suite.
"""

from dataclasses import dataclass

import numpy as np

from .model import project
from .tape import Tape

# Large negative constant masking intra-view self-similarities out of the
# denominator: exp(MASK / tau) underflows to exactly 0 for any sane tau.
MASK = -1e9


@dataclass
class LossTerms:
    """Scalar loss breakdown; total = l_aug + lambda1*l_adv + lambda2*l_sp.
    Terms whose weight is zero are skipped and reported as 0.0."""

    l_aug: float
    l_adv: float
    l_sp: float
    total: float


def _normalized_projection(tape, z, proj_vars):
    h = z if proj_vars is None else project(tape, proj_vars, z)
    return tape.row_l2_normalize(h)


def pairwise_loss(tape, z1, z2, proj_vars, tau):
    """Symmetrized contrastive loss between two views' embeddings.

    Each anchor's positive is its own row in the other view; negatives
    are every other row of both views. Cosine similarities are computed
    on the row-normalized projections at temperature tau.

    Parameters
    ----------
    z1, z2 : Var, shape (n, d)
    proj_vars : dict of projection-head Vars, or None to score raw rows
    tau : float > 0

    Returns
    -------
    Var (0-d scalar), to be minimized.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    n = z1.value.shape[0]
    if z2.value.shape != z1.value.shape:
        raise ValueError("view shape mismatch %s vs %s" % (z1.shape, z2.shape))
    if n < 2:
        raise ValueError("need at least 2 nodes for negatives")

    h1 = _normalized_projection(tape, z1, proj_vars)
    h2 = _normalized_projection(tape, z2, proj_vars)

    s12 = tape.matmul(h1, tape.transpose(h2))
    eye = tape.constant(np.eye(n))
    off_diag = tape.constant(1.0 - np.eye(n))
    mask_diag = tape.constant(MASK * np.eye(n))

    def direction(inter, intra_h):
        intra = tape.matmul(intra_h, tape.transpose(intra_h))
        masked = tape.add(tape.hadamard(intra, off_diag), mask_diag)
        logits = tape.hconcat(tape.scale(inter, 1.0 / tau), tape.scale(masked, 1.0 / tau))
        return tape.sum(tape.logsumexp_rows(logits))

    lse1 = direction(s12, h1)
    lse2 = direction(tape.transpose(s12), h2)
    diag = tape.sum(tape.hadamard(s12, eye))
    total = tape.add(tape.add(lse1, lse2), tape.scale(diag, -2.0 / tau))
    return tape.scale(total, 1.0 / (2.0 * n))


def pairwise_loss_value(Z1, Z2, proj, tau):
    """Loss as a plain float over plain arrays, no gradients.

    proj may be ProjectionParams or None (score raw embeddings)."""
    from .model import make_vars

    tape = Tape()
    pv = None if proj is None else make_vars(tape, proj)
    return float(
        pairwise_loss(tape, tape.constant(Z1), tape.constant(Z2), pv, tau).value
    )


def cross_view_loss(tape, z1, z2, z_adv, z_sp, proj_vars, tau, lam1, lam2,
                    anchor=None):
    """Three-term objective: agreement between the two stochastic views
    plus weighted agreement of the anchor with the adversarial and the
    feature-similarity views.

    z_adv (resp. z_sp) may be None only when lam1 (resp. lam2) is 0; the
    skipped term is reported as 0.0. `anchor` defaults to z1.

    Returns
    -------
    (LossTerms, Var)
        Float breakdown and the scalar total on the tape.
    """
    if lam1 < 0 or lam2 < 0:
        raise ValueError("loss weights must be >= 0")
    if lam1 > 0 and z_adv is None:
        raise ValueError("lam1 > 0 requires an adversarial view")
    if lam2 > 0 and z_sp is None:
        raise ValueError("lam2 > 0 requires a similarity view")
    anchor = z1 if anchor is None else anchor

    l_aug = pairwise_loss(tape, z1, z2, proj_vars, tau)
    total = l_aug
    l_adv = l_sp = None
    if lam1 > 0:
        l_adv = pairwise_loss(tape, anchor, z_adv, proj_vars, tau)
        total = tape.add(total, tape.scale(l_adv, lam1))
    if lam2 > 0:
        l_sp = pairwise_loss(tape, anchor, z_sp, proj_vars, tau)
        total = tape.add(total, tape.scale(l_sp, lam2))

    terms = LossTerms(
        l_aug=float(l_aug.value),
        l_adv=float(l_adv.value) if l_adv is not None else 0.0,
        l_sp=float(l_sp.value) if l_sp is not None else 0.0,
        total=float(total.value),
    )
    return terms, total
