"""Contrastive loss: frozen closed forms, scalar-loop oracle, composition."""

import numpy as np
import pytest

from gcontrast.loss import MASK, cross_view_loss, pairwise_loss, pairwise_loss_value
from gcontrast.model import init_params, make_vars
from gcontrast.tape import Tape

RNG = np.random.default_rng(2024)


def loss_oracle(Z1, Z2, tau):
    """Direct per-anchor loop over the printed objective, negated.

    No projection head: scores are cosines of the raw rows. Intra-view
    self pairs are excluded from the denominator.
    """
    def unit(Z):
        return Z / np.linalg.norm(Z, axis=1, keepdims=True)

    H1, H2 = unit(Z1), unit(Z2)
    n = H1.shape[0]

    def direction(A, B):
        total = 0.0
        for i in range(n):
            pos = np.exp(A[i] @ B[i] / tau)
            denom = 0.0
            for j in range(n):
                denom += np.exp(A[i] @ B[j] / tau)
                if j != i:
                    denom += np.exp(A[i] @ A[j] / tau)
            total += -np.log(pos / denom)
        return total

    return (direction(H1, H2) + direction(H2, H1)) / (2 * n)


def test_frozen_orthonormal_two_nodes():
    Z = np.eye(2)
    got = pairwise_loss_value(Z, Z, None, 1.0)
    want = -np.log(np.e / (np.e + 2.0))
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(0.5514447139320511, abs=1e-12)


def test_frozen_identical_rows_gives_log_2n_minus_1():
    for n in (2, 3, 7):
        Z = np.tile(RNG.standard_normal(5), (n, 1))
        got = pairwise_loss_value(Z, Z.copy(), None, 0.5)
        assert got == pytest.approx(np.log(2 * n - 1), abs=1e-10)


def test_matches_scalar_loop_oracle():
    for trial in range(5):
        n = int(RNG.integers(3, 9))
        Z1 = RNG.standard_normal((n, 6))
        Z2 = RNG.standard_normal((n, 6))
        tau = float(RNG.uniform(0.2, 1.5))
        got = pairwise_loss_value(Z1, Z2, None, tau)
        assert got == pytest.approx(loss_oracle(Z1, Z2, tau), rel=1e-10)


def test_projection_head_applied_before_scoring():
    rng = np.random.default_rng(3)
    _, proj = init_params(6, 6, 4, 3, rng)
    Z1 = rng.standard_normal((5, 4))
    Z2 = rng.standard_normal((5, 4))

    def head(Z):
        h = Z @ proj.Wp1 + proj.bp1
        h = np.where(h >= 0, h, np.expm1(h))
        return h @ proj.Wp2 + proj.bp2

    got = pairwise_loss_value(Z1, Z2, proj, 0.7)
    want = loss_oracle(head(Z1), head(Z2), 0.7)
    assert got == pytest.approx(want, rel=1e-10)


def test_symmetry_in_view_order():
    Z1 = RNG.standard_normal((6, 4))
    Z2 = RNG.standard_normal((6, 4))
    a = pairwise_loss_value(Z1, Z2, None, 0.5)
    b = pairwise_loss_value(Z2, Z1, None, 0.5)
    assert a == pytest.approx(b, rel=1e-13)


def test_permutation_equivariance():
    Z1 = RNG.standard_normal((8, 5))
    Z2 = RNG.standard_normal((8, 5))
    perm = np.random.default_rng(0).permutation(8)
    a = pairwise_loss_value(Z1, Z2, None, 0.4)
    b = pairwise_loss_value(Z1[perm], Z2[perm], None, 0.4)
    assert a == pytest.approx(b, rel=1e-12)


def test_perfect_agreement_beats_mismatch():
    Z = RNG.standard_normal((10, 6))
    aligned = pairwise_loss_value(Z, Z.copy(), None, 0.5)
    rolled = pairwise_loss_value(Z, np.roll(Z, 3, axis=0), None, 0.5)
    assert aligned < rolled


def test_validation_errors():
    Z = np.eye(3)
    with pytest.raises(ValueError):
        pairwise_loss_value(Z, Z, None, 0.0)
    with pytest.raises(ValueError):
        pairwise_loss_value(Z, Z, None, -1.0)
    with pytest.raises(ValueError):
        pairwise_loss_value(Z, np.eye(4), None, 1.0)
    with pytest.raises(ValueError):
        pairwise_loss_value(np.ones((1, 3)), np.ones((1, 3)), None, 1.0)


def test_mask_kills_self_similarity():
    # exp(MASK / tau) must underflow to exactly 0.0
    assert np.exp(MASK / 0.05) == 0.0
    assert np.exp(MASK / 10.0) == 0.0


def test_cross_view_composition():
    n, d = 6, 4
    Z1 = RNG.standard_normal((n, d))
    Z2 = RNG.standard_normal((n, d))
    Za = RNG.standard_normal((n, d))
    Zs = RNG.standard_normal((n, d))
    tau, lam1, lam2 = 0.5, 0.8, 1.3

    tape = Tape()
    v1, v2 = tape.constant(Z1), tape.constant(Z2)
    va, vs = tape.constant(Za), tape.constant(Zs)
    terms, total = cross_view_loss(tape, v1, v2, va, vs, None, tau, lam1, lam2)

    l_aug = pairwise_loss_value(Z1, Z2, None, tau)
    l_adv = pairwise_loss_value(Z1, Za, None, tau)
    l_sp = pairwise_loss_value(Z1, Zs, None, tau)
    assert terms.l_aug == pytest.approx(l_aug, rel=1e-12)
    assert terms.l_adv == pytest.approx(l_adv, rel=1e-12)
    assert terms.l_sp == pytest.approx(l_sp, rel=1e-12)
    assert terms.total == pytest.approx(l_aug + lam1 * l_adv + lam2 * l_sp,
                                        rel=1e-12)
    assert float(total.value) == terms.total


def test_cross_view_anchor_selection():
    n, d = 5, 3
    Z1 = RNG.standard_normal((n, d))
    Z2 = RNG.standard_normal((n, d))
    Za = RNG.standard_normal((n, d))

    tape = Tape()
    terms, _ = cross_view_loss(tape, tape.constant(Z1), tape.constant(Z2),
                               tape.constant(Za), None, None, 0.5, 1.0, 0.0,
                               anchor=tape.constant(Z2))
    assert terms.l_adv == pytest.approx(
        pairwise_loss_value(Z2, Za, None, 0.5), rel=1e-12)


def test_cross_view_zero_weights_skip_terms():
    n, d = 5, 3
    Z1 = RNG.standard_normal((n, d))
    Z2 = RNG.standard_normal((n, d))

    tape = Tape()
    terms, total = cross_view_loss(tape, tape.constant(Z1),
                                   tape.constant(Z2), None, None, None,
                                   0.5, 0.0, 0.0)
    assert terms.l_adv == 0.0 and terms.l_sp == 0.0
    assert terms.total == terms.l_aug
    assert float(total.value) == pytest.approx(
        pairwise_loss_value(Z1, Z2, None, 0.5), rel=1e-14)


def test_cross_view_missing_view_for_positive_weight():
    Z = np.eye(4)
    tape = Tape()
    with pytest.raises(ValueError):
        cross_view_loss(tape, tape.constant(Z), tape.constant(Z), None, None,
                        None, 0.5, 1.0, 0.0)
