"""The adversary and every regulariser it can be trained with.

Variants (selected by name):

``permutation``       pairs (A, Ã) in a random order, D guesses the order
``permutation_no_h``  same, without the hidden representation in D's input
``unpaired``          D tells real-attribute rows from dummy-attribute rows
``paired``            mean sigmoid score difference, real minus dummy
``debias``            D predicts A from (Y, Ŷ)
``sp``                D predicts A from h alone

Every adversarial function returns ``(loss_for_D, loss_for_F)``; both are
minimised by their respective players.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .optim import ParamCollection, glorot

VARIANTS = ("permutation", "permutation_no_h", "unpaired", "paired", "debias", "sp")
USES_DUMMY = {"permutation", "permutation_no_h", "unpaired", "paired"}


def input_width(variant: str, class_count: int, hidden_dim: int) -> int:
    if variant not in VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}; choose from {VARIANTS}")
    k = class_count
    if variant == "permutation":
        return k + 2 + k + hidden_dim
    if variant == "permutation_no_h":
        return k + 2 + k
    if variant in ("unpaired", "paired"):
        return k + 1 + k + hidden_dim
    if variant == "debias":
        return k + k
    if hidden_dim <= 0:
        raise ValueError("the sp adversary reads only h; hidden width must be positive")
    return hidden_dim


def init_discriminator(in_dim: int, rng: np.random.Generator, hidden: int = 64) -> ParamCollection:
    if in_dim <= 0:
        raise ValueError("discriminator input width must be positive")
    p = ParamCollection()
    p.add("W1", glorot(rng, in_dim, hidden))
    p.add("b1", np.zeros((1, hidden)))
    p.add("W2", glorot(rng, hidden, hidden))
    p.add("b2", np.zeros((1, hidden)))
    p.add("w_out", glorot(rng, hidden, 1))
    p.add("b_out", np.zeros((1, 1)))
    return p


def disc_forward(params: ParamCollection, inputs, adjacency: sp.spmatrix) -> ad.Var:
    """Two graph convolutions with rectifiers, then a sigmoid unit: n x 1 probabilities."""
    z = ad.relu(ad.add_bias(ad.sparse_matmul(adjacency, ad.matmul(inputs, params["W1"])), params["b1"]))
    z = ad.relu(ad.add_bias(ad.sparse_matmul(adjacency, ad.matmul(z, params["W2"])), params["b2"]))
    return ad.sigmoid(ad.add_bias(ad.matmul(z, params["w_out"]), params["b_out"]))


def label_block(labels, class_count: int, visible_idx=None) -> np.ndarray:
    """One-hot labels; rows outside ``visible_idx`` are left all-zero."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, class_count))
    rows = np.arange(labels.size) if visible_idx is None else np.asarray(visible_idx)
    out[rows, labels[rows]] = 1.0
    return out


def _col(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1, 1)


@dataclass
class PermutationBatch:
    bits: np.ndarray
    first_attr: np.ndarray
    second_attr: np.ndarray
    disc_input: ad.Var


def draw_bits(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n)


def build_permutation_batch(y_onehot, a, a_dummy, y_prob, hidden, bits) -> PermutationBatch:
    """Order each (A_i, Ã_i) pair by ``bits``: 0 keeps (A, Ã), 1 gives (Ã, A).

    ``hidden=None`` builds the input without the hidden block.
    """
    a = np.asarray(a)
    a_dummy = np.asarray(a_dummy)
    bits = np.asarray(bits)
    first = np.where(bits == 0, a, a_dummy)
    second = np.where(bits == 0, a_dummy, a)
    parts = [y_onehot, _col(first), _col(second), y_prob]
    if hidden is not None:
        parts.append(hidden)
    return PermutationBatch(bits, first, second, ad.concat_cols(parts))


def adv_losses(l_hat: ad.Var, bits, idx=None) -> tuple[ad.Var, ad.Var]:
    """``BCE(l̂, l)`` for D and the flipped-target ``BCE(l̂, 1 - l)`` for F."""
    bits = np.asarray(bits, dtype=np.float64)
    if idx is not None:
        l_hat = ad.take_rows(l_hat, idx)
        bits = bits[np.asarray(idx)]
    return ad.loss_bce(l_hat, bits), ad.loss_bce(l_hat, 1.0 - bits)


def _unpaired_input(y_onehot, attr, y_prob, hidden):
    return ad.concat_cols([y_onehot, _col(attr), y_prob, hidden])


def unpaired_side(params, y_onehot, attr, y_prob, hidden, adjacency, real: bool, idx=None) -> ad.Var:
    """BCE of D scoring one batch as real (target 1) or dummy (target 0)."""
    p = disc_forward(params, _unpaired_input(y_onehot, attr, y_prob, hidden), adjacency)
    if idx is not None:
        p = ad.take_rows(p, idx)
    return ad.loss_bce(p, np.full(p.shape, 1.0 if real else 0.0))


def unpaired_adv_losses(params, y_onehot, a, a_dummy, y_prob, hidden, adjacency, idx=None):
    real = disc_forward(params, _unpaired_input(y_onehot, a, y_prob, hidden), adjacency)
    fake = disc_forward(params, _unpaired_input(y_onehot, a_dummy, y_prob, hidden), adjacency)
    if idx is not None:
        real, fake = ad.take_rows(real, idx), ad.take_rows(fake, idx)
    ones, zeros = np.ones(real.shape), np.zeros(real.shape)
    loss_d = 0.5 * (ad.loss_bce(real, ones) + ad.loss_bce(fake, zeros))
    loss_f = 0.5 * (ad.loss_bce(real, zeros) + ad.loss_bce(fake, ones))
    return loss_d, loss_f


def paired_adv_loss(params, y_onehot, a, a_dummy, y_prob, hidden, adjacency, idx=None):
    """Mean of σ(D(real)) − σ(D(dummy)); D ascends it, F descends it."""
    real = disc_forward(params, _unpaired_input(y_onehot, a, y_prob, hidden), adjacency)
    fake = disc_forward(params, _unpaired_input(y_onehot, a_dummy, y_prob, hidden), adjacency)
    if idx is not None:
        real, fake = ad.take_rows(real, idx), ad.take_rows(fake, idx)
    gap = ad.mean_all(real - fake)
    return -gap, gap


def cov_loss(y_prob, a, a_dummy, idx=None) -> ad.Var:
    """Squared norm of cov(Ŷ_k, A) − cov(Ŷ_k, Ã) over classes k.

    Population covariances.  Since the attribute difference is centred,
    centring Ŷ is unnecessary: sum_i (Ŷ_ik − mean) u_i = sum_i Ŷ_ik u_i.
    """
    a = np.asarray(a, dtype=np.float64)
    a_dummy = np.asarray(a_dummy, dtype=np.float64)
    if idx is not None:
        y_prob = ad.take_rows(y_prob, idx)
        a, a_dummy = a[np.asarray(idx)], a_dummy[np.asarray(idx)]
    n = a.size
    u = (a - a.mean()) - (a_dummy - a_dummy.mean())
    diff = ad.matmul(ad.const(u.reshape(1, -1) / n), y_prob)
    return ad.sum_all(ad.square(diff))


def debias_losses(params, y_onehot, y_prob, a, adjacency, idx=None):
    """Adversary predicts A from (Y, Ŷ); F is trained against the flipped target."""
    p = disc_forward(params, ad.concat_cols([y_onehot, y_prob]), adjacency)
    return _attr_prediction_losses(p, a, idx)


def sp_losses(params, hidden, a, adjacency, idx=None):
    """Adversary predicts A from h alone."""
    if hidden.shape[1] == 0:
        raise ValueError("the sp adversary needs a non-empty hidden representation")
    p = disc_forward(params, hidden, adjacency)
    return _attr_prediction_losses(p, a, idx)


def _attr_prediction_losses(p, a, idx):
    a = np.asarray(a, dtype=np.float64)
    if idx is not None:
        p = ad.take_rows(p, idx)
        a = a[np.asarray(idx)]
    return ad.loss_bce(p, a), ad.loss_bce(p, 1.0 - a)


def adversary_losses(variant: str, params: ParamCollection, adjacency, y_onehot, a, a_dummy,
                     y_prob, hidden, bits, idx=None):
    """Dispatch on ``variant``; returns ``(loss_for_D, loss_for_F)``."""
    if variant == "permutation":
        batch = build_permutation_batch(y_onehot, a, a_dummy, y_prob, hidden, bits)
        return adv_losses(disc_forward(params, batch.disc_input, adjacency), bits, idx)
    if variant == "permutation_no_h":
        batch = build_permutation_batch(y_onehot, a, a_dummy, y_prob, None, bits)
        return adv_losses(disc_forward(params, batch.disc_input, adjacency), bits, idx)
    if variant == "unpaired":
        return unpaired_adv_losses(params, y_onehot, a, a_dummy, y_prob, hidden, adjacency, idx)
    if variant == "paired":
        return paired_adv_loss(params, y_onehot, a, a_dummy, y_prob, hidden, adjacency, idx)
    if variant == "debias":
        return debias_losses(params, y_onehot, y_prob, a, adjacency, idx)
    if variant == "sp":
        return sp_losses(params, hidden, a, adjacency, idx)
    raise ValueError(f"unknown loss variant {variant!r}; choose from {VARIANTS}")
