import math

import numpy as np
import pytest

from eqgnn import autodiff as ad
from eqgnn import discriminator as disc
from eqgnn.graph_data import normalize_adjacency
from eqgnn.optim import ParamCollection


def _rand(n=6, k=3, dh=4, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, k, size=n)
    return dict(y=disc.label_block(y, k), a=rng.integers(0, 2, size=n),
                ad_=rng.integers(0, 2, size=n), yp=ad.softmax_rows(ad.const(rng.normal(size=(n, k)))),
                h=ad.const(rng.normal(size=(n, dh))), rng=rng, k=k, dh=dh, n=n)


def test_input_widths():
    assert disc.input_width("permutation", 3, 5) == 3 + 2 + 3 + 5
    assert disc.input_width("permutation_no_h", 3, 5) == 8
    assert disc.input_width("unpaired", 2, 4) == 2 + 1 + 2 + 4
    assert disc.input_width("debias", 2, 4) == 4
    assert disc.input_width("sp", 2, 4) == 4
    with pytest.raises(ValueError):
        disc.input_width("sp", 2, 0)
    with pytest.raises(ValueError):
        disc.input_width("bogus", 2, 2)


def test_bits_zero_keep_order():
    d = _rand()
    batch = disc.build_permutation_batch(d["y"], d["a"], d["ad_"], d["yp"], d["h"], np.zeros(d["n"], int))
    k = d["k"]
    assert np.array_equal(batch.disc_input.value[:, k], d["a"])
    assert np.array_equal(batch.disc_input.value[:, k + 1], d["ad_"])
    ones = disc.build_permutation_batch(d["y"], d["a"], d["ad_"], d["yp"], d["h"], np.ones(d["n"], int))
    assert np.array_equal(ones.disc_input.value[:, k], d["ad_"])


def test_equal_attributes_make_orderings_identical():
    d = _rand()
    b0 = disc.build_permutation_batch(d["y"], d["a"], d["a"], d["yp"], d["h"], np.zeros(d["n"], int))
    b1 = disc.build_permutation_batch(d["y"], d["a"], d["a"], d["yp"], d["h"], np.ones(d["n"], int))
    assert np.array_equal(b0.disc_input.value, b1.disc_input.value)


def test_fair_bits():
    bits = disc.draw_bits(np.random.default_rng(0), 10_000)
    assert 0.47 <= bits.mean() <= 0.53


def test_zero_head_gives_half():
    d = _rand()
    p = disc.init_discriminator(7, d["rng"], 5)
    p["w_out"].value[:] = 0
    out = disc.disc_forward(p, d["rng"].normal(size=(6, 7)), normalize_adjacency(np.array([[0, 1]]), 6))
    assert np.allclose(out.value, 0.5)


def test_single_node_by_hand():
    p = ParamCollection()
    p.add("W1", np.array([[1.0], [-1.0]]))
    p.add("b1", np.array([[0.5]]))
    p.add("W2", np.array([[2.0]]))
    p.add("b2", np.array([[-0.25]]))
    p.add("w_out", np.array([[1.5]]))
    p.add("b_out", np.array([[0.1]]))
    x = np.array([[2.0, 1.0]])
    z1 = max(2 - 1 + 0.5, 0)
    z2 = max(2 * z1 - 0.25, 0)
    expected = 1 / (1 + math.exp(-(1.5 * z2 + 0.1)))
    out = disc.disc_forward(p, x, normalize_adjacency(np.zeros((0, 2), int), 1))
    assert out.value[0, 0] == pytest.approx(expected)


def test_adv_loss_examples():
    ld, lf = disc.adv_losses(ad.const([[0.5], [0.5]]), np.array([0, 1]))
    assert ld.value == pytest.approx(math.log(2)) and lf.value == pytest.approx(math.log(2))
    ld, lf = disc.adv_losses(ad.const([[0.9]]), np.array([1]))
    assert ld.value == pytest.approx(0.10536, abs=1e-5)
    assert lf.value == pytest.approx(2.30259, abs=1e-5)
    ld, lf = disc.adv_losses(ad.const([[1.0], [0.0]]), np.array([1, 0]))
    assert ld.value < 1e-6 and lf.value > 15


def test_unpaired_untrained_head_is_log2():
    d = _rand()
    p = disc.init_discriminator(disc.input_width("unpaired", d["k"], d["dh"]), d["rng"], 4)
    p["w_out"].value[:] = 0
    adj = normalize_adjacency(np.zeros((0, 2), int), d["n"])
    side = disc.unpaired_side(p, d["y"], d["a"], d["yp"], d["h"], adj, real=True)
    assert side.value == pytest.approx(math.log(2))
    ld, lf = disc.unpaired_adv_losses(p, d["y"], d["a"], d["ad_"], d["yp"], d["h"], adj)
    assert ld.value == pytest.approx(math.log(2)) and lf.value == pytest.approx(math.log(2))


def test_unpaired_averages_its_two_sides():
    d = _rand(seed=4)
    p = disc.init_discriminator(disc.input_width("unpaired", d["k"], d["dh"]), d["rng"], 4)
    adj = normalize_adjacency(np.array([[0, 1], [2, 3]]), d["n"])
    real = disc.unpaired_side(p, d["y"], d["a"], d["yp"], d["h"], adj, real=True)
    fake = disc.unpaired_side(p, d["y"], d["ad_"], d["yp"], d["h"], adj, real=False)
    ld, _ = disc.unpaired_adv_losses(p, d["y"], d["a"], d["ad_"], d["yp"], d["h"], adj)
    assert ld.value == pytest.approx(0.5 * (real.value + fake.value))


def test_paired_loss():
    d = _rand(seed=2)
    p = disc.init_discriminator(disc.input_width("paired", d["k"], d["dh"]), d["rng"], 4)
    adj = normalize_adjacency(np.zeros((0, 2), int), d["n"])
    ld, lf = disc.paired_adv_loss(p, d["y"], d["a"], d["a"], d["yp"], d["h"], adj)
    assert ld.value == 0.0 and lf.value == 0.0
    x_real = ad.concat_cols([d["y"], d["a"].reshape(-1, 1).astype(float), d["yp"], d["h"]])
    x_fake = ad.concat_cols([d["y"], d["ad_"].reshape(-1, 1).astype(float), d["yp"], d["h"]])
    gap = np.mean(disc.disc_forward(p, x_real, adj).value - disc.disc_forward(p, x_fake, adj).value)
    ld, lf = disc.paired_adv_loss(p, d["y"], d["a"], d["ad_"], d["yp"], d["h"], adj)
    assert lf.value == pytest.approx(gap) and ld.value == pytest.approx(-gap)


def test_cov_loss_by_hand():
    yp = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    a = np.array([1, 0, 1, 0])
    at = np.array([0, 0, 1, 1])

    def cov(u, v):
        return np.mean((u - u.mean()) * (v - v.mean()))

    expected = sum((cov(yp[:, k], a) - cov(yp[:, k], at)) ** 2 for k in range(2))
    assert disc.cov_loss(ad.const(yp), a, at).value == pytest.approx(expected, rel=1e-12)
    assert disc.cov_loss(ad.const(yp), a, a).value == 0.0
    assert disc.cov_loss(ad.const(np.full((4, 2), 0.5)), a, at).value == pytest.approx(0.0, abs=1e-18)


def test_sp_rejects_empty_hidden():
    p = disc.init_discriminator(2, np.random.default_rng(0), 3)
    with pytest.raises(ValueError):
        disc.sp_losses(p, ad.const(np.zeros((3, 0))), [0, 1, 0], normalize_adjacency(np.zeros((0, 2), int), 3))


def test_debias_adversary_learns_an_encoded_attribute():
    from eqgnn.optim import adam_step
    rng = np.random.default_rng(0)
    n = 40
    a = rng.integers(0, 2, size=n)
    yp = ad.const(np.stack([a * 0.8 + 0.1, 1 - (a * 0.8 + 0.1)], axis=1))
    y = disc.label_block(rng.integers(0, 2, size=n), 2)
    adj = normalize_adjacency(np.zeros((0, 2), int), n)
    p = disc.init_discriminator(4, rng, 8)
    for _ in range(400):
        ld, _ = disc.debias_losses(p, y, yp, a, adj)
        p.zero_grad()
        ad.backward(ld)
        adam_step(p, lr=0.02)
    assert disc.debias_losses(p, y, yp, a, adj)[0].value < 0.05


@pytest.mark.parametrize("variant", disc.VARIANTS)
def test_dispatch_returns_two_scalars(variant):
    d = _rand(seed=5)
    p = disc.init_discriminator(disc.input_width(variant, d["k"], d["dh"]), d["rng"], 4)
    adj = normalize_adjacency(np.array([[0, 1], [1, 2]]), d["n"])
    ld, lf = disc.adversary_losses(variant, p, adj, d["y"], d["a"], d["ad_"], d["yp"], d["h"],
                                   np.zeros(d["n"], int), np.arange(4))
    assert ld.value.shape == () or ld.value.size == 1
    assert np.isfinite(float(ld.value)) and np.isfinite(float(lf.value))


def test_label_block_masks_hidden_rows():
    b = disc.label_block([1, 0, 2], 3, visible_idx=[0, 2])
    assert b.tolist() == [[0, 1, 0], [0, 0, 0], [0, 0, 1]]
