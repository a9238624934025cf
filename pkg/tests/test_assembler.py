import math

import numpy as np
import pytest

from nmtree import autograd as ag
from nmtree.assembler import (
    ModuleKind,
    assembler_logits,
    assign_modules,
    gumbel_decision,
    gumbel_from_uniform,
    sample_gumbel,
    straight_through_mix,
)
from nmtree.autograd import ShapeError, Tensor
from nmtree.encoder import embed_tree, encode_bidirectional
from nmtree.gradcheck import finite_difference, relative_error
from nmtree.parsing import Token, build_tree

from conftest import random_model, random_tree, zero_store

EULER_GAMMA = 0.5772156649


def test_gumbel_known_values():
    assert gumbel_from_uniform(math.exp(-1)) == pytest.approx(0.0, abs=1e-15)
    low = gumbel_from_uniform(0.0)
    assert math.isfinite(low) and low < -3
    assert math.isfinite(gumbel_from_uniform(1.0))


def test_gumbel_mean():
    rng = np.random.default_rng(0)
    mean = np.mean([sample_gumbel(rng) for _ in range(100_000)])
    assert abs(mean - EULER_GAMMA) < 0.01


def test_gumbel_max_frequency():
    rng = np.random.default_rng(7)
    logits = Tensor(np.log([0.7, 0.3]))
    hits = 0
    for _ in range(10_000):
        z, _ = gumbel_decision(logits, [sample_gumbel(rng), sample_gumbel(rng)], 1.0)
        hits += int(z[0] == 1.0)
    assert abs(hits / 10_000 - 0.7) < 0.02


def test_decision_examples():
    z, _ = gumbel_decision(Tensor([2.0, 1.0]), [0.0, 0.0], 1.0)
    np.testing.assert_array_equal(z, [1.0, 0.0])
    _, soft = gumbel_decision(Tensor(np.log([0.5, 0.5])), [0.0, 0.0], 1.0)
    np.testing.assert_allclose(soft.data, [0.5, 0.5])
    z, soft = gumbel_decision(Tensor([0.3, -1.0]), None, 1.0, "infer")
    np.testing.assert_array_equal(z, [1.0, 0.0])
    np.testing.assert_array_equal(soft.data, z)


def test_decision_rejects_bad_tau():
    for tau in (0.0, -1.0):
        with pytest.raises(ValueError):
            gumbel_decision(Tensor([0.0, 0.0]), [0.0, 0.0], tau)


@pytest.mark.parametrize("seed", range(20))
def test_decision_invariants_and_shift(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=2) * 3
    g = rng.gumbel(size=2)
    tau = float(rng.uniform(0.1, 1.0))
    z, soft = gumbel_decision(Tensor(logits), g, tau)
    assert sorted(z.tolist()) == [0.0, 1.0]
    assert abs(soft.data.sum() - 1.0) < 1e-9 and np.all(soft.data > 0)
    assert np.argmax(soft.data) == np.argmax(z)
    z2, soft2 = gumbel_decision(Tensor(logits + 5.3), g, tau)
    np.testing.assert_array_equal(z, z2)
    np.testing.assert_allclose(soft.data, soft2.data, atol=1e-12)


def test_assembler_logits():
    model = random_model()
    e, h = Tensor(np.ones(16)), Tensor(np.ones(32))
    a = assembler_logits(model.store, e, h).data
    np.testing.assert_array_equal(a, assembler_logits(model.store, e, h).data)
    h2 = Tensor(np.ones(32) + 1e-3 * np.arange(32))
    assert not np.array_equal(a, assembler_logits(model.store, e, h2).data)
    with pytest.raises(ShapeError):
        assembler_logits(model.store, e, Tensor(np.ones(5)))
    zero_store(model.store)
    np.testing.assert_array_equal(assembler_logits(model.store, e, h).data, [0.0, 0.0])


def test_straight_through_forward_selects_branch():
    b0, b1 = Tensor([1.0, 2.0]), Tensor([5.0, 7.0])
    soft = ag.softmax(Tensor([0.2, 0.1], requires_grad=True))
    out = straight_through_mix(np.array([1.0, 0.0]), soft, [b0, b1])
    np.testing.assert_array_equal(out.data, b0.data)


def test_straight_through_degenerate_case():
    b0, b1 = Tensor([1.0, 2.0]), Tensor([5.0, 7.0])
    w = np.array([1.0, 0.0])
    hard = straight_through_mix(w, Tensor(w), [b0, b1], "train")
    soft = straight_through_mix(w, Tensor(w), [b0, b1], "soft")
    np.testing.assert_array_equal(hard.data, soft.data)


def test_straight_through_gradient_matches_soft_finite_difference():
    rng = np.random.default_rng(3)
    b0, b1 = rng.normal(size=4), rng.normal(size=4)
    w = rng.normal(size=4)
    g = rng.gumbel(size=2)
    lv = rng.normal(size=2)

    def loss(logits, mode):
        z, soft = gumbel_decision(logits, g, 0.7)
        return ag.sum(straight_through_mix(z, soft, [Tensor(b0), Tensor(b1)], mode) * Tensor(w))

    logits = Tensor(lv.copy(), requires_grad=True)
    loss(logits, "train").backward()
    numeric = finite_difference(lambda: loss(Tensor(lv), "soft").item(), lv)
    assert relative_error(logits.grad, numeric).max() < 1e-3


# -------------------------------------------------------------- structure

def _assign(model, tree, mode="train", noise=None):
    E = embed_tree(model.store, tree, model.vocab)
    H = encode_bidirectional(model.store, tree, E)
    rng = np.random.default_rng(0) if noise is None else noise
    return assign_modules(model.store, tree, E, H, 1.0, rng, mode)


def test_single_node_tree():
    a = _assign(random_model(), build_tree([Token(1, "ball", "NOUN", 0, "root")]))
    assert a.kinds == {1: ModuleKind.SINGLE} and not a.decisions


def test_chain_samples_middle_only():
    tree = build_tree([Token(1, "red", "ADJ", 2, "amod"), Token(2, "ball", "NOUN", 3, "pobj"),
                       Token(3, "box", "NOUN", 0, "root")])
    a = _assign(random_model(), tree)
    assert a.kinds[1] == a.kinds[3] == ModuleKind.SINGLE
    assert a.kinds[2] in (ModuleKind.SUM, ModuleKind.COMP)
    assert list(a.decisions) == [2]


def test_star_draws_nothing():
    tree = build_tree([Token(1, "ball", "NOUN", 0, "root")] +
                      [Token(i, "red", "ADJ", 1, "amod") for i in (2, 3, 4)])
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    a = _assign(random_model(), tree, noise=rng)
    assert set(a.kinds.values()) == {ModuleKind.SINGLE} and not a.decisions
    assert rng.bit_generator.state == before


@pytest.mark.parametrize("seed", range(5))
def test_infer_is_pure(seed):
    model = random_model(seed)
    tree = random_tree(np.random.default_rng(seed), n=8)
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    a = _assign(model, tree, "infer", rng)
    b = _assign(model, tree, "infer", rng)
    assert rng.bit_generator.state == before
    assert a.kinds == b.kinds
    for n, d in a.decisions.items():
        assert d.noise is None
        np.testing.assert_array_equal(d.z, d.z_soft.data)


def test_train_mode_needs_noise():
    tree = random_tree(np.random.default_rng(0), n=6)
    model = random_model()
    E = embed_tree(model.store, tree, model.vocab)
    H = encode_bidirectional(model.store, tree, E)
    with pytest.raises(ValueError):
        assign_modules(model.store, tree, E, H, 1.0, None, "train")
