import numpy as np
import pytest

from nmtree import autograd as ag
from nmtree.autograd import ShapeError, Tensor
from nmtree.config import Config
from nmtree.encoder import (
    childsum_step,
    embed_node,
    embed_tree,
    encode_bidirectional,
    encode_tree,
    node_context,
)
from nmtree.gradcheck import finite_difference, relative_error
from nmtree.model import NMTree
from nmtree.parsing import Token, build_tree

from conftest import random_model, random_tree, small_vocab, zero_store


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_cell(x, h_prev, c_prev, W, U, b):
    """Textbook LSTM step with separate gate blocks (i, f, o, u)."""
    i = _sig(W["i"] @ x + U["i"] @ h_prev + b["i"])
    f = _sig(W["f"] @ x + U["f"] @ h_prev + b["f"])
    o = _sig(W["o"] @ x + U["o"] @ h_prev + b["o"])
    u = np.tanh(W["u"] @ x + U["u"] @ h_prev + b["u"])
    c = i * u + f * c_prev
    return c, o * np.tanh(c)


# -------------------------------------------------------------- embeddings

def test_embedding_dims_and_zero_case():
    config = Config(d_h=4, attn_hidden=4)
    model = NMTree(config, small_vocab())
    e = embed_node(model.store, (1, 1, 1))
    assert e.shape == (400,)
    zero_store(model.store)
    np.testing.assert_array_equal(embed_node(model.store, (1, 2, 3)).data, np.zeros(400))


def test_equal_indices_equal_embeddings():
    model = random_model()
    a = embed_node(model.store, (2, 1, 3)).data
    b = embed_node(model.store, (2, 1, 3)).data
    np.testing.assert_array_equal(a, b)
    tree = build_tree([Token(1, "ball", "NOUN", 0, "root"), Token(2, "ball", "NOUN", 1, "root")])
    E = embed_tree(model.store, tree, model.vocab).data
    np.testing.assert_array_equal(E[0, :8], E[1, :8])
    np.testing.assert_array_equal(E[1], embed_node(model.store, model.vocab.encode(tree.tokens[1])).data)


def test_embedding_index_out_of_range():
    with pytest.raises(IndexError):
        embed_node(random_model().store, (999, 0, 0))


# -------------------------------------------------------------- child-sum cell

def test_zero_params_leaf_is_zero():
    model = random_model()
    zero_store(model.store)
    c, h = childsum_step(model.store, "tree_up", Tensor(np.zeros(16)), [])
    np.testing.assert_array_equal(c.data, 0.0)
    np.testing.assert_array_equal(h.data, 0.0)


def test_child_permutation_invariance(rng):
    store = random_model().store
    e = Tensor(rng.normal(size=16))
    kids = [(Tensor(rng.normal(size=16)), Tensor(rng.normal(size=16))) for _ in range(4)]
    c1, h1 = childsum_step(store, "tree_up", e, kids)
    c2, h2 = childsum_step(store, "tree_up", e, kids[::-1])
    np.testing.assert_allclose(c1.data, c2.data, atol=1e-12, rtol=0)
    np.testing.assert_allclose(h1.data, h2.data, atol=1e-12, rtol=0)


def test_single_child_equals_sequential_lstm(rng):
    store = random_model().store
    d = 16
    e = rng.normal(size=16)
    c_prev, h_prev = rng.normal(size=d), rng.normal(size=d)
    Wiou, Uiou, biou = (store[f"tree_up.{k}"].data for k in ("W_iou", "U_iou", "b_iou"))
    W = {"i": Wiou[:d], "o": Wiou[d:2 * d], "u": Wiou[2 * d:], "f": store["tree_up.W_f"].data}
    U = {"i": Uiou[:d], "o": Uiou[d:2 * d], "u": Uiou[2 * d:], "f": store["tree_up.U_f"].data}
    b = {"i": biou[:d], "o": biou[d:2 * d], "u": biou[2 * d:], "f": store["tree_up.b_f"].data}
    c_ref, h_ref = lstm_cell(e, h_prev, c_prev, W, U, b)
    c, h = childsum_step(store, "tree_up", Tensor(e), [(Tensor(c_prev), Tensor(h_prev))])
    np.testing.assert_allclose(c.data, c_ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(h.data, h_ref, rtol=1e-12, atol=1e-14)


def test_childsum_shape_errors():
    store = random_model().store
    with pytest.raises(ShapeError):
        childsum_step(store, "tree_up", Tensor(np.zeros(5)), [])
    with pytest.raises(ShapeError):
        childsum_step(store, "tree_up", Tensor(np.zeros(16)), [(Tensor(np.zeros(3)), Tensor(np.zeros(3)))])


# -------------------------------------------------------------- whole tree

def test_single_node_tree_is_leaf_step():
    model = random_model()
    tree = build_tree([Token(1, "ball", "NOUN", 0, "root")])
    E = embed_tree(model.store, tree, model.vocab)
    for direction in ("up", "down"):
        c, h = encode_tree(model.store, tree, E, direction)[1]
        c_ref, h_ref = childsum_step(model.store, f"tree_{direction}", E[0], [])
        np.testing.assert_allclose(h.data, h_ref.data, atol=1e-14)
        np.testing.assert_allclose(c.data, c_ref.data, atol=1e-14)


def test_chain_feeds_upward():
    model = random_model()
    tree = build_tree([Token(1, "red", "ADJ", 2, "amod"), Token(2, "ball", "NOUN", 3, "pobj"),
                       Token(3, "box", "NOUN", 0, "root")])
    E = embed_tree(model.store, tree, model.vocab)
    states = encode_tree(model.store, tree, E, "up")
    s1 = childsum_step(model.store, "tree_up", E[0], [])
    s2 = childsum_step(model.store, "tree_up", E[1], [s1])
    s3 = childsum_step(model.store, "tree_up", E[2], [s2])
    np.testing.assert_allclose(states[3][1].data, s3[1].data, atol=1e-14)


def test_directions_have_disjoint_parameters():
    model = random_model()
    up = {n for n in model.store.names() if n.startswith("tree_up.")}
    down = {n for n in model.store.names() if n.startswith("tree_down.")}
    assert len(up) == len(down) == 6
    for name in up:
        assert model.store[name] is not model.store[name.replace("tree_up", "tree_down")]


@pytest.mark.parametrize("seed", range(10))
def test_fused_matches_primitive_values_and_gradients(seed):
    rng = np.random.default_rng(seed)
    model = random_model(seed, scale=0.5)
    tree = random_tree(rng)
    weights = rng.normal(size=(len(tree), 32))

    def run(fused):
        model.store.zero_grad()
        E = embed_tree(model.store, tree, model.vocab)
        H = encode_bidirectional(model.store, tree, E, fused=fused)
        ag.sum(H * Tensor(weights)).backward()
        return H.data, {n: p.grad.copy() for n, p in model.store.items() if p.grad is not None}

    H1, g1 = run(True)
    H2, g2 = run(False)
    np.testing.assert_allclose(H1, H2, atol=1e-13)
    assert set(g1) == set(g2)
    for name in g1:
        np.testing.assert_allclose(g1[name], g2[name], atol=1e-12, err_msg=name)


def test_star_tree_leaf_relabeling():
    model = random_model()
    tokens = [Token(1, "ball", "NOUN", 0, "root")]
    tokens += [Token(i, "red", "ADJ", 1, "amod") for i in range(2, 6)]
    star = build_tree(tokens)
    relabeled = build_tree([Token(5, "ball", "NOUN", 0, "root")] +
                           [Token(i, "red", "ADJ", 5, "amod") for i in (1, 2, 3, 4)])
    h = []
    for tree in (star, relabeled):
        E = embed_tree(model.store, tree, model.vocab)
        h.append(encode_tree(model.store, tree, E, "up")[tree.root][1].data)
    np.testing.assert_allclose(h[0], h[1], atol=1e-12)


def _descendants(tree, n):
    return set(tree.node_set(n))


def _ancestors(tree, n):
    out = {n}
    while tree.parent(n):
        n = tree.parent(n)
        out.add(n)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_locality(seed):
    rng = np.random.default_rng(seed)
    model = random_model(seed)
    tree = random_tree(rng, n=8)
    E = embed_tree(model.store, tree, model.vocab).data
    target = int(rng.choice(tree.ids))
    E2 = E.copy()
    E2[tree.ids.index(target)] += 1.0
    for direction, affected in (("up", _ancestors(tree, target)), ("down", _descendants(tree, target))):
        a = encode_tree(model.store, tree, Tensor(E), direction)
        b = encode_tree(model.store, tree, Tensor(E2), direction)
        for n in tree.ids:
            same = np.array_equal(a[n][1].data, b[n][1].data)
            assert same == (n not in affected), (direction, n, target)


def test_root_state_gradient_wrt_leaf_embedding(rng):
    model = random_model(scale=0.5)
    tree = random_tree(rng, n=6)
    leaf = next(n for n in tree.ids if tree.is_leaf(n))
    E = embed_tree(model.store, tree, model.vocab).data.copy()
    r = tree.ids.index(leaf)
    for comp in range(3):
        E_t = Tensor(E, requires_grad=True)
        encode_tree(model.store, tree, E_t, "up")[tree.root][1][comp].backward()
        analytic = E_t.grad[r].copy()

        def f():
            with ag.no_grad():
                return encode_tree(model.store, tree, Tensor(E), "up")[tree.root][1].data[comp]

        numeric = finite_difference(f, E[r])
        assert relative_error(analytic, numeric).max() < 1e-3


def test_node_context():
    np.testing.assert_array_equal(node_context(Tensor([1.0]), Tensor([2.0])).data, [1.0, 2.0])
    np.testing.assert_array_equal(node_context(Tensor(np.zeros(2)), Tensor(np.zeros(2))).data, np.zeros(4))
    assert node_context(Tensor(np.ones(16)), Tensor(np.ones(16))).shape == (32,)


def test_bidirectional_is_concatenation(rng):
    model = random_model()
    tree = random_tree(rng, n=5)
    E = embed_tree(model.store, tree, model.vocab)
    H = encode_bidirectional(model.store, tree, E).data
    up = encode_tree(model.store, tree, E, "up")
    down = encode_tree(model.store, tree, E, "down")
    for i, n in enumerate(tree.ids):
        np.testing.assert_array_equal(H[i, :16], up[n][1].data)
        np.testing.assert_array_equal(H[i, 16:], down[n][1].data)
